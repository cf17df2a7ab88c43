//! Audits an external file of scored, labeled pairs: how often labels
//! disagree with the scores and what confidence filtering would keep.
//!
//! cargo run --example external_audit -- pairs.jsonl
//!
//! Without an argument a small synthetic file is written and audited.

use std::io::Write;
use std::path::PathBuf;

use prefnoise::filtering::DEFAULT_THRESHOLDS;
use prefnoise::harness::external;
use prefnoise::oracles::{self, NoiseFamily};
use rand::{Rng, SeedableRng};

fn sample_file() -> prefnoise::Result<PathBuf> {
    let path = std::env::temp_dir().join("prefnoise_external.jsonl");
    let mut f = std::fs::File::create(&path).map_err(|e| prefnoise::Error::io(&path, e))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for i in 0..500 {
        let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        // Labels follow the scores through a logistic link.
        let p_a = 1.0 / (1.0 + (b - a).exp());
        let label = if rng.random::<f64>() < p_a { "a" } else { "b" };
        writeln!(f, "{{\"id\": {i}, \"score_a\": {a:.4}, \"score_b\": {b:.4}, \"label\": \"{label}\"}}")
            .map_err(|e| prefnoise::Error::io(&path, e))?;
    }
    Ok(path)
}

fn main() -> prefnoise::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => sample_file()?,
    };
    let pairs = external::ingest_external(&path)?;
    let report = external::ingest_report(&pairs, &DEFAULT_THRESHOLDS)?;
    println!(
        "{}: {} pairs, {} labeled, disagreement {}",
        path.display(),
        report.n_pairs,
        report.n_labeled,
        report.disagreement_rate.map_or("n/a".to_string(), |d| format!("{d:.3}"))
    );
    for r in &report.retention {
        let after = r.noise_after.map_or("-".to_string(), |n| format!("{n:.3}"));
        println!("  t={:.1} keeps {:.3}, disagreement after filtering {after}", r.threshold, r.kept_fraction);
    }
    if let Some(rate) = report.disagreement_rate {
        let scores = external::score_pairs(&pairs);
        for family in NoiseFamily::ALL {
            let cal = oracles::calibrate_report(family, rate, &scores)?;
            println!("  {family} oracle matching this rate: hyperparameter {:.2}", cal.hyperparameter);
        }
    }
    Ok(())
}
