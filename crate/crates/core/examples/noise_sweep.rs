//! Sweeps noise family and rate over a few seeds and prints the tidy table a
//! plot would be drawn from.
//!
//! cargo run --example noise_sweep

use prefnoise::harness::{self, ExperimentConfig, XVar};
use prefnoise::oracles::NoiseFamily;

fn main() -> prefnoise::Result<()> {
    let mut config = ExperimentConfig::default();
    config.n_seeds = 5;
    config.grid.families = NoiseFamily::ALL.to_vec();
    config.grid.target_rates = vec![0.0, 0.2, 0.4];

    let dir = std::env::temp_dir().join("prefnoise_noise_sweep");
    std::fs::create_dir_all(&dir).map_err(|e| prefnoise::Error::io(&dir, e))?;
    let records_path = dir.join("records.jsonl");
    let _ = std::fs::remove_file(&records_path);
    let summary = harness::sweep(&config, &records_path)?;
    println!("{} cells, {} runs, {} failed", summary.cells, summary.total_runs, summary.failed);

    let records = harness::run::read_records(&records_path)?;
    for row in harness::emit_plot_data(&records, XVar::TargetRate)? {
        println!(
            "{:<11} rate {:.1}  win rate {:.3} ± {:.3}  (n={})",
            row.noise_family.name(),
            row.x_value,
            row.mean_win_rate,
            row.ci_half_width.unwrap_or(f64::NAN),
            row.n_seeds
        );
    }
    Ok(())
}
