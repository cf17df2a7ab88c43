//! Varies the KL strength and dropout rate at a fixed noise level and ranks
//! the settings by mean win rate.
//!
//! cargo run --example regularization_sweep

use prefnoise::harness::{self, ExperimentConfig, XVar};
use prefnoise::oracles::NoiseFamily;

fn main() -> prefnoise::Result<()> {
    let mut config = ExperimentConfig::default();
    config.n_seeds = 5;
    config.noise.family = NoiseFamily::Gaussian;
    config.noise.target_rate = 0.3;

    let mut records = Vec::new();
    for beta in [0.1, 0.5, 1.0] {
        for dropout in [0.0, 0.3] {
            let mut cell = config.clone();
            cell.dpo.beta = beta;
            cell.dpo.dropout_rate = dropout;
            records.extend(harness::run_experiment(&cell)?);
        }
    }
    let rows = harness::emit_plot_data(&records, XVar::Beta)?;
    for row in &rows {
        println!(
            "beta {:<4} [{}]  win rate {:.3} ± {:.3}",
            row.x_value,
            row.series,
            row.mean_win_rate,
            row.ci_half_width.unwrap_or(f64::NAN)
        );
    }
    let best = rows.iter().max_by(|a, b| a.mean_win_rate.total_cmp(&b.mean_win_rate)).expect("non-empty");
    println!("best: beta {} [{}]", best.x_value, best.series);
    Ok(())
}
