//! Calibrates each noisy oracle to a common disagreement rate on one set of
//! generation pairs, then checks the realized rate by labeling.
//!
//! cargo run --example oracle_calibration -- 0.3

use prefnoise::datagen::{self, GenerationOptions};
use prefnoise::oracles::{self, NoiseFamily};
use prefnoise::policy::PolicyConfig;
use prefnoise::training::{self, SftConfig};
use prefnoise::world::{self, WorldConfig};

fn main() -> prefnoise::Result<()> {
    let target: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let world = world::build_world(&WorldConfig::default())?;
    let sft = training::train_sft(&world, &PolicyConfig::default(), &SftConfig::default())?;
    let generation =
        datagen::sample_generation_pairs(&world, &sft.params, world.train_prompts(), &GenerationOptions::default(), 7)?;
    let rewards = generation.reward_pairs(&world);
    println!("{} pairs, target disagreement {target}", rewards.len());
    println!("{:<11} {:>14} {:>9} {:>9}", "family", "hyperparameter", "expected", "labeled");
    for family in NoiseFamily::ALL {
        let cal = oracles::calibrate_report(family, target, &rewards)?;
        let spec = family.spec(cal.hyperparameter)?;
        let labeled = datagen::label_dataset(&generation, &world, &spec, 11)?;
        println!(
            "{:<11} {:>14.2} {:>9.4} {:>9.4}",
            family.name(),
            cal.hyperparameter,
            cal.expected_noise_rate,
            datagen::measure_noise_rate(&labeled)?
        );
    }
    Ok(())
}
