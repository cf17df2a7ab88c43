//! Shows how confidence filtering trades data for label quality under each
//! noise family at a matched noise rate.
//!
//! cargo run --example confidence_filtering

use prefnoise::datagen::{self, GenerationOptions};
use prefnoise::filtering::{self, DEFAULT_THRESHOLDS};
use prefnoise::oracles::{self, NoiseFamily};
use prefnoise::policy::PolicyConfig;
use prefnoise::training::{self, SftConfig};
use prefnoise::world::{self, WorldConfig};

fn main() -> prefnoise::Result<()> {
    let world = world::build_world(&WorldConfig::default())?;
    let sft = training::train_sft(&world, &PolicyConfig::default(), &SftConfig::default())?;
    let generation =
        datagen::sample_generation_pairs(&world, &sft.params, world.train_prompts(), &GenerationOptions::default(), 5)?;
    let rewards = generation.reward_pairs(&world);
    for family in NoiseFamily::ALL {
        let cal = oracles::calibrate_report(family, 0.3, &rewards)?;
        let dataset = datagen::label_dataset(&generation, &world, &family.spec(cal.hyperparameter)?, 6)?;
        println!("{family}:");
        println!("  {:>9} {:>6} {:>8} {:>8}", "threshold", "kept", "noise", "filtered");
        for r in filtering::retention_stats(&dataset, &DEFAULT_THRESHOLDS)? {
            let after = r.noise_after.map_or("-".to_string(), |n| format!("{n:.3}"));
            println!("  {:>9.1} {:>6.3} {:>8.3} {:>8}", r.threshold, r.kept_fraction, r.noise_before, after);
        }
    }
    Ok(())
}
