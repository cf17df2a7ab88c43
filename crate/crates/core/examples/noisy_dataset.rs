//! Generates one noisy preference dataset and writes it as JSON lines.
//!
//! cargo run --example noisy_dataset -- /tmp/pairs.jsonl

use std::path::PathBuf;

use prefnoise::datagen::{self, GenerationOptions};
use prefnoise::oracles::{self, NoiseFamily};
use prefnoise::policy::PolicyConfig;
use prefnoise::training::{self, SftConfig};
use prefnoise::world::{self, WorldConfig};

fn main() -> prefnoise::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("prefnoise_pairs.jsonl"));
    let world = world::build_world(&WorldConfig::default())?;
    let sft = training::train_sft(&world, &PolicyConfig::default(), &SftConfig::default())?;
    let generation =
        datagen::sample_generation_pairs(&world, &sft.params, world.train_prompts(), &GenerationOptions::default(), 3)?;
    let cal = oracles::calibrate_report(NoiseFamily::Stochastic, 0.2, &generation.reward_pairs(&world))?;
    let dataset = datagen::label_dataset(&generation, &world, &NoiseFamily::Stochastic.spec(cal.hyperparameter)?, 4)?;

    println!(
        "{} pairs ({} dropped as duplicates), gamma {:.2}, noise rate {:.3}",
        dataset.len(),
        generation.dropped,
        cal.hyperparameter,
        datagen::measure_noise_rate(&dataset)?
    );
    for p in dataset.pairs.iter().take(5) {
        println!("  {p:?}");
    }
    dataset.write_jsonl(&out)?;
    let back = datagen::PreferenceDataset::read_jsonl(&out)?;
    assert_eq!(back.len(), dataset.len());
    println!("wrote {}", out.display());
    Ok(())
}
