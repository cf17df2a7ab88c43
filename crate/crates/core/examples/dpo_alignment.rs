//! Aligns the reference policy with DPO on clean and on noisy labels and
//! compares both against the reference.
//!
//! cargo run --example dpo_alignment

use prefnoise::datagen::{self, GenerationOptions};
use prefnoise::eval::{self, Decoding};
use prefnoise::oracles::{self, NoiseFamily, NoiseSpec};
use prefnoise::policy::PolicyConfig;
use prefnoise::training::{self, DpoConfig, SftConfig};
use prefnoise::world::{self, WorldConfig};

fn main() -> prefnoise::Result<()> {
    let world = world::build_world(&WorldConfig::default())?;
    let sft = training::train_sft(&world, &PolicyConfig::default(), &SftConfig::default())?;
    let generation =
        datagen::sample_generation_pairs(&world, &sft.params, world.train_prompts(), &GenerationOptions::default(), 21)?;
    let cal = oracles::calibrate_report(NoiseFamily::Random, 0.3, &generation.reward_pairs(&world))?;

    let oracles = [("clean", NoiseSpec::CLEAN), ("random 0.3", NoiseFamily::Random.spec(cal.hyperparameter)?)];
    for (name, spec) in oracles {
        let dataset = datagen::label_dataset(&generation, &world, &spec, 22)?;
        let config = DpoConfig { seed: 23, ..DpoConfig::default() };
        let aligned = training::train_dpo(&world, &sft.params, &dataset, &config)?;
        let last = aligned.log.last().expect("at least one epoch");
        let wr = eval::win_rate(&world, &aligned.params, &sft.params, world.test_prompts(), Decoding::default(), 24)?;
        println!(
            "{name:<11} noise {:.3}  final loss {:.4}  KL {:.4}  win rate {:.3} ({}W {}T {}L)",
            datagen::measure_noise_rate(&dataset)?,
            last.loss,
            last.kl,
            wr.win_rate,
            wr.wins,
            wr.ties,
            wr.losses
        );
    }
    Ok(())
}
