//! Builds the default synthetic world, fits the reference policy and prints
//! what both look like.
//!
//! cargo run --example build_world

use prefnoise::policy::PolicyConfig;
use prefnoise::training::{self, SftConfig};
use prefnoise::world::{self, WorldConfig};

fn main() -> prefnoise::Result<()> {
    let world = world::build_world(&WorldConfig::default())?;
    let summary = world.summary();
    println!(
        "world: d={} train={} test={} k={}",
        summary.embedding_dim, summary.n_train_prompts, summary.n_test_prompts, summary.k_candidates
    );
    for (level, value) in &summary.reward_quantiles {
        println!("  reward q{level:<4} {value:+.3}");
    }
    println!("  rms pair margin {:.3}", summary.pair_margin_std);

    let sft = training::train_sft(&world, &PolicyConfig::default(), &SftConfig::default())?;
    println!(
        "reference policy: {} params, cross-entropy {:.4}, mean gold reward {:+.3}",
        sft.params.len(),
        sft.final_cross_entropy,
        sft.mean_gold_reward
    );

    let x = world.test_prompts()[0];
    let probs = sft.params.tempered_probs(&world, x, 1.0)?;
    println!("prompt {x}: reward vs policy probability");
    for (r, p) in world.rewards(x).iter().zip(&probs) {
        println!("  {r:+.3}  {p:.3}");
    }
    Ok(())
}
