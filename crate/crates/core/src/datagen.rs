//! Generation pairs and labeled preference datasets.
//!
//! For each prompt the reference policy draws `n_samples` candidates at a
//! sampling temperature; the draws are shuffled and grouped into adjacent
//! pairs, which a noise oracle then labels.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::oracles::{self, NoiseSpec, Preference};
use crate::policy::PolicyParams;
use crate::rng;
use crate::world::World;

/// Redraw budget for a pair whose two members coincide.
pub const MAX_REDRAWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPair {
    pub prompt: usize,
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationOptions {
    pub temperature: f64,
    pub n_samples: usize,
    pub n_pairs: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            n_samples: 8,
            n_pairs: 4,
        }
    }
}

impl GenerationOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || 2 * self.n_pairs > self.n_samples {
            return Err(Error::usage(format!(
                "need 0 < n_pairs <= n_samples / 2, got n_pairs = {}, n_samples = {}",
                self.n_pairs, self.n_samples
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::usage("sampling temperature must be positive"));
        }
        Ok(())
    }
}

/// Output of [`sample_generation_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPairs {
    pub pairs: Vec<GenerationPair>,
    /// Pairs abandoned after exhausting the redraw budget.
    pub dropped: usize,
    pub sft_id: String,
    pub seed: u64,
}

impl GenerationPairs {
    /// `(r*(a), r*(b))` for every pair, the input of oracle calibration.
    pub fn reward_pairs(&self, world: &World) -> Vec<(f64, f64)> {
        self.pairs
            .iter()
            .map(|p| {
                let r = world.rewards(p.prompt);
                (r[p.a], r[p.b])
            })
            .collect()
    }
}

/// Samples candidate pairs from the reference policy for every prompt in `prompts`.
///
/// Prompt `x` draws from its own stream derived from `(seed, x)`, so the result
/// does not depend on the order or subset of prompts processed around it.
pub fn sample_generation_pairs(
    world: &World,
    sft: &PolicyParams,
    prompts: &[usize],
    options: &GenerationOptions,
    seed: u64,
) -> Result<GenerationPairs> {
    options.validate()?;
    let mut pairs = Vec::with_capacity(prompts.len() * options.n_pairs);
    let mut dropped = 0;
    for &x in prompts {
        let probs = sft.tempered_probs(world, x, options.temperature)?;
        let mut rng = rng::indexed_rng(seed, x as u64);
        let draw = |rng: &mut rng::Rng| math::sample_index(&probs, rng.random::<f64>());
        let mut samples: Vec<usize> = (0..options.n_samples).map(|_| draw(&mut rng)).collect();
        samples.shuffle(&mut rng);
        for slot in 0..options.n_pairs {
            let (mut a, mut b) = (samples[2 * slot], samples[2 * slot + 1]);
            let mut attempts = 0;
            while a == b && attempts < MAX_REDRAWS {
                a = draw(&mut rng);
                b = draw(&mut rng);
                attempts += 1;
            }
            if a == b {
                dropped += 1;
            } else {
                pairs.push(GenerationPair { prompt: x, a, b });
            }
        }
    }
    if dropped > 0 {
        log::info!("generation: dropped {dropped} duplicate-member pairs of {}", prompts.len() * options.n_pairs);
    }
    Ok(GenerationPairs {
        pairs,
        dropped,
        sft_id: sft.fingerprint(),
        seed,
    })
}

/// One oracle-labeled pair. `gold_margin` and `is_noisy` are evaluation-only
/// bookkeeping; training reads only `prompt`, `winner` and `loser`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledPair {
    pub prompt: usize,
    pub winner: usize,
    pub loser: usize,
    /// `r*(winner) − r*(loser)`.
    pub gold_margin: f64,
    /// The label contradicts the gold order (`gold_margin < 0`).
    pub is_noisy: bool,
}

impl LabeledPair {
    pub fn from_margin(prompt: usize, winner: usize, loser: usize, gold_margin: f64) -> Self {
        Self {
            prompt,
            winner,
            loser,
            gold_margin,
            is_noisy: gold_margin < 0.0,
        }
    }

    pub fn from_world(world: &World, prompt: usize, winner: usize, loser: usize) -> Self {
        let r = world.rewards(prompt);
        Self::from_margin(prompt, winner, loser, r[winner] - r[loser])
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.winner == self.loser {
            return Err("winner and loser must differ".into());
        }
        if !self.gold_margin.is_finite() {
            return Err("gold_margin must be finite".into());
        }
        if self.is_noisy != (self.gold_margin < 0.0) {
            return Err("is_noisy must equal gold_margin < 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub world_seed: u64,
    pub sft_id: String,
    pub generation_seed: u64,
    pub noise: NoiseSpec,
    pub label_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub pairs: Vec<LabeledPair>,
    /// Absent for datasets read back from disk or built from external scores.
    pub provenance: Option<Provenance>,
}

impl PreferenceDataset {
    pub fn new(pairs: Vec<LabeledPair>) -> Self {
        Self { pairs, provenance: None }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Writes one JSON object per line: `{prompt, winner, loser, gold_margin, is_noisy}`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for pair in &self.pairs {
            serde_json::to_writer(&mut out, pair)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            let pair: LabeledPair = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            pair.check().map_err(parse_err)?;
            pairs.push(pair);
        }
        Ok(Self::new(pairs))
    }
}

/// Labels every generation pair with the oracle `spec`.
///
/// Pair `i` uses its own stream derived from `(seed, i)`.
pub fn label_dataset(
    generation: &GenerationPairs,
    world: &World,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<PreferenceDataset> {
    spec.validate()?;
    let pairs = generation
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let r = world.rewards(p.prompt);
            let mut rng = rng::indexed_rng(seed, i as u64);
            let (winner, loser) = match oracles::label_pair(spec, r[p.a], r[p.b], &mut rng) {
                Preference::A => (p.a, p.b),
                Preference::B => (p.b, p.a),
            };
            LabeledPair::from_world(world, p.prompt, winner, loser)
        })
        .collect();
    Ok(PreferenceDataset {
        pairs,
        provenance: Some(Provenance {
            world_seed: world.config().seed,
            sft_id: generation.sft_id.clone(),
            generation_seed: generation.seed,
            noise: *spec,
            label_seed: seed,
        }),
    })
}

/// Fraction of pairs whose label disagrees with the gold order.
pub fn measure_noise_rate(dataset: &PreferenceDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::usage("cannot measure the noise rate of an empty dataset"));
    }
    Ok(dataset.pairs.iter().filter(|p| p.is_noisy).count() as f64 / dataset.len() as f64)
}
