//! The synthetic environment: prompts, candidate responses and the gold reward.
//!
//! Each prompt `x` has an embedding `u_x` and a fixed set of `k` candidate
//! responses with embeddings `v_{x,y}`. The gold reward is the bilinear form
//! `u_xᵀ M v_{x,y}` for a seeded random matrix `M`, standardized to zero mean
//! and unit variance over every (prompt, candidate) cell.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub embedding_dim: usize,
    pub n_train_prompts: usize,
    pub n_test_prompts: usize,
    pub k_candidates: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            n_train_prompts: 256,
            n_test_prompts: 128,
            k_candidates: 16,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.n_train_prompts == 0 || self.n_test_prompts == 0 {
            return Err(Error::config(
                "world dimensions and prompt counts must be positive",
            ));
        }
        if self.k_candidates < 2 {
            return Err(Error::config(format!(
                "k_candidates must be at least 2, got {}",
                self.k_candidates
            )));
        }
        Ok(())
    }

    pub fn n_prompts(&self) -> usize {
        self.n_train_prompts + self.n_test_prompts
    }
}

/// Immutable synthetic world. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    config: WorldConfig,
    prompt_embeddings: Vec<f64>,
    candidate_embeddings: Vec<f64>,
    gold_reward: Vec<f64>,
    train_prompts: Vec<usize>,
    test_prompts: Vec<usize>,
}

/// Builds the world deterministically from its configuration.
pub fn build_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let d = config.embedding_dim;
    let k = config.k_candidates;
    let n = config.n_prompts();
    let scale = 1.0 / (d as f64).sqrt();

    let mut rng = rng::rng_from_seed(rng::stream_seed(config.seed, "world"));
    let mut normal = |count: usize, s: f64| -> Vec<f64> {
        (0..count)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * s
            })
            .collect()
    };
    let interaction = normal(d * d, 1.0);
    let prompt_embeddings = normal(n * d, scale);
    let candidate_embeddings = normal(n * k * d, scale);

    let mut raw = Vec::with_capacity(n * k);
    for x in 0..n {
        let u = &prompt_embeddings[x * d..(x + 1) * d];
        // uᵀ M, then dot with each candidate.
        let um: Vec<f64> = (0..d)
            .map(|j| (0..d).map(|i| u[i] * interaction[i * d + j]).sum())
            .collect();
        for y in 0..k {
            let v = &candidate_embeddings[(x * k + y) * d..(x * k + y + 1) * d];
            raw.push(um.iter().zip(v).map(|(a, b)| a * b).sum::<f64>());
        }
    }

    let gold_reward = standardize(&raw);

    Ok(World {
        config: config.clone(),
        prompt_embeddings,
        candidate_embeddings,
        gold_reward,
        train_prompts: (0..config.n_train_prompts).collect(),
        test_prompts: (config.n_train_prompts..n).collect(),
    })
}

fn standardize(raw: &[f64]) -> Vec<f64> {
    let m = math::mean(raw);
    let centered: Vec<f64> = raw.iter().map(|r| r - m).collect();
    // Population std over all cells.
    let sd = (centered.iter().map(|c| c * c).sum::<f64>() / raw.len() as f64).sqrt();
    let scaled: Vec<f64> = centered.iter().map(|c| c / sd).collect();
    // A second centering pass removes the residual rounding in the mean.
    let m2 = math::mean(&scaled);
    scaled.iter().map(|r| r - m2).collect()
}

impl World {
    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn k_candidates(&self) -> usize {
        self.config.k_candidates
    }

    pub fn n_prompts(&self) -> usize {
        self.config.n_prompts()
    }

    pub fn train_prompts(&self) -> &[usize] {
        &self.train_prompts
    }

    pub fn test_prompts(&self) -> &[usize] {
        &self.test_prompts
    }

    pub fn prompt_embedding(&self, x: usize) -> &[f64] {
        let d = self.config.embedding_dim;
        &self.prompt_embeddings[x * d..(x + 1) * d]
    }

    pub fn candidate_embedding(&self, x: usize, y: usize) -> &[f64] {
        let d = self.config.embedding_dim;
        let k = self.config.k_candidates;
        let start = (x * k + y) * d;
        &self.candidate_embeddings[start..start + d]
    }

    /// Gold rewards of every candidate of prompt `x`. Panics when out of range.
    pub fn rewards(&self, x: usize) -> &[f64] {
        let k = self.config.k_candidates;
        &self.gold_reward[x * k..(x + 1) * k]
    }

    /// All gold reward cells in prompt-major order.
    pub fn reward_table(&self) -> &[f64] {
        &self.gold_reward
    }

    /// Checked gold reward lookup.
    pub fn gold_reward(&self, x: usize, y: usize) -> Result<f64> {
        self.check_prompt(x)?;
        if y >= self.config.k_candidates {
            return Err(Error::usage(format!(
                "candidate index {y} out of range (k = {})",
                self.config.k_candidates
            )));
        }
        Ok(self.rewards(x)[y])
    }

    pub fn check_prompt(&self, x: usize) -> Result<()> {
        if x >= self.n_prompts() {
            return Err(Error::usage(format!(
                "prompt index {x} out of range ({} prompts)",
                self.n_prompts()
            )));
        }
        Ok(())
    }

    /// Summary for run manifests.
    pub fn summary(&self) -> WorldSummary {
        let mut sorted = self.gold_reward.clone();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize];
        let k = self.k_candidates();
        let mut diffs = Vec::new();
        for x in 0..self.n_prompts() {
            let r = self.rewards(x);
            for a in 0..k {
                for b in a + 1..k {
                    diffs.push(r[a] - r[b]);
                }
            }
        }
        let pair_margin_std =
            (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
        WorldSummary {
            embedding_dim: self.config.embedding_dim,
            n_train_prompts: self.config.n_train_prompts,
            n_test_prompts: self.config.n_test_prompts,
            k_candidates: k,
            seed: self.config.seed,
            reward_quantiles: [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0].map(|p| (p, q(p))).to_vec(),
            pair_margin_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub embedding_dim: usize,
    pub n_train_prompts: usize,
    pub n_test_prompts: usize,
    pub k_candidates: usize,
    pub seed: u64,
    /// `(level, value)` quantiles of the standardized gold reward.
    pub reward_quantiles: Vec<(f64, f64)>,
    /// RMS of within-prompt reward differences over all candidate pairs.
    pub pair_margin_std: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(seed: u64) -> WorldConfig {
        WorldConfig {
            embedding_dim: 4,
            n_train_prompts: 6,
            n_test_prompts: 3,
            k_candidates: 5,
            seed,
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        let mut c = small(0);
        c.k_candidates = 1;
        assert!(matches!(build_world(&c), Err(Error::Config(_))));
        let mut c = small(0);
        c.embedding_dim = 0;
        assert!(build_world(&c).is_err());
        let mut c = small(0);
        c.n_test_prompts = 0;
        assert!(build_world(&c).is_err());
    }

    #[test]
    fn same_seed_same_world() {
        assert_eq!(build_world(&small(7)).unwrap(), build_world(&small(7)).unwrap());
        assert_ne!(
            build_world(&small(7)).unwrap().reward_table(),
            build_world(&small(8)).unwrap().reward_table()
        );
    }

    #[test]
    fn gold_reward_lookup() {
        let w = build_world(&small(1)).unwrap();
        assert_eq!(w.gold_reward(2, 3).unwrap(), w.gold_reward(2, 3).unwrap());
        assert!(matches!(w.gold_reward(9, 0), Err(Error::Usage(_))));
        assert!(matches!(w.gold_reward(0, 5), Err(Error::Usage(_))));
        let r = w.rewards(4);
        let best = math::argmax(r);
        assert!(r.iter().all(|&v| v <= r[best]));
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let w = build_world(&small(3)).unwrap();
        let mut all: Vec<usize> = w.train_prompts().iter().chain(w.test_prompts()).copied().collect();
        all.sort();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn default_world_margin_scale() {
        // Brute force over every within-prompt pair of the default world.
        let w = build_world(&WorldConfig::default()).unwrap();
        assert_eq!(w.reward_table().len(), 384 * 16);
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for x in 0..w.n_prompts() {
            let r = w.rewards(x);
            for a in 0..16 {
                for b in 0..16 {
                    if a != b {
                        sum_sq += (r[a] - r[b]).powi(2);
                        count += 1;
                    }
                }
            }
        }
        let sd = (sum_sq / count as f64).sqrt();
        assert!((sd - 2f64.sqrt()).abs() < 0.1, "pair margin std {sd}");
        let summary = w.summary();
        assert!((summary.pair_margin_std - sd).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gold_reward_is_standardized(seed in any::<u64>(), d in 1usize..6, k in 2usize..7) {
            let c = WorldConfig { embedding_dim: d, n_train_prompts: 5, n_test_prompts: 2, k_candidates: k, seed };
            let w = build_world(&c).unwrap();
            let r = w.reward_table();
            let m = math::mean(r);
            let sd = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-9);
        }
    }
}
