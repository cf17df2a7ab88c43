//! TOML experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::GenerationOptions;
use crate::error::{Error, Result};
use crate::eval::Decoding;
use crate::filtering::{ConfidenceMode, DEFAULT_THRESHOLDS};
use crate::oracles::NoiseFamily;
use crate::policy::PolicyConfig;
use crate::training::{DpoConfig, SftConfig};
use crate::world::WorldConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub family: NoiseFamily,
    pub target_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            family: NoiseFamily::Random,
            target_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub temperature: f64,
    /// Pick each policy's argmax instead of sampling.
    pub greedy: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            greedy: false,
        }
    }
}

impl EvalConfig {
    pub fn decoding(&self) -> Decoding {
        if self.greedy {
            Decoding::Greedy
        } else {
            Decoding::Sample {
                temperature: self.temperature,
            }
        }
    }
}

/// Axes of a sweep. An empty axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub families: Vec<NoiseFamily>,
    pub target_rates: Vec<f64>,
    /// Under magnitude confidence `0.5` keeps every pair with a nonzero
    /// margin, so it serves as the unfiltered point of the threshold axis.
    pub thresholds: Vec<f64>,
    pub betas: Vec<f64>,
    pub dropout_rates: Vec<f64>,
}

impl Grid {
    pub fn is_empty(&self) -> bool {
        self.families.is_empty()
            && self.target_rates.is_empty()
            && self.thresholds.is_empty()
            && self.betas.is_empty()
            && self.dropout_rates.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Base seed; repeat `i` runs with seed `seed + i`.
    pub seed: u64,
    pub n_seeds: usize,
    /// Concurrent runs in a sweep.
    pub workers: usize,
    pub world: WorldConfig,
    pub policy: PolicyConfig,
    pub sft: SftConfig,
    pub dpo: DpoConfig,
    pub noise: NoiseConfig,
    pub datagen: GenerationOptions,
    pub eval: EvalConfig,
    pub filter_threshold: Option<f64>,
    pub filter_mode: ConfidenceMode,
    /// Thresholds reported by `filter-stats`.
    pub filter_thresholds: Vec<f64>,
    pub grid: Grid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            n_seeds: 5,
            workers: 1,
            world: WorldConfig::default(),
            policy: PolicyConfig::default(),
            sft: SftConfig::default(),
            dpo: DpoConfig::default(),
            noise: NoiseConfig::default(),
            datagen: GenerationOptions::default(),
            eval: EvalConfig::default(),
            filter_threshold: None,
            filter_mode: ConfidenceMode::Magnitude,
            filter_thresholds: DEFAULT_THRESHOLDS.to_vec(),
            grid: Grid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        // Every field is a plain value or table, which TOML always represents.
        toml::to_string_pretty(self).expect("config is TOML-representable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n_seeds < 2 {
            return Err(Error::config("n_seeds must be at least 2 for confidence intervals"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be positive"));
        }
        self.world.validate()?;
        self.policy.validate()?;
        self.sft.validate()?;
        self.dpo.validate()?;
        self.datagen.validate()?;
        self.eval.decoding().validate()?;
        check_rate(self.noise.target_rate)?;
        if let Some(t) = self.filter_threshold {
            check_threshold(t)?;
        }
        for &t in &self.filter_thresholds {
            check_threshold(t)?;
        }
        for &r in &self.grid.target_rates {
            check_rate(r)?;
        }
        for &t in &self.grid.thresholds {
            check_threshold(t)?;
        }
        for &b in &self.grid.betas {
            DpoConfig { beta: b, ..self.dpo.clone() }.validate()?;
        }
        for &d in &self.grid.dropout_rates {
            DpoConfig {
                dropout_rate: d,
                ..self.dpo.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    /// Seed of repeat `index`.
    pub fn run_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }

    /// Identifies everything a single run's outcome depends on, apart from its seed.
    pub fn fingerprint(&self) -> String {
        let cell = CellKey {
            schema_version: self.schema_version,
            world: &self.world,
            policy: &self.policy,
            sft: &self.sft,
            dpo: DpoKey::from(&self.dpo),
            noise: &self.noise,
            datagen: &self.datagen,
            eval: &self.eval,
            filter_threshold: self.filter_threshold,
            filter_mode: self.filter_mode,
        };
        digest(&cell)
    }

    /// Identifies the world and reference policy shared by every cell of a sweep.
    pub fn base_fingerprint(&self) -> String {
        digest(&(&self.world, &self.policy, &self.sft))
    }
}

/// DPO settings without the seed, which each run derives on its own.
#[derive(Serialize)]
struct DpoKey {
    beta: f64,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    dropout_rate: f64,
}

impl From<&DpoConfig> for DpoKey {
    fn from(d: &DpoConfig) -> Self {
        Self {
            beta: d.beta,
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            dropout_rate: d.dropout_rate,
        }
    }
}

#[derive(Serialize)]
struct CellKey<'a> {
    schema_version: u32,
    world: &'a WorldConfig,
    policy: &'a PolicyConfig,
    sft: &'a SftConfig,
    dpo: DpoKey,
    noise: &'a NoiseConfig,
    datagen: &'a GenerationOptions,
    eval: &'a EvalConfig,
    filter_threshold: Option<f64>,
    filter_mode: ConfidenceMode,
}

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
fn digest<T: Serialize>(value: &T) -> String {
    // Struct fields serialize in declaration order, so the encoding is canonical.
    let bytes = serde_json::to_vec(value).expect("plain data serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

fn check_rate(r: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&r) {
        return Err(Error::config(format!("target_rate must lie in [0, 0.5], got {r}")));
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.5..1.0).contains(&t) {
        return Err(Error::config(format!("filter threshold must lie in [0.5, 1), got {t}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "seed = 7\n[noise]\nfamily = \"gaussian\"\ntarget_rate = 0.2\n[dpo]\nbeta = 2.0\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.noise.family, NoiseFamily::Gaussian);
        assert_eq!(c.dpo.beta, 2.0);
        assert_eq!(c.dpo.epochs, 50);
        assert_eq!(c.n_seeds, 5);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "n_seeds = 1",
            "schema_version = 9",
            "[noise]\nfamily = \"random\"\ntarget_rate = 0.6",
            "filter_threshold = 0.4",
            "[grid]\nbetas = [0.0]",
            "unknown_key = 1",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn fingerprint_ignores_seeds_and_sweep_bookkeeping() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 99;
        b.n_seeds = 9;
        b.workers = 4;
        b.dpo.seed = 5;
        b.grid.betas = vec![0.1];
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.dpo.beta = 0.1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.base_fingerprint(), b.base_fingerprint());
        b.world.seed = 1;
        assert_ne!(a.base_fingerprint(), b.base_fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }
}
