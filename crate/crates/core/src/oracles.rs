//! Noisy preference oracles and their calibration.
//!
//! Three oracle families label a response pair `(a, b)` from gold rewards:
//!
//! * **Random** flips the gold order with a fixed probability `n`.
//! * **Stochastic** (Boltzmann-rational) prefers `a` with probability
//!   `σ((r_a − r_b) / γ)`.
//! * **Gaussian** compares corrupted rewards `r + ε`, `ε ~ N(μ, δ²)` drawn
//!   independently per response; the location `μ` cancels in the difference,
//!   so labels only depend on `Δr + ε_a − ε_b` with `ε_a − ε_b ~ N(0, 2δ²)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{normal_cdf, sigmoid};

/// Default grid step of the calibration scan.
pub const CALIBRATION_STEP: f64 = 0.01;

/// Largest hyperparameter the calibration scan will try. A finite temperature
/// or deviation never reaches a 50% noise rate exactly, so targets at the 0.5
/// limit saturate here.
pub const CALIBRATION_CEILING: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Random,
    Stochastic,
    Gaussian,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 3] = [Self::Random, Self::Stochastic, Self::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Stochastic => "stochastic",
            Self::Gaussian => "gaussian",
        }
    }

    /// The oracle of this family with hyperparameter `value`.
    pub fn spec(self, value: f64) -> Result<NoiseSpec> {
        let spec = match self {
            Self::Random => NoiseSpec::Random { n: value },
            Self::Stochastic => NoiseSpec::Stochastic { gamma: value },
            Self::Gaussian => NoiseSpec::Gaussian { delta: value },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl std::fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "stochastic" => Ok(Self::Stochastic),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::config(format!("unknown noise family `{other}`"))),
        }
    }
}

/// A concrete oracle: family plus hyperparameter. Serializes as `{family, value}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseSpecRepr", into = "NoiseSpecRepr")]
pub enum NoiseSpec {
    Random { n: f64 },
    Stochastic { gamma: f64 },
    Gaussian { delta: f64 },
}

#[derive(Serialize, Deserialize)]
struct NoiseSpecRepr {
    family: NoiseFamily,
    value: f64,
}

impl TryFrom<NoiseSpecRepr> for NoiseSpec {
    type Error = Error;

    fn try_from(r: NoiseSpecRepr) -> Result<Self> {
        r.family.spec(r.value)
    }
}

impl From<NoiseSpec> for NoiseSpecRepr {
    fn from(s: NoiseSpec) -> Self {
        Self {
            family: s.family(),
            value: s.value(),
        }
    }
}

impl NoiseSpec {
    /// The noise-free oracle.
    pub const CLEAN: NoiseSpec = NoiseSpec::Random { n: 0.0 };

    pub fn family(&self) -> NoiseFamily {
        match self {
            Self::Random { .. } => NoiseFamily::Random,
            Self::Stochastic { .. } => NoiseFamily::Stochastic,
            Self::Gaussian { .. } => NoiseFamily::Gaussian,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Self::Random { n } => n,
            Self::Stochastic { gamma } => gamma,
            Self::Gaussian { delta } => delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.value();
        match self {
            Self::Random { .. } if !(0.0..=0.5).contains(&v) => Err(Error::config(format!(
                "random flip probability must lie in [0, 0.5], got {v}"
            ))),
            Self::Stochastic { .. } | Self::Gaussian { .. } if !(v >= 0.0 && v.is_finite()) => {
                Err(Error::config(format!(
                    "{} hyperparameter must be a non-negative real, got {v}",
                    self.family()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Which member of the pair the oracle prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preference {
    A,
    B,
}

impl Preference {
    fn from_a_wins(a_wins: bool) -> Self {
        if a_wins {
            Self::A
        } else {
            Self::B
        }
    }
}

/// Labels a pair with gold rewards `r_a`, `r_b`.
///
/// Exact ties are broken by a fair coin for every family.
pub fn label_pair<R: Rng + ?Sized>(spec: &NoiseSpec, r_a: f64, r_b: f64, rng: &mut R) -> Preference {
    let diff = r_a - r_b;
    if diff == 0.0 {
        return Preference::from_a_wins(rng.random::<bool>());
    }
    let gold_a = diff > 0.0;
    let a_wins = match *spec {
        NoiseSpec::Random { n } => {
            let flip = rng.random::<f64>() < n;
            gold_a != flip
        }
        NoiseSpec::Stochastic { gamma } => {
            if gamma == 0.0 {
                gold_a
            } else {
                rng.random::<f64>() < sigmoid(diff / gamma)
            }
        }
        NoiseSpec::Gaussian { delta } => {
            if delta == 0.0 {
                gold_a
            } else {
                let z: f64 = StandardNormal.sample(rng);
                diff + std::f64::consts::SQRT_2 * delta * z > 0.0
            }
        }
    };
    Preference::from_a_wins(a_wins)
}

/// Probability that the oracle's label disagrees with the gold order.
pub fn flip_probability(spec: &NoiseSpec, r_a: f64, r_b: f64) -> f64 {
    let margin = (r_a - r_b).abs();
    match *spec {
        NoiseSpec::Random { n } => n,
        _ if margin == 0.0 => 0.5,
        NoiseSpec::Stochastic { gamma } => {
            if gamma == 0.0 {
                0.0
            } else {
                sigmoid(-margin / gamma)
            }
        }
        NoiseSpec::Gaussian { delta } => {
            if delta == 0.0 {
                0.0
            } else {
                normal_cdf(-margin / (std::f64::consts::SQRT_2 * delta))
            }
        }
    }
}

/// Mean flip probability over a sample of reward pairs.
pub fn expected_noise_rate(spec: &NoiseSpec, pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::usage("expected_noise_rate needs at least one pair"));
    }
    let total: f64 = pairs.iter().map(|&(a, b)| flip_probability(spec, a, b)).sum();
    Ok(total / pairs.len() as f64)
}

/// Finds the smallest grid hyperparameter whose expected noise rate on `pairs`
/// reaches `target_rate`, scanning `step, 2·step, …` upward.
pub fn calibrate(family: NoiseFamily, target_rate: f64, pairs: &[(f64, f64)], step: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&target_rate) {
        return Err(Error::usage(format!(
            "target noise rate must lie in [0, 0.5], got {target_rate}"
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::usage(format!("calibration step must be positive, got {step}")));
    }
    if target_rate == 0.0 {
        return Ok(0.0);
    }
    if family == NoiseFamily::Random {
        return Ok(target_rate);
    }
    if pairs.is_empty() {
        return Err(Error::usage("calibration needs at least one reward pair"));
    }
    let max_steps = (CALIBRATION_CEILING / step).ceil() as u64;
    for i in 1..=max_steps {
        // Multiply rather than accumulate so grid values stay exact multiples.
        let value = i as f64 * step;
        if expected_noise_rate(&family.spec(value)?, pairs)? >= target_rate {
            return Ok(value);
        }
    }
    Ok(max_steps as f64 * step)
}

/// Calibration outcome as written into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub family: NoiseFamily,
    pub target_rate: f64,
    pub hyperparameter: f64,
    pub expected_noise_rate: f64,
    pub sample_size: usize,
}

/// Runs [`calibrate`] with the default step and records the result.
pub fn calibrate_report(family: NoiseFamily, target_rate: f64, pairs: &[(f64, f64)]) -> Result<Calibration> {
    let hyperparameter = calibrate(family, target_rate, pairs, CALIBRATION_STEP)?;
    let expected = if pairs.is_empty() {
        target_rate
    } else {
        expected_noise_rate(&family.spec(hyperparameter)?, pairs)?
    };
    Ok(Calibration {
        family,
        target_rate,
        hyperparameter,
        expected_noise_rate: expected,
        sample_size: pairs.len(),
    })
}
