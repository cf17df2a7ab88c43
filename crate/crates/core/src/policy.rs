//! Featurized softmax policy over each prompt's candidate set.
//!
//! A one-hidden-layer scorer maps `[u_x; v_{x,y}]` to a logit
//!
//! ```text
//! s(x, y) = w_outᵀ (mask ⊙ tanh(W [u_x; v_{x,y}] + b)) / (1 - p) + b_out
//! ```
//!
//! and `π(y|x) = softmax_y s(x, ·)`. Without a mask the scorer runs in
//! inference mode (no masking, no rescaling). The same type holds both the
//! frozen reference policy and the policy being aligned.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math;
use crate::world::World;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden_width: usize,
    /// Dropout applied to the hidden layer while fitting the reference policy.
    pub dropout_rate: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden_width: 32,
            dropout_rate: 0.1,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 {
            return Err(Error::config("hidden_width must be positive"));
        }
        validate_dropout(self.dropout_rate)?;
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale must be a positive real"));
        }
        Ok(())
    }
}

pub(crate) fn validate_dropout(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted-dropout mask over the hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    rate: f64,
}

impl DropoutMask {
    pub fn new(keep: Vec<bool>, rate: f64) -> Result<Self> {
        validate_dropout(rate)?;
        Ok(Self { keep, rate })
    }

    /// Keeps each unit independently with probability `1 - rate`.
    pub fn sample<R: Rng + ?Sized>(hidden_width: usize, rate: f64, rng: &mut R) -> Self {
        let keep = (0..hidden_width)
            .map(|_| rate == 0.0 || rng.random::<f64>() >= rate)
            .collect();
        Self { keep, rate }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn gain(&self, unit: usize) -> f64 {
        if self.keep[unit] {
            1.0 / (1.0 - self.rate)
        } else {
            0.0
        }
    }
}

/// Scorer weights, stored as one flat vector:
/// `W` (hidden × 2d, row-major), `b` (hidden), `w_out` (hidden), `b_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    dim: usize,
    hidden: usize,
    theta: Vec<f64>,
}

/// Number of scalar parameters for embedding dimension `dim` and `hidden` units.
pub fn param_count(dim: usize, hidden: usize) -> usize {
    hidden * 2 * dim + hidden + hidden + 1
}

impl PolicyParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            theta: vec![0.0; param_count(dim, hidden)],
        }
    }

    /// Gaussian initialization scaled by `config.init_scale`, seeded by `config.seed`.
    pub fn init(dim: usize, config: &PolicyConfig) -> Self {
        let mut rng = crate::rng::rng_from_seed(crate::rng::stream_seed(config.seed, "policy-init"));
        let theta = (0..param_count(dim, config.hidden_width))
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * config.init_scale
            })
            .collect();
        Self {
            dim,
            hidden: config.hidden_width,
            theta,
        }
    }

    pub fn from_vec(dim: usize, hidden: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != param_count(dim, hidden) {
            return Err(Error::usage(format!(
                "expected {} parameters for d = {dim}, hidden = {hidden}, got {}",
                param_count(dim, hidden),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                stage: "policy",
                detail: "non-finite parameter".into(),
            });
        }
        Ok(Self { dim, hidden, theta })
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    /// Short content hash, used as the reference-policy id in dataset provenance.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.hidden as u64).to_le_bytes());
        for v in &self.theta {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    // Offsets into theta.
    fn w1(&self) -> &[f64] {
        &self.theta[..self.hidden * 2 * self.dim]
    }
    fn b1(&self) -> &[f64] {
        let o = self.hidden * 2 * self.dim;
        &self.theta[o..o + self.hidden]
    }
    fn w2(&self) -> &[f64] {
        let o = self.hidden * 2 * self.dim + self.hidden;
        &self.theta[o..o + self.hidden]
    }
    fn b2(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    fn check(&self, world: &World, x: usize, mask: Option<&DropoutMask>) -> Result<()> {
        if world.embedding_dim() != self.dim {
            return Err(Error::usage(format!(
                "policy expects d = {}, world has d = {}",
                self.dim,
                world.embedding_dim()
            )));
        }
        world.check_prompt(x)?;
        if let Some(m) = mask {
            if m.keep.len() != self.hidden {
                return Err(Error::usage(format!(
                    "dropout mask has {} entries, hidden width is {}",
                    m.keep.len(),
                    self.hidden
                )));
            }
        }
        Ok(())
    }

    fn check_candidate(&self, world: &World, y: usize) -> Result<()> {
        if y >= world.k_candidates() {
            return Err(Error::usage(format!(
                "candidate index {y} out of range (k = {})",
                world.k_candidates()
            )));
        }
        Ok(())
    }

    /// Hidden activations and scores for a subset of candidates of prompt `x`.
    pub(crate) fn forward(
        &self,
        world: &World,
        x: usize,
        candidates: &[usize],
        mask: Option<&DropoutMask>,
    ) -> Activations {
        let d = self.dim;
        let h = self.hidden;
        let w1 = self.w1();
        let b1 = self.b1();
        let w2 = self.w2();
        let u = world.prompt_embedding(x);

        // W_u u + b is shared by every candidate of the prompt.
        let base: Vec<f64> = (0..h)
            .map(|j| {
                let row = &w1[j * 2 * d..j * 2 * d + d];
                b1[j] + row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let gains: Vec<f64> = match mask {
            Some(m) => (0..h).map(|j| m.gain(j)).collect(),
            None => vec![1.0; h],
        };

        let mut hidden = Vec::with_capacity(candidates.len() * h);
        let mut scores = Vec::with_capacity(candidates.len());
        for &y in candidates {
            let v = world.candidate_embedding(x, y);
            let mut s = self.b2();
            for j in 0..h {
                let row = &w1[j * 2 * d + d..(j + 1) * 2 * d];
                let z = base[j] + row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                let a = z.tanh();
                hidden.push(a);
                s += w2[j] * gains[j] * a;
            }
            scores.push(s);
        }
        Activations {
            x,
            candidates: candidates.to_vec(),
            gains,
            hidden,
            scores,
        }
    }

    fn all_candidates(world: &World) -> Vec<usize> {
        (0..world.k_candidates()).collect()
    }

    /// Unnormalized log-policy for every candidate of prompt `x`.
    pub fn logits(&self, world: &World, x: usize, mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
        self.check(world, x, mask)?;
        let scores = self.forward(world, x, &Self::all_candidates(world), mask).scores;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Divergence {
                stage: "policy forward",
                detail: format!("non-finite logit for prompt {x}"),
            });
        }
        Ok(scores)
    }

    /// `log π(·|x)` over all candidates.
    pub fn log_probs(&self, world: &World, x: usize, mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
        Ok(math::log_softmax(&self.logits(world, x, mask)?))
    }

    /// `log π(y|x)` in inference mode.
    pub fn log_prob(&self, world: &World, x: usize, y: usize) -> Result<f64> {
        self.check_candidate(world, y)?;
        Ok(self.log_probs(world, x, None)?[y])
    }

    /// Draws a candidate from `softmax(logits / temperature)` in inference mode.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        world: &World,
        x: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<usize> {
        let probs = self.tempered_probs(world, x, temperature)?;
        Ok(math::sample_index(&probs, rng.random::<f64>()))
    }

    /// `softmax(logits / temperature)` in inference mode.
    pub fn tempered_probs(&self, world: &World, x: usize, temperature: f64) -> Result<Vec<f64>> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::usage(format!(
                "temperature must be a positive real, got {temperature}"
            )));
        }
        let logits = self.logits(world, x, None)?;
        let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        Ok(math::softmax(&scaled))
    }

    /// Exact gradient of `log π(y|x)` under the given mask.
    pub fn grad_log_prob(
        &self,
        world: &World,
        x: usize,
        y: usize,
        mask: Option<&DropoutMask>,
    ) -> Result<Vec<f64>> {
        self.check(world, x, mask)?;
        self.check_candidate(world, y)?;
        let act = self.forward(world, x, &Self::all_candidates(world), mask);
        let probs = math::softmax(&act.scores);
        // ∇ log π(y) = ∇s_y − Σ_j π_j ∇s_j
        let coeffs: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, p)| if j == y { 1.0 - p } else { -p })
            .collect();
        let mut grad = vec![0.0; self.len()];
        act.backward(self, world, &coeffs, 1.0, &mut grad);
        // log π is invariant to b_out; drop the rounding residue of Σ coeffs.
        *grad.last_mut().expect("non-empty parameter vector") = 0.0;
        Ok(grad)
    }

    /// Gradient of `log π(w|x) − log π(l|x)` under one shared mask.
    ///
    /// The log-normalizer cancels, so this equals `∇s_w − ∇s_l` and only the two
    /// candidates need a forward pass.
    pub fn grad_log_ratio(
        &self,
        world: &World,
        x: usize,
        winner: usize,
        loser: usize,
        mask: Option<&DropoutMask>,
    ) -> Result<Vec<f64>> {
        self.check(world, x, mask)?;
        self.check_candidate(world, winner)?;
        self.check_candidate(world, loser)?;
        let act = self.forward(world, x, &[winner, loser], mask);
        let mut grad = vec![0.0; self.len()];
        act.backward(self, world, &[1.0, -1.0], 1.0, &mut grad);
        *grad.last_mut().expect("non-empty parameter vector") = 0.0;
        Ok(grad)
    }

    pub fn save_json(&self, path: &Path, seed: u64) -> Result<()> {
        let file = PolicyFile {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            embedding_dim: self.dim,
            hidden_width: self.hidden,
            seed,
            params: self.theta.clone(),
        };
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads parameters written by [`PolicyParams::save_json`]; returns them with the header seed.
    pub fn load_json(path: &Path) -> Result<(Self, u64)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PolicyFile = serde_json::from_str(&text)?;
        if file.format != POLICY_FORMAT || file.version != POLICY_VERSION {
            return Err(Error::usage(format!(
                "{}: unsupported policy file format {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        let params = Self::from_vec(file.embedding_dim, file.hidden_width, file.params)?;
        Ok((params, file.seed))
    }
}

const POLICY_FORMAT: &str = "prefnoise-policy";
const POLICY_VERSION: u32 = 1;

/// On-disk policy layout: a small header and the flat parameter vector.
#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    version: u32,
    embedding_dim: usize,
    hidden_width: usize,
    seed: u64,
    params: Vec<f64>,
}

/// Cached forward pass for backpropagation.
pub(crate) struct Activations {
    x: usize,
    candidates: Vec<usize>,
    gains: Vec<f64>,
    hidden: Vec<f64>,
    pub(crate) scores: Vec<f64>,
}

impl Activations {
    /// Adds `scale · Σ_c coeffs[c] · ∇s_c` into `grad`.
    pub(crate) fn backward(
        &self,
        params: &PolicyParams,
        world: &World,
        coeffs: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let d = params.dim;
        let h = params.hidden;
        let w2 = params.w2();
        let u = world.prompt_embedding(self.x);
        let o_b1 = h * 2 * d;
        let o_w2 = o_b1 + h;
        let o_b2 = o_w2 + h;

        let mut delta_sum = vec![0.0; h];
        for (c, &y) in self.candidates.iter().enumerate() {
            let a_c = coeffs[c] * scale;
            if a_c == 0.0 {
                continue;
            }
            grad[o_b2] += a_c;
            let v = world.candidate_embedding(self.x, y);
            let act = &self.hidden[c * h..(c + 1) * h];
            for j in 0..h {
                grad[o_w2 + j] += a_c * self.gains[j] * act[j];
                let delta = a_c * w2[j] * self.gains[j] * (1.0 - act[j] * act[j]);
                if delta == 0.0 {
                    continue;
                }
                delta_sum[j] += delta;
                let row = &mut grad[j * 2 * d + d..(j + 1) * 2 * d];
                for (g, vi) in row.iter_mut().zip(v) {
                    *g += delta * vi;
                }
            }
        }
        for j in 0..h {
            let ds = delta_sum[j];
            grad[o_b1 + j] += ds;
            let row = &mut grad[j * 2 * d..j * 2 * d + d];
            for (g, ui) in row.iter_mut().zip(u) {
                *g += ds * ui;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::world::{build_world, WorldConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn world() -> World {
        build_world(&WorldConfig {
            embedding_dim: 4,
            n_train_prompts: 5,
            n_test_prompts: 2,
            k_candidates: 6,
            seed: 11,
        })
        .unwrap()
    }

    fn random_params(seed: u64, scale: f64) -> PolicyParams {
        PolicyParams::init(
            4,
            &PolicyConfig {
                hidden_width: 5,
                dropout_rate: 0.2,
                init_scale: scale,
                seed,
            },
        )
    }

    /// Central-difference gradient of `f` at `p`.
    fn numeric_grad(p: &PolicyParams, h: f64, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
        (0..p.len())
            .map(|i| {
                let mut plus = p.clone();
                plus.as_mut_slice()[i] += h;
                let mut minus = p.clone();
                minus.as_mut_slice()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_params_give_constant_logits() {
        let w = world();
        let mut p = PolicyParams::zeros(4, 5);
        *p.as_mut_slice().last_mut().unwrap() = 0.37;
        assert_eq!(p.logits(&w, 0, None).unwrap(), vec![0.37; 6]);
        for y in 0..6 {
            assert_abs_diff_eq!(p.log_prob(&w, 0, y).unwrap(), -(6f64).ln(), epsilon = 1e-15);
        }
    }

    #[test]
    fn default_world_uniform_log_prob() {
        let w = build_world(&WorldConfig::default()).unwrap();
        let p = PolicyParams::zeros(16, 32);
        assert_abs_diff_eq!(p.log_prob(&w, 3, 9).unwrap(), -(16f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn all_ones_mask_at_zero_rate_matches_inference() {
        let w = world();
        let p = random_params(1, 0.5);
        let mask = DropoutMask::new(vec![true; 5], 0.0).unwrap();
        assert_eq!(p.logits(&w, 2, Some(&mask)).unwrap(), p.logits(&w, 2, None).unwrap());
    }

    #[test]
    fn zeroed_unit_removes_its_rescaled_contribution() {
        let w = world();
        let p = random_params(2, 0.5);
        let rate = 0.25;
        let mut keep = vec![true; 5];
        keep[3] = false;
        let mask = DropoutMask::new(keep, rate).unwrap();
        let masked = p.logits(&w, 1, Some(&mask)).unwrap();
        let full = p.logits(&w, 1, Some(&DropoutMask::new(vec![true; 5], rate).unwrap())).unwrap();
        // Direct evaluation of unit 3's contribution.
        let (d, h) = (4, 5);
        let theta = p.as_slice();
        let u = w.prompt_embedding(1);
        for y in 0..6 {
            let v = w.candidate_embedding(1, y);
            let row = &theta[3 * 2 * d..4 * 2 * d];
            let z = theta[h * 2 * d + 3]
                + row[..d].iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
                + row[d..].iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            let contribution = theta[h * 2 * d + h + 3] * z.tanh() / (1.0 - rate);
            assert_abs_diff_eq!(masked[y], full[y] - contribution, epsilon = 1e-12);
        }
        // Inference logits are the unscaled version.
        let inference = p.logits(&w, 1, None).unwrap();
        assert!(inference.iter().zip(&full).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn rejects_bad_inputs() {
        let w = world();
        let p = random_params(3, 0.1);
        assert!(matches!(p.logits(&w, 7, None), Err(Error::Usage(_))));
        assert!(matches!(p.log_prob(&w, 0, 6), Err(Error::Usage(_))));
        let short = DropoutMask::new(vec![true; 4], 0.1).unwrap();
        assert!(p.logits(&w, 0, Some(&short)).is_err());
        let mut rng = rng_from_seed(0);
        assert!(p.sample(&w, 0, 0.0, &mut rng).is_err());
        assert!(p.sample(&w, 0, -1.0, &mut rng).is_err());
        assert!(DropoutMask::new(vec![true; 5], 1.0).is_err());
    }

    #[test]
    fn non_finite_logits_are_divergence() {
        let w = world();
        let mut p = random_params(3, 0.1);
        *p.as_mut_slice().last_mut().unwrap() = f64::INFINITY;
        assert!(matches!(p.logits(&w, 0, None), Err(Error::Divergence { .. })));
    }

    #[test]
    fn grad_log_prob_matches_central_differences() {
        let w = world();
        let mut rng = rng_from_seed(99);
        for trial in 0..20u64 {
            let p = random_params(100 + trial, 0.7);
            let x = rng.random_range(0..w.n_prompts());
            let y = rng.random_range(0..w.k_candidates());
            let mask = (trial % 2 == 0).then(|| DropoutMask::sample(5, 0.3, &mut rng));
            let analytic = p.grad_log_prob(&w, x, y, mask.as_ref()).unwrap();
            let numeric = numeric_grad(&p, 1e-5, |q| q.log_probs(&w, x, mask.as_ref()).unwrap()[y]);
            let err = max_rel_err(&analytic, &numeric);
            assert!(err < 1e-4, "trial {trial}: relative error {err}");
        }
    }

    #[test]
    fn uniform_policy_has_zero_output_bias_gradient() {
        let w = world();
        let p = PolicyParams::zeros(4, 5);
        let g = p.grad_log_prob(&w, 0, 2, None).unwrap();
        assert_eq!(*g.last().unwrap(), 0.0);
    }

    #[test]
    fn score_function_has_zero_expectation() {
        let w = world();
        for seed in 0..5 {
            let p = random_params(seed, 0.8);
            let probs = math::softmax(&p.logits(&w, 3, None).unwrap());
            let mut total = vec![0.0; p.len()];
            for (y, py) in probs.iter().enumerate() {
                let g = p.grad_log_prob(&w, 3, y, None).unwrap();
                for (t, gi) in total.iter_mut().zip(g) {
                    *t += py * gi;
                }
            }
            assert!(total.iter().all(|t| t.abs() < 1e-8));
        }
    }

    #[test]
    fn log_ratio_gradient_equals_difference_of_log_prob_gradients() {
        let w = world();
        let mut rng = rng_from_seed(5);
        for seed in 0..5 {
            let p = random_params(seed, 0.6);
            let mask = DropoutMask::sample(5, 0.2, &mut rng);
            let direct = p.grad_log_ratio(&w, 4, 1, 5, Some(&mask)).unwrap();
            let gw = p.grad_log_prob(&w, 4, 1, Some(&mask)).unwrap();
            let gl = p.grad_log_prob(&w, 4, 5, Some(&mask)).unwrap();
            for i in 0..p.len() {
                assert_abs_diff_eq!(direct[i], gw[i] - gl[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn near_zero_temperature_picks_argmax() {
        let w = world();
        let p = random_params(8, 1.0);
        let argmax = math::argmax(&p.logits(&w, 0, None).unwrap());
        let mut rng = rng_from_seed(4);
        let hits = (0..10_000)
            .filter(|_| p.sample(&w, 0, 1e-6, &mut rng).unwrap() == argmax)
            .count();
        assert!(hits as f64 / 1e4 > 0.999);
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        let w = world();
        let p = PolicyParams::zeros(4, 5);
        let mut rng = rng_from_seed(12);
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[p.sample(&w, 1, 0.7, &mut rng).unwrap()] += 1;
        }
        let q = 1.0 / 6.0;
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * q).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn same_rng_state_same_samples() {
        let w = world();
        let p = random_params(9, 1.0);
        let draw = |seed| {
            let mut rng = rng_from_seed(seed);
            (0..50).map(|i| p.sample(&w, i % 7, 0.7, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = random_params(21, 0.9);
        p.save_json(&path, 21).unwrap();
        let (q, seed) = PolicyParams::load_json(&path).unwrap();
        assert_eq!(seed, 21);
        assert_eq!(p, q);
        assert_eq!(p.fingerprint(), q.fingerprint());
    }

    #[test]
    fn param_count_depends_only_on_shape() {
        assert_eq!(param_count(16, 32), 32 * 32 + 32 + 32 + 1);
        assert_eq!(random_params(1, 0.1).len(), param_count(4, 5));
        assert!(PolicyParams::from_vec(4, 5, vec![0.0; 3]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn log_probs_normalize(seed in any::<u64>(), x in 0usize..7, scale in 0.01f64..3.0) {
            let w = world();
            let p = random_params(seed, scale);
            let lp = p.log_probs(&w, x, None).unwrap();
            prop_assert!(lp.iter().all(|v| *v <= 0.0));
            prop_assert!((lp.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn logit_shift_leaves_log_probs_unchanged(seed in any::<u64>(), c in -50.0f64..50.0) {
            let w = world();
            let p = random_params(seed, 0.5);
            let mut q = p.clone();
            *q.as_mut_slice().last_mut().unwrap() += c;
            let a = p.log_probs(&w, 2, None).unwrap();
            let b = q.log_probs(&w, 2, None).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn cooling_never_lowers_argmax_probability(seed in any::<u64>(), t_hi in 0.05f64..5.0, frac in 0.01f64..1.0) {
            let w = world();
            let p = random_params(seed, 1.0);
            let best = math::argmax(&p.logits(&w, 0, None).unwrap());
            let hot = p.tempered_probs(&w, 0, t_hi).unwrap()[best];
            let cold = p.tempered_probs(&w, 0, t_hi * frac).unwrap()[best];
            prop_assert!(cold >= hot - 1e-15);
        }
    }
}
