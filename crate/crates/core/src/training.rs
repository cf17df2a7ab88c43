//! Reference-policy fitting and DPO alignment.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{LabeledPair, PreferenceDataset};
use crate::error::{Error, Result};
use crate::eval;
use crate::math::{self, sigmoid, softplus};
use crate::policy::{validate_dropout, DropoutMask, PolicyConfig, PolicyParams};
use crate::rng;
use crate::world::World;

/// Adam with the usual decay rates (0.9, 0.999) and ε = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    /// Temperature of the Boltzmann demonstration target `softmax(r* / τ)`.
    pub demo_temperature: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            demo_temperature: 2.0,
            epochs: 200,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.demo_temperature > 0.0) || self.demo_temperature.is_nan() {
            return Err(Error::config("demo_temperature must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("sft epochs must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("sft learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftOutcome {
    pub params: PolicyParams,
    /// Mean cross-entropy to the demonstration targets on train prompts, inference mode.
    pub final_cross_entropy: f64,
    /// Mean over train prompts of `E_{y~π_sft}[r*(x, y)]`.
    pub mean_gold_reward: f64,
}

/// Fits the reference policy by distilling `softmax(r*(x,·)/τ)` on the train
/// prompts with full-batch Adam steps.
pub fn train_sft(world: &World, policy: &PolicyConfig, config: &SftConfig) -> Result<SftOutcome> {
    policy.validate()?;
    config.validate()?;
    let mut params = PolicyParams::init(world.embedding_dim(), policy);
    let prompts = world.train_prompts();
    let targets: Vec<Vec<f64>> = prompts
        .iter()
        .map(|&x| {
            let scaled: Vec<f64> = world.rewards(x).iter().map(|r| r / config.demo_temperature).collect();
            math::softmax(&scaled)
        })
        .collect();
    let candidates: Vec<usize> = (0..world.k_candidates()).collect();
    let mask_seed = rng::stream_seed(config.seed, "sft-dropout");
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let scale = 1.0 / prompts.len() as f64;

    for epoch in 0..config.epochs {
        let mut mask_rng = rng::indexed_rng(mask_seed, epoch as u64);
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for (&x, q) in prompts.iter().zip(&targets) {
            let mask = (policy.dropout_rate > 0.0)
                .then(|| DropoutMask::sample(params.hidden_width(), policy.dropout_rate, &mut mask_rng));
            let act = params.forward(world, x, &candidates, mask.as_ref());
            let log_pi = math::log_softmax(&act.scores);
            loss -= q.iter().zip(&log_pi).map(|(qi, li)| qi * li).sum::<f64>();
            // ∂/∂s_j of −Σ q log π is π_j − q_j.
            let coeffs: Vec<f64> = log_pi.iter().zip(q).map(|(l, qi)| l.exp() - qi).collect();
            act.backward(&params, world, &coeffs, scale, &mut grad);
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                stage: "sft",
                detail: format!("non-finite loss at epoch {epoch}"),
            });
        }
        adam.step(params.as_mut_slice(), &grad);
    }

    let mut ce = 0.0;
    let mut reward = 0.0;
    for (&x, q) in prompts.iter().zip(&targets) {
        let log_pi = params.log_probs(world, x, None)?;
        ce -= q.iter().zip(&log_pi).map(|(qi, li)| qi * li).sum::<f64>();
        reward += log_pi.iter().zip(world.rewards(x)).map(|(l, r)| l.exp() * r).sum::<f64>();
    }
    let n = prompts.len() as f64;
    if !ce.is_finite() {
        return Err(Error::Divergence {
            stage: "sft",
            detail: "non-finite final cross-entropy".into(),
        });
    }
    Ok(SftOutcome {
        params,
        final_cross_entropy: ce / n,
        mean_gold_reward: reward / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 64,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("dpo learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        validate_dropout(self.dropout_rate)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::config(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// Per-pair gradient weight on `∇[log π(y_w) − log π(y_l)]`: `−β σ(−β m)`.
pub fn pair_coefficient(margin: f64, beta: f64) -> f64 {
    -beta * sigmoid(-beta * margin)
}

/// Reference log-ratio `log π_sft(w) − log π_sft(l)` of each pair, inference mode.
fn reference_margins(sft: &PolicyParams, world: &World, batch: &[LabeledPair]) -> Vec<f64> {
    batch
        .iter()
        .map(|p| {
            let s = sft.forward(world, p.prompt, &[p.winner, p.loser], None).scores;
            s[0] - s[1]
        })
        .collect()
}

/// Mean DPO loss and, when `grad` is given, its gradient accumulated into it.
fn dpo_batch(
    params: &PolicyParams,
    world: &World,
    batch: &[LabeledPair],
    ref_margins: &[f64],
    beta: f64,
    masks: Option<&[DropoutMask]>,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (i, p) in batch.iter().enumerate() {
        let mask = masks.map(|m| &m[i]);
        let act = params.forward(world, p.prompt, &[p.winner, p.loser], mask);
        // log π_θ(w) − log π_θ(l): the normalizer cancels under a shared mask.
        let margin = (act.scores[0] - act.scores[1]) - ref_margins[i];
        loss += softplus(-beta * margin);
        if let Some(g) = grad.as_deref_mut() {
            act.backward(params, world, &[1.0, -1.0], pair_coefficient(margin, beta) / n, g);
        }
    }
    loss / n
}

fn check_batch(params: &PolicyParams, world: &World, batch: &[LabeledPair], masks: Option<&[DropoutMask]>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::usage("DPO batch must be non-empty"));
    }
    if let Some(m) = masks {
        if m.len() != batch.len() {
            return Err(Error::usage(format!(
                "{} dropout masks for a batch of {}",
                m.len(),
                batch.len()
            )));
        }
        if m.iter().any(|mask| mask.keep().len() != params.hidden_width()) {
            return Err(Error::usage("dropout mask width differs from the hidden width"));
        }
    }
    if !params.is_finite() {
        return Err(Error::Divergence {
            stage: "dpo",
            detail: "non-finite parameters".into(),
        });
    }
    for p in batch {
        world.check_prompt(p.prompt)?;
        if p.winner >= world.k_candidates() || p.loser >= world.k_candidates() {
            return Err(Error::usage(format!("pair {p:?} has out-of-range candidates")));
        }
    }
    Ok(())
}

/// Mean over the batch of `−log σ(β[log π_θ/π_sft (y_w) − log π_θ/π_sft (y_l)])`.
///
/// `masks`, when given, holds one dropout mask per pair for the trained
/// policy; the reference policy always runs in inference mode.
pub fn dpo_loss(
    params: &PolicyParams,
    sft: &PolicyParams,
    batch: &[LabeledPair],
    beta: f64,
    world: &World,
    masks: Option<&[DropoutMask]>,
) -> Result<f64> {
    check_beta(beta)?;
    check_batch(params, world, batch, masks)?;
    let refs = reference_margins(sft, world, batch);
    Ok(dpo_batch(params, world, batch, &refs, beta, masks, None))
}

/// Exact gradient of [`dpo_loss`] with respect to `params`.
pub fn dpo_grad(
    params: &PolicyParams,
    sft: &PolicyParams,
    batch: &[LabeledPair],
    beta: f64,
    world: &World,
    masks: Option<&[DropoutMask]>,
) -> Result<Vec<f64>> {
    check_beta(beta)?;
    check_batch(params, world, batch, masks)?;
    let refs = reference_margins(sft, world, batch);
    let mut grad = vec![0.0; params.len()];
    dpo_batch(params, world, batch, &refs, beta, masks, Some(&mut grad));
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches (dropout active).
    pub loss: f64,
    /// `KL(π_θ || π_sft)` averaged over the test prompts after the epoch.
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoOutcome {
    pub params: PolicyParams,
    pub log: Vec<EpochLog>,
}

/// Aligns a copy of `sft` on `dataset` with mini-batch Adam on the DPO loss.
pub fn train_dpo(world: &World, sft: &PolicyParams, dataset: &PreferenceDataset, config: &DpoConfig) -> Result<DpoOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::usage("cannot align on an empty preference dataset"));
    }
    check_batch(sft, world, &dataset.pairs, None)?;
    let mut params = sft.clone();
    let refs = reference_margins(sft, world, &dataset.pairs);
    let kl_reference = eval::ReferenceLogProbs::new(world, sft, world.test_prompts())?;
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let shuffle_seed = rng::stream_seed(config.seed, "dpo-shuffle");
    let mask_seed = rng::stream_seed(config.seed, "dpo-dropout");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    let mut batch = Vec::with_capacity(config.batch_size);
    let mut batch_refs = Vec::with_capacity(config.batch_size);
    let mut masks = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::indexed_rng(shuffle_seed, epoch as u64));
        let mut mask_rng = rng::indexed_rng(mask_seed, epoch as u64);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch_refs.clear();
            masks.clear();
            for &i in chunk {
                batch.push(dataset.pairs[i]);
                batch_refs.push(refs[i]);
                masks.push(DropoutMask::sample(params.hidden_width(), config.dropout_rate, &mut mask_rng));
            }
            let mut grad = vec![0.0; params.len()];
            let loss = dpo_batch(&params, world, &batch, &batch_refs, config.beta, Some(&masks), Some(&mut grad));
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    stage: "dpo",
                    detail: format!("non-finite loss at epoch {epoch}"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(params.as_mut_slice(), &grad);
        }
        let kl = kl_reference.kl(world, &params)?;
        log.push(EpochLog {
            epoch,
            loss: epoch_loss / dataset.len() as f64,
            kl,
        });
    }
    Ok(DpoOutcome { params, log })
}

/// Writes the training log as CSV: `epoch,loss,kl`.
pub fn write_log_csv(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_world, WorldConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_world() -> World {
        build_world(&WorldConfig {
            embedding_dim: 4,
            n_train_prompts: 12,
            n_test_prompts: 4,
            k_candidates: 6,
            seed: 3,
        })
        .unwrap()
    }

    fn params(seed: u64, scale: f64) -> PolicyParams {
        PolicyParams::init(
            4,
            &PolicyConfig {
                hidden_width: 5,
                dropout_rate: 0.0,
                init_scale: scale,
                seed,
            },
        )
    }

    fn random_batch(world: &World, n: usize, seed: u64) -> Vec<LabeledPair> {
        let mut rng = rng::rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let x = rng.random_range(0..world.n_prompts());
                let a = rng.random_range(0..world.k_candidates());
                let b = (a + rng.random_range(1..world.k_candidates())) % world.k_candidates();
                LabeledPair::from_world(world, x, a, b)
            })
            .collect()
    }

    /// Literal per-pair loss from inference-mode log-probabilities.
    fn literal_loss(p: &PolicyParams, sft: &PolicyParams, world: &World, batch: &[LabeledPair], beta: f64) -> f64 {
        batch
            .iter()
            .map(|pair| {
                let lw = p.log_prob(world, pair.prompt, pair.winner).unwrap() - sft.log_prob(world, pair.prompt, pair.winner).unwrap();
                let ll = p.log_prob(world, pair.prompt, pair.loser).unwrap() - sft.log_prob(world, pair.prompt, pair.loser).unwrap();
                -math::log_sigmoid(beta * lw - beta * ll)
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    #[test]
    fn identity_policy_loss_is_ln2() {
        let w = small_world();
        let sft = params(1, 0.8);
        for (n, beta) in [(1, 0.5), (7, 0.1), (32, 3.0)] {
            let batch = random_batch(&w, n, n as u64);
            let loss = dpo_loss(&sft, &sft, &batch, beta, &w, None).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() <= 1e-12);
        }
    }

    #[test]
    fn loss_matches_literal_log_prob_formula() {
        let w = small_world();
        let sft = params(1, 0.8);
        let theta = params(2, 0.8);
        let batch = random_batch(&w, 10, 3);
        assert_abs_diff_eq!(
            dpo_loss(&theta, &sft, &batch, 0.7, &w, None).unwrap(),
            literal_loss(&theta, &sft, &w, &batch, 0.7),
            epsilon = 1e-12
        );
    }

    #[test]
    fn closed_form_single_pair() {
        let w = small_world();
        let sft = params(1, 0.5);
        let theta = params(4, 0.5);
        let pair = random_batch(&w, 1, 5);
        let lw = theta.log_prob(&w, pair[0].prompt, pair[0].winner).unwrap() - sft.log_prob(&w, pair[0].prompt, pair[0].winner).unwrap();
        let ll = theta.log_prob(&w, pair[0].prompt, pair[0].loser).unwrap() - sft.log_prob(&w, pair[0].prompt, pair[0].loser).unwrap();
        let m = lw - ll;
        let loss = dpo_loss(&theta, &sft, &pair, 0.5, &w, None).unwrap();
        assert_abs_diff_eq!(loss, -math::log_sigmoid(0.5 * m), epsilon = 1e-12);
        // β = 0.5, m = 2 → −log σ(1).
        assert_abs_diff_eq!(softplus(-0.5 * 2.0), 0.313_261_687_518_222_8, epsilon = 1e-12);
    }

    #[test]
    fn doubling_beta_moves_loss_with_margin_sign() {
        let w = small_world();
        let sft = params(1, 0.5);
        let theta = params(6, 0.9);
        for pair in random_batch(&w, 20, 7) {
            let b = [pair];
            let lw = theta.log_prob(&w, pair.prompt, pair.winner).unwrap() - sft.log_prob(&w, pair.prompt, pair.winner).unwrap();
            let ll = theta.log_prob(&w, pair.prompt, pair.loser).unwrap() - sft.log_prob(&w, pair.prompt, pair.loser).unwrap();
            let m = lw - ll;
            let l1 = dpo_loss(&theta, &sft, &b, 0.5, &w, None).unwrap();
            let l2 = dpo_loss(&theta, &sft, &b, 1.0, &w, None).unwrap();
            if m > 1e-9 {
                assert!(l2 < l1);
            } else if m < -1e-9 {
                assert!(l2 > l1);
            }
        }
    }

    #[test]
    fn dpo_grad_matches_central_differences() {
        let w = small_world();
        let mut rng = rng::rng_from_seed(17);
        for trial in 0..20u64 {
            let sft = params(100 + trial, 0.6);
            let mut theta = sft.clone();
            for v in theta.as_mut_slice() {
                *v += 0.3 * (rng.random::<f64>() - 0.5);
            }
            let batch = random_batch(&w, 8, trial);
            let masks: Option<Vec<DropoutMask>> =
                (trial % 2 == 1).then(|| (0..8).map(|_| DropoutMask::sample(5, 0.2, &mut rng)).collect());
            let analytic = dpo_grad(&theta, &sft, &batch, 0.5, &w, masks.as_deref()).unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for i in 0..theta.len() {
                let mut plus = theta.clone();
                plus.as_mut_slice()[i] += h;
                let mut minus = theta.clone();
                minus.as_mut_slice()[i] -= h;
                let numeric = (dpo_loss(&plus, &sft, &batch, 0.5, &w, masks.as_deref()).unwrap()
                    - dpo_loss(&minus, &sft, &batch, 0.5, &w, masks.as_deref()).unwrap())
                    / (2.0 * h);
                let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-4, "trial {trial}: {worst}");
        }
    }

    #[test]
    fn coefficient_at_identity_is_half_beta() {
        assert_eq!(pair_coefficient(0.0, 0.5), -0.25);
        assert_eq!(pair_coefficient(0.0, 2.0), -1.0);
    }

    #[test]
    fn one_small_step_reduces_clean_pair_loss() {
        let w = small_world();
        let sft = params(1, 0.6);
        let pair = random_batch(&w, 1, 9);
        let g = dpo_grad(&sft, &sft, &pair, 0.5, &w, None).unwrap();
        let mut stepped = sft.clone();
        for (p, gi) in stepped.as_mut_slice().iter_mut().zip(&g) {
            *p -= 1e-3 * gi;
        }
        assert!(dpo_loss(&stepped, &sft, &pair, 0.5, &w, None).unwrap() < std::f64::consts::LN_2);
    }

    #[test]
    fn batch_validation() {
        let w = small_world();
        let sft = params(1, 0.6);
        assert!(matches!(dpo_loss(&sft, &sft, &[], 0.5, &w, None), Err(Error::Usage(_))));
        let batch = random_batch(&w, 3, 1);
        let masks = vec![DropoutMask::sample(5, 0.1, &mut rng::rng_from_seed(0))];
        assert!(dpo_grad(&sft, &sft, &batch, 0.5, &w, Some(&masks)).is_err());
        assert!(dpo_loss(&sft, &sft, &batch, 0.0, &w, None).is_err());
    }

    #[test]
    fn sft_uniform_limit_reaches_log_k() {
        let w = small_world();
        let out = train_sft(
            &w,
            &PolicyConfig {
                hidden_width: 5,
                dropout_rate: 0.0,
                ..PolicyConfig::default()
            },
            &SftConfig {
                demo_temperature: 1e12,
                epochs: 300,
                ..SftConfig::default()
            },
        )
        .unwrap();
        let log_k = (w.k_candidates() as f64).ln();
        assert!(out.final_cross_entropy >= log_k - 1e-12);
        assert!(out.final_cross_entropy - log_k < 1e-3, "{}", out.final_cross_entropy);
    }

    #[test]
    fn sft_is_deterministic() {
        let w = small_world();
        let pc = PolicyConfig {
            hidden_width: 5,
            ..PolicyConfig::default()
        };
        let sc = SftConfig {
            epochs: 20,
            ..SftConfig::default()
        };
        assert_eq!(train_sft(&w, &pc, &sc).unwrap(), train_sft(&w, &pc, &sc).unwrap());
    }

    #[test]
    fn dpo_zero_epochs_returns_reference() {
        let w = small_world();
        let sft = params(1, 0.6);
        let ds = PreferenceDataset::new(random_batch(&w, 10, 2));
        let out = train_dpo(&w, &sft, &ds, &DpoConfig { epochs: 0, ..DpoConfig::default() }).unwrap();
        assert_eq!(out.params, sft);
        assert!(out.log.is_empty());
        assert!(train_dpo(&w, &sft, &PreferenceDataset::new(vec![]), &DpoConfig::default()).is_err());
    }

    #[test]
    fn dpo_without_dropout_is_deterministic_and_logs_kl() {
        let w = small_world();
        let sft = params(1, 0.6);
        let ds = PreferenceDataset::new(random_batch(&w, 40, 2));
        let cfg = DpoConfig {
            epochs: 5,
            batch_size: 8,
            dropout_rate: 0.0,
            ..DpoConfig::default()
        };
        let a = train_dpo(&w, &sft, &ds, &cfg).unwrap();
        let b = train_dpo(&w, &sft, &ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.log.len(), 5);
        assert!(a.log.iter().all(|e| e.kl.is_finite() && e.kl >= 0.0));
        assert!(a.log.last().unwrap().kl > 0.0);
    }

    proptest! {
        #[test]
        fn loss_strictly_decreases_in_margin(m in -20.0f64..20.0, dm in 0.01f64..5.0, beta in 0.05f64..4.0) {
            prop_assert!(softplus(-beta * (m + dm)) < softplus(-beta * m));
        }
    }
}
