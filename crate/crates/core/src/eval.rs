//! Win rate against the reference policy, the KL diagnostic, and across-seed
//! statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::math;
use crate::policy::PolicyParams;
use crate::rng;
use crate::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRateResult {
    pub win_rate: f64,
    pub n_prompts: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl WinRateResult {
    fn from_counts(wins: usize, ties: usize, losses: usize) -> Self {
        let n = wins + ties + losses;
        Self {
            win_rate: (wins as f64 + 0.5 * ties as f64) / n as f64,
            n_prompts: n,
            wins,
            ties,
            losses,
        }
    }
}

/// How each policy picks its response to a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Decoding {
    Sample { temperature: f64 },
    Greedy,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding::Sample { temperature: 0.7 }
    }
}

impl Decoding {
    pub fn validate(&self) -> Result<()> {
        if let Decoding::Sample { temperature } = *self {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::config("evaluation temperature must be positive"));
            }
        }
        Ok(())
    }

    fn pick(&self, params: &PolicyParams, world: &World, x: usize, u: f64) -> Result<usize> {
        match *self {
            Decoding::Sample { temperature } => Ok(math::sample_index(&params.tempered_probs(world, x, temperature)?, u)),
            Decoding::Greedy => Ok(math::argmax(&params.logits(world, x, None)?)),
        }
    }
}

/// One uniform per policy for every prompt, derived from `(seed, x)`.
///
/// Two calls with the same seed therefore share draws prompt by prompt, which
/// is what makes comparisons across checkpoints use common random numbers.
pub fn prompt_uniforms(prompts: &[usize], seed: u64) -> Vec<(f64, f64)> {
    prompts
        .iter()
        .map(|&x| {
            let mut r = rng::indexed_rng(seed, x as u64);
            (r.random::<f64>(), r.random::<f64>())
        })
        .collect()
}

/// Fraction of prompts on which `a`'s response has the higher gold reward than
/// `b`'s; identical responses count one half.
pub fn win_rate(
    world: &World,
    a: &PolicyParams,
    b: &PolicyParams,
    prompts: &[usize],
    decoding: Decoding,
    seed: u64,
) -> Result<WinRateResult> {
    win_rate_from_uniforms(world, a, b, prompts, decoding, &prompt_uniforms(prompts, seed))
}

/// [`win_rate`] with explicit per-prompt uniforms `(u_a, u_b)`.
pub fn win_rate_from_uniforms(
    world: &World,
    a: &PolicyParams,
    b: &PolicyParams,
    prompts: &[usize],
    decoding: Decoding,
    uniforms: &[(f64, f64)],
) -> Result<WinRateResult> {
    if prompts.is_empty() {
        return Err(Error::usage("win rate needs at least one prompt"));
    }
    if uniforms.len() != prompts.len() {
        return Err(Error::usage("one uniform pair per prompt is required"));
    }
    decoding.validate()?;
    let (mut wins, mut ties, mut losses) = (0, 0, 0);
    for (&x, &(ua, ub)) in prompts.iter().zip(uniforms) {
        world.check_prompt(x)?;
        let ya = decoding.pick(a, world, x, ua)?;
        let yb = decoding.pick(b, world, x, ub)?;
        let r = world.rewards(x);
        if ya == yb {
            ties += 1;
        } else if r[ya] > r[yb] {
            wins += 1;
        } else {
            losses += 1;
        }
    }
    Ok(WinRateResult::from_counts(wins, ties, losses))
}

/// `Σ p ln(p/q)` for two distributions given as log-probabilities.
pub fn kl_divergence(log_p: &[f64], log_q: &[f64]) -> f64 {
    let kl: f64 = log_p.iter().zip(log_q).map(|(lp, lq)| lp.exp() * (lp - lq)).sum();
    // Rounding can push a zero divergence a few ulps negative.
    kl.max(0.0)
}

/// Mean over `prompts` of `KL(π_params(·|x) || π_sft(·|x))`, inference mode.
pub fn kl_diagnostic(world: &World, params: &PolicyParams, sft: &PolicyParams, prompts: &[usize]) -> Result<f64> {
    ReferenceLogProbs::new(world, sft, prompts)?.kl(world, params)
}

/// Reference log-probabilities cached for repeated KL evaluation.
pub(crate) struct ReferenceLogProbs {
    prompts: Vec<usize>,
    log_probs: Vec<Vec<f64>>,
}

impl ReferenceLogProbs {
    pub(crate) fn new(world: &World, sft: &PolicyParams, prompts: &[usize]) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::usage("KL diagnostic needs at least one prompt"));
        }
        let log_probs = prompts
            .iter()
            .map(|&x| sft.log_probs(world, x, None))
            .collect::<Result<_>>()?;
        Ok(Self {
            prompts: prompts.to_vec(),
            log_probs,
        })
    }

    pub(crate) fn kl(&self, world: &World, params: &PolicyParams) -> Result<f64> {
        let mut total = 0.0;
        for (&x, lq) in self.prompts.iter().zip(&self.log_probs) {
            total += kl_divergence(&params.log_probs(world, x, None)?, lq);
        }
        Ok(total / self.prompts.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub mean: f64,
    pub ci_half_width: f64,
    pub n_runs: usize,
    pub confidence_level: f64,
}

impl AggregateResult {
    pub fn contains(&self, value: f64) -> bool {
        (value - self.mean).abs() <= self.ci_half_width
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_half_width
    }
}

/// Two-tailed Student-t critical value with `df` degrees of freedom.
pub fn t_critical(df: usize, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::usage(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let t = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::usage(format!("t distribution: {e}")))?;
    Ok(t.inverse_cdf(0.5 + level / 2.0))
}

/// Sample mean and two-tailed t confidence half-width.
pub fn aggregate(values: &[f64], level: f64) -> Result<AggregateResult> {
    if values.len() < 2 {
        return Err(Error::usage(format!("aggregate needs at least 2 values, got {}", values.len())));
    }
    let n = values.len();
    let sd = math::sample_std(values);
    let ci_half_width = if sd == 0.0 {
        0.0
    } else {
        t_critical(n - 1, level)? * sd / (n as f64).sqrt()
    };
    Ok(AggregateResult {
        mean: math::mean(values),
        ci_half_width,
        n_runs: n,
        confidence_level: level,
    })
}

/// Average ranks, ties sharing the mean of their positions (1-based).
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (math::mean(x), math::mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::usage("spearman needs two equally long series of length >= 2"));
    }
    let rho = pearson(&ranks(x), &ranks(y));
    if rho.is_nan() {
        return Err(Error::usage("spearman is undefined for a constant series"));
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_difference: f64,
    pub t_statistic: f64,
    pub df: usize,
    /// One-sided p-value for `mean(a − b) > 0`.
    pub p_value: f64,
}

/// Paired one-sided t-test of `mean(a − b) > 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::usage("paired test needs two equally long samples of length >= 2"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let mean = math::mean(&d);
    let sd = math::sample_std(&d);
    let df = n - 1;
    let (t, p) = if sd == 0.0 {
        // Degenerate: every difference identical.
        let p = if mean > 0.0 {
            0.0
        } else if mean < 0.0 {
            1.0
        } else {
            0.5
        };
        (mean.signum() * f64::INFINITY, p)
    } else {
        let t = mean / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::usage(format!("t distribution: {e}")))?;
        (t, 1.0 - dist.cdf(t))
    };
    Ok(PairedTest {
        mean_difference: mean,
        t_statistic: t,
        df,
        p_value: p,
    })
}

/// Pearson chi-square test of independence on a 2×2 contingency table
/// `[[a, b], [c, d]]`, without continuity correction. Returns `(statistic, p)`.
pub fn chi_square_2x2(table: [[u64; 2]; 2]) -> Result<(f64, f64)> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let n = (rows[0] + rows[1]) as f64;
    if rows.contains(&0) || cols.contains(&0) {
        return Err(Error::usage("chi-square table has an empty row or column"));
    }
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = rows[i] as f64 * cols[j] as f64 / n;
            stat += (table[i][j] as f64 - expected).powi(2) / expected;
        }
    }
    let dist = ChiSquared::new(1.0).map_err(|e| Error::usage(format!("chi-square distribution: {e}")))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;
    use crate::world::{build_world, WorldConfig};
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn world() -> World {
        build_world(&WorldConfig {
            embedding_dim: 4,
            n_train_prompts: 10,
            n_test_prompts: 200,
            k_candidates: 8,
            seed: 1,
        })
        .unwrap()
    }

    fn params(seed: u64) -> PolicyParams {
        PolicyParams::init(
            4,
            &PolicyConfig {
                hidden_width: 6,
                init_scale: 0.7,
                seed,
                ..PolicyConfig::default()
            },
        )
    }

    #[test]
    fn self_comparison_is_all_ties() {
        let w = world();
        let p = params(0);
        // Mirror the draw: both policies consume u_a.
        let u: Vec<(f64, f64)> = prompt_uniforms(w.test_prompts(), 4).into_iter().map(|(a, _)| (a, a)).collect();
        let r = win_rate_from_uniforms(&w, &p, &p, w.test_prompts(), Decoding::default(), &u).unwrap();
        assert_eq!(r.win_rate, 0.5);
        assert_eq!(r.ties, r.n_prompts);
    }

    #[test]
    fn swapping_policies_and_draws_is_complementary() {
        let w = world();
        let (a, b) = (params(1), params(2));
        let u = prompt_uniforms(w.test_prompts(), 9);
        let mirrored: Vec<(f64, f64)> = u.iter().map(|&(x, y)| (y, x)).collect();
        let ab = win_rate_from_uniforms(&w, &a, &b, w.test_prompts(), Decoding::default(), &u).unwrap();
        let ba = win_rate_from_uniforms(&w, &b, &a, w.test_prompts(), Decoding::default(), &mirrored).unwrap();
        assert_abs_diff_eq!(ab.win_rate + ba.win_rate, 1.0, epsilon = 1e-12);
        assert_eq!(ab.wins, ba.losses);
        assert_eq!(ab.wins + ab.ties + ab.losses, ab.n_prompts);
    }

    #[test]
    fn repeated_calls_are_identical() {
        let w = world();
        let (a, b) = (params(1), params(2));
        let r1 = win_rate(&w, &a, &b, w.test_prompts(), Decoding::default(), 3).unwrap();
        let r2 = win_rate(&w, &a, &b, w.test_prompts(), Decoding::default(), 3).unwrap();
        assert_eq!(r1, r2);
        assert!(win_rate(&w, &a, &b, &[], Decoding::Greedy, 3).is_err());
    }

    #[test]
    fn greedy_oracle_versus_uniform_matches_exact_expectation() {
        // The argmax-of-r* policy never loses; it ties when the uniform policy
        // also hits the argmax (probability 1/k), so E[win rate] = 1 − 1/(2k).
        let w = world();
        let k = w.k_candidates() as f64;
        let uniform = PolicyParams::zeros(4, 6);
        let u = prompt_uniforms(w.test_prompts(), 11);
        let (mut wins, mut ties) = (0usize, 0usize);
        for (&x, &(_, ub)) in w.test_prompts().iter().zip(&u) {
            let best = math::argmax(w.rewards(x));
            let yb = math::sample_index(&uniform.tempered_probs(&w, x, 0.7).unwrap(), ub);
            if yb == best {
                ties += 1;
            } else {
                wins += 1;
            }
        }
        let n = w.test_prompts().len() as f64;
        let rate = (wins as f64 + 0.5 * ties as f64) / n;
        let expected = 1.0 - 1.0 / (2.0 * k);
        // Binomial sd of the tie count is sqrt(n p (1−p)); each tie shifts the rate by 1/(2n).
        let sd = (n * (1.0 / k) * (1.0 - 1.0 / k)).sqrt() / (2.0 * n);
        assert!((rate - expected).abs() < 4.0 * sd, "{rate} vs {expected}");
    }

    #[test]
    fn kl_examples() {
        let p = [0.5f64, 0.3, 0.2].map(f64::ln);
        let q = [1.0f64 / 3.0; 3].map(f64::ln);
        let direct: f64 = [0.5f64, 0.3, 0.2].iter().map(|&pi| pi * (pi * 3.0).ln()).sum();
        assert_abs_diff_eq!(kl_divergence(&p, &q), direct, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_divergence(&p, &q), 0.068_959_274_6, epsilon = 1e-9);
        assert_eq!(kl_divergence(&q, &q), 0.0);
    }

    #[test]
    fn kl_diagnostic_identity_and_sign() {
        let w = world();
        let (a, b) = (params(1), params(2));
        assert!(kl_diagnostic(&w, &a, &a, w.test_prompts()).unwrap().abs() < 1e-12);
        assert!(kl_diagnostic(&w, &a, &b, w.test_prompts()).unwrap() > 0.0);
        assert!(kl_diagnostic(&w, &a, &b, &[]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[0.6, 0.7], 0.95).unwrap();
        assert_abs_diff_eq!(a.mean, 0.65, epsilon = 1e-12);
        assert_abs_diff_eq!(a.ci_half_width, 0.635_310_2, epsilon = 1e-6);
        let b = aggregate(&[0.5, 0.55, 0.6, 0.65, 0.7], 0.95).unwrap();
        assert_abs_diff_eq!(b.mean, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(b.ci_half_width, 0.098_162, epsilon = 1e-5);
        assert_eq!(aggregate(&[0.4; 5], 0.95).unwrap().ci_half_width, 0.0);
        assert!(aggregate(&[0.4], 0.95).is_err());
    }

    #[test]
    fn t_critical_table_values() {
        assert_abs_diff_eq!(t_critical(1, 0.95).unwrap(), 12.706_204_736, epsilon = 1e-6);
        assert_abs_diff_eq!(t_critical(4, 0.95).unwrap(), 2.776_445_105, epsilon = 1e-6);
        assert_abs_diff_eq!(t_critical(9, 0.95).unwrap(), 2.262_157_163, epsilon = 1e-6);
    }

    #[test]
    fn ci_shrinks_as_inverse_root_n() {
        let mut r = rng::rng_from_seed(5);
        let mut ratio = Vec::new();
        for _ in 0..200 {
            let small: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut r)).collect();
            let large: Vec<f64> = (0..400).map(|_| StandardNormal.sample(&mut r)).collect();
            let hs = aggregate(&small, 0.95).unwrap().ci_half_width;
            let hl = aggregate(&large, 0.95).unwrap().ci_half_width;
            ratio.push(hs / hl);
        }
        // √(400/100) = 2, times a small t-quantile correction.
        let expected = 2.0 * t_critical(99, 0.95).unwrap() / t_critical(399, 0.95).unwrap();
        assert_abs_diff_eq!(math::mean(&ratio), expected, epsilon = 0.05);
    }

    #[test]
    fn spearman_cases() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 5.0, 1.0]).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8, epsilon = 1e-12);
        // Ties get average ranks: y ranks (1.5, 1.5, 3).
        let rho = spearman(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(rho, 0.866_025_403_784_438_6, epsilon = 1e-12);
        assert!(spearman(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn paired_test_values() {
        // d = (0.1, 0.2, 0.3): mean 0.2, sd 0.1, t = 0.2/(0.1/√3) = 3.4641.
        let r = paired_t_test(&[0.6, 0.7, 0.8], &[0.5, 0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(r.t_statistic, 3.464_101_615, epsilon = 1e-8);
        // One-sided tail of t(2) at 3.4641: 0.5·(1 − t/√(t²+2)).
        let t: f64 = 3.464_101_615_137_754_6;
        assert_abs_diff_eq!(r.p_value, 0.5 * (1.0 - t / (t * t + 2.0).sqrt()), epsilon = 1e-9);
        assert_eq!(paired_t_test(&[1.0, 1.0], &[1.0, 1.0]).unwrap().p_value, 0.5);
    }

    #[test]
    fn chi_square_values() {
        // Perfectly proportional table → statistic 0.
        let (s, p) = chi_square_2x2([[10, 20], [30, 60]]).unwrap();
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
        // [[10,0],[0,10]]: each expected 5, stat = 4·25/5 = 20.
        let (s, p) = chi_square_2x2([[10, 0], [0, 10]]).unwrap();
        assert_abs_diff_eq!(s, 20.0, epsilon = 1e-12);
        assert!(p < 1e-5);
    }
}
