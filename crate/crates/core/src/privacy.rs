//! Local differential privacy accounting.
//!
//! All per-iteration guarantees share the Gaussian-mechanism core
//!
//! ```text
//! eps = (Delta / sigma) * sqrt(2 ln(1.25 / delta))
//! ```
//!
//! evaluated on the channel output: the signal part of client `i` arrives with
//! amplitude `sqrt(kappa_min)` per unit of gradient, the gradient difference
//! between neighbouring datasets is at most `2L`, and the effective noise
//! variance per channel use is `sum_i zeta_i kappa_i / r + sigma2`. The
//! projection may inflate the sensitivity; the three calculators differ only
//! in how much:
//!
//! - [`ldp_jl`]: by `sqrt(1 + eps_jl)` when `r` meets the JL condition;
//! - [`ldp_general`]: by the sub-exponential tail factor of [`sensitivity_inflation`];
//! - [`ldp_baseline`]: not at all (no projection, noise spread over `d` dimensions).

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Error, Result};
use crate::montecarlo::{run_blocks, trial_seed};
use crate::projection::{DistributionKind, ProjectionSpec};
use crate::rng::rng_from_seed;

/// Defaults used where a run does not fix the JL distortion or confidence exponent.
pub const DEFAULT_EPS_JL: f64 = 0.5;
pub const DEFAULT_JL_EXPONENT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    /// Per-iteration `delta^t`.
    pub delta_t: f64,
    /// Probability that the high-probability sensitivity bound fails.
    pub delta_prime: f64,
    /// JL distortion `eps` in `(0, 1)`.
    pub eps_jl: f64,
    /// JL confidence exponent `a > 0`.
    pub a: f64,
    /// Gradient norm bound `L`; neighbouring gradients differ by at most `2L`.
    pub grad_bound: f64,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        check_probability("delta_t", self.delta_t)?;
        check_probability("delta_prime", self.delta_prime)?;
        if !(self.eps_jl > 0.0 && self.eps_jl < 1.0) {
            return Err(invalid("eps_jl", "must lie in (0, 1)"));
        }
        if !(self.a > 0.0) {
            return Err(invalid("a", "must be positive"));
        }
        if !(self.grad_bound > 0.0) {
            return Err(invalid("grad_bound", "must be positive"));
        }
        Ok(())
    }
}

impl Default for PrivacyParams {
    fn default() -> Self {
        PrivacyParams {
            delta_t: 5e-5,
            delta_prime: 5e-5,
            eps_jl: DEFAULT_EPS_JL,
            a: DEFAULT_JL_EXPONENT,
            grad_bound: 1.0,
        }
    }
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must lie in (0, 1), got {p}")))
    }
}

/// Which formula produced a per-iteration epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// JL-condition bound.
    Jl,
    /// Sub-exponential bound, `r >= ln(1/delta')`.
    GeneralSqrt,
    /// Sub-exponential bound, `r < ln(1/delta')`.
    GeneralLinear,
    /// No dimensionality reduction.
    Baseline,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::Jl => "jl",
            Regime::GeneralSqrt => "general-sqrt",
            Regime::GeneralLinear => "general-linear",
            Regime::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub eps_per_iter: f64,
    pub eps_total: f64,
    pub delta_total: f64,
    pub regime: Regime,
}

impl PrivacyReport {
    /// `T` identical iterations composed with a sensitivity-failure tail.
    pub fn static_rounds(eps_per_iter: f64, delta_t: f64, rounds: usize, tail: f64, regime: Regime) -> Self {
        let t = rounds as f64;
        PrivacyReport { eps_per_iter, eps_total: t * eps_per_iter, delta_total: t * delta_t + tail, regime }
    }
}

/// Smallest `r` with `r >= (4 + 2a) (eps^2/2 - eps^3/3)^{-1} ln n`.
pub fn jl_min_dim(n: usize, eps_jl: f64, a: f64) -> Result<usize> {
    if n < 2 {
        return Err(invalid("n", "JL condition needs at least two clients"));
    }
    if !(eps_jl > 0.0 && eps_jl < 1.0) {
        return Err(invalid("eps_jl", "must lie in (0, 1)"));
    }
    if !(a > 0.0) {
        return Err(invalid("a", "must be positive"));
    }
    Ok(jl_bound(n, eps_jl, a).ceil() as usize)
}

/// The real-valued right-hand side of the JL condition.
pub fn jl_bound(n: usize, eps_jl: f64, a: f64) -> f64 {
    let denom = eps_jl * eps_jl / 2.0 - eps_jl.powi(3) / 3.0;
    (4.0 + 2.0 * a) / denom * (n as f64).ln()
}

/// Tail term of the JL regime, `T / n^a`.
pub fn jl_failure_tail(rounds: usize, n: usize, a: f64) -> f64 {
    rounds as f64 / (n as f64).powf(a)
}

/// `2 sqrt(2 kappa_min ln(1.25/delta) / (noise_sum + sigma2))`: the Gaussian
/// mechanism at sensitivity `2 sqrt(kappa_min)` without any projection inflation.
pub fn gaussian_epsilon(kappa_min: f64, noise_sum: f64, sigma2: f64, delta_t: f64) -> f64 {
    2.0 * (2.0 * kappa_min * (1.25 / delta_t).ln() / (noise_sum + sigma2)).sqrt()
}

fn check_mechanism(kappa_min: f64, noise_sum: f64, sigma2: f64, delta_t: f64) -> Result<()> {
    if !(kappa_min > 0.0) {
        return Err(invalid("kappa_min", "must be positive"));
    }
    if !(noise_sum >= 0.0) {
        return Err(invalid("noise_sum", "must be nonnegative"));
    }
    if !(sigma2 >= 0.0) || noise_sum + sigma2 <= 0.0 {
        return Err(invalid("sigma2", "effective noise variance must be positive"));
    }
    check_probability("delta_t", delta_t)
}

/// Per-iteration epsilon when `r` satisfies the JL condition. `noise_sum` is
/// `sum_i zeta_i kappa_i / r`. `eps_jl = 0` is accepted and gives the
/// uninflated mechanism.
pub fn ldp_jl(kappa_min: f64, noise_sum: f64, sigma2: f64, delta_t: f64, eps_jl: f64) -> Result<f64> {
    check_mechanism(kappa_min, noise_sum, sigma2, delta_t)?;
    if !(0.0..1.0).contains(&eps_jl) {
        return Err(invalid("eps_jl", "must lie in [0, 1)"));
    }
    Ok((1.0 + eps_jl).sqrt() * gaussian_epsilon(kappa_min, noise_sum, sigma2, delta_t))
}

/// Squared-sensitivity inflation `1 + 8s sqrt(ln(1/delta')/r)` for
/// `r >= ln(1/delta')`, `1 + 8s ln(1/delta')/r` below it.
pub fn sensitivity_inflation(kind: DistributionKind, r: usize, delta_prime: f64) -> (f64, Regime) {
    let s = f64::from(kind.sparsity());
    let log_term = (1.0 / delta_prime).ln();
    let r = r as f64;
    if r >= log_term {
        (1.0 + 8.0 * s * (log_term / r).sqrt(), Regime::GeneralSqrt)
    } else {
        (1.0 + 8.0 * s * log_term / r, Regime::GeneralLinear)
    }
}

/// Per-iteration epsilon for any `r`, from the sub-exponential tail of the
/// projected sensitivity.
#[allow(clippy::too_many_arguments)]
pub fn ldp_general(
    kind: DistributionKind,
    r: usize,
    delta_prime: f64,
    kappa_min: f64,
    noise_sum: f64,
    sigma2: f64,
    delta_t: f64,
) -> Result<(f64, Regime)> {
    if r == 0 {
        return Err(invalid("r", "must be >= 1"));
    }
    if !(delta_prime > 0.0 && delta_prime <= 1.0) {
        return Err(invalid("delta_prime", "must lie in (0, 1]"));
    }
    check_mechanism(kappa_min, noise_sum, sigma2, delta_t)?;
    let (factor, regime) = sensitivity_inflation(kind, r, delta_prime);
    Ok((factor.sqrt() * gaussian_epsilon(kappa_min, noise_sum, sigma2, delta_t), regime))
}

/// Per-iteration epsilon without dimensionality reduction. `beta_noise_sum` is
/// `sum_i beta_i kappa_i / d`.
pub fn ldp_baseline(d: usize, kappa_min: f64, beta_noise_sum: f64, sigma2: f64, delta_t: f64) -> Result<f64> {
    if d == 0 {
        return Err(invalid("d", "must be >= 1"));
    }
    check_mechanism(kappa_min, beta_noise_sum, sigma2, delta_t)?;
    Ok(gaussian_epsilon(kappa_min, beta_noise_sum, sigma2, delta_t))
}

/// Rescales an epsilon computed at sensitivity `2L` to a tighter gradient
/// sensitivity `delta_g`.
pub fn rescale_sensitivity(eps: f64, delta_g: f64, grad_bound: f64) -> f64 {
    eps * delta_g / (2.0 * grad_bound)
}

/// Reduced dimensions below which the projected scheme has strictly smaller
/// per-iteration epsilon than the baseline with the same noise budgets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    /// Threshold against [`ldp_general`].
    pub general: f64,
    /// Threshold against [`ldp_jl`].
    pub jl: f64,
}

impl Crossover {
    /// Largest integer strictly below a threshold (0 when none).
    pub fn max_integer_below(threshold: f64) -> usize {
        if !(threshold > 0.0) {
            0
        } else if threshold.is_infinite() {
            usize::MAX
        } else {
            (threshold.ceil() - 1.0).max(0.0) as usize
        }
    }
}

/// Solves `eps_dprp(r) < eps_baseline` for `r`.
///
/// With `Z = sum zeta_i kappa_i`, `B = sum beta_i kappa_i / d`, `q = B + sigma2`
/// and `l = ln(1/delta')`, the JL comparison reduces to
/// `(1 + eps)(B + sigma2) < Z/r + sigma2`, i.e. `r < Z / ((1 + eps) B + eps sigma2)`.
/// The general comparison is `B r + 8 s sqrt(l) q sqrt(r) < Z` above the knee
/// `r = l` (a quadratic in `sqrt(r)`) and `B r < Z - 8 s l q` below it. Both
/// solution sets are intervals `[0, threshold)`.
#[allow(clippy::too_many_arguments)]
pub fn crossover_r(
    zeta_kappas: &[f64],
    beta_kappas: &[f64],
    d: usize,
    sigma2: f64,
    delta_prime: f64,
    s: u32,
    eps_jl: f64,
) -> Result<Crossover> {
    ensure_len(zeta_kappas.len(), beta_kappas.len())?;
    if d == 0 {
        return Err(invalid("d", "must be >= 1"));
    }
    let z: f64 = zeta_kappas.iter().sum();
    let b: f64 = beta_kappas.iter().sum::<f64>() / d as f64;
    if !(z > 0.0) {
        return Ok(Crossover { general: 0.0, jl: 0.0 });
    }

    let jl_denominator = (1.0 + eps_jl) * b + eps_jl * sigma2;
    let jl = if jl_denominator > 0.0 { z / jl_denominator } else { f64::INFINITY };

    let s = f64::from(s);
    let l = (1.0 / delta_prime).ln();
    let q = b + sigma2;
    let lin = 8.0 * s * l.max(0.0).sqrt() * q;
    let root = if lin == 0.0 && b == 0.0 {
        f64::INFINITY
    } else {
        2.0 * z / (lin + (lin * lin + 4.0 * b * z).sqrt())
    };
    let above_knee = root * root;
    let general = if above_knee >= l {
        above_knee
    } else if b > 0.0 {
        ((z - 8.0 * s * l * q) / b).max(0.0)
    } else {
        0.0
    };
    Ok(Crossover { general, jl })
}

/// Basic composition: `(sum eps_t, sum delta_t + tail)`.
pub fn compose(eps_per_iter: &[f64], delta_per_iter: &[f64], tail: f64) -> Result<(f64, f64)> {
    ensure_len(eps_per_iter.len(), delta_per_iter.len())?;
    Ok((eps_per_iter.iter().sum(), delta_per_iter.iter().sum::<f64>() + tail))
}

/// Per-iteration `delta^t` that spends a total `delta_total` over `rounds`
/// iterations after reserving `tail`.
pub fn per_iteration_delta(delta_total: f64, tail: f64, rounds: usize) -> Result<f64> {
    if rounds == 0 {
        return Err(Error::EmptyRounds);
    }
    let spend = delta_total - tail;
    if !(spend > 0.0) {
        return Err(invalid("delta_total", format!("total {delta_total} does not exceed the tail term {tail}")));
    }
    Ok(spend / rounds as f64)
}

pub const MIN_TAIL_TRIALS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    /// Threshold on `||U_r v||^2 / (r ||v||^2)`.
    pub threshold_factor: f64,
    /// Violation rate for a difference vector spread evenly over all coordinates.
    pub rate_spread: f64,
    /// Violation rate for a difference vector concentrated on one coordinate.
    pub rate_spike: f64,
    pub trials: usize,
}

impl TailCheck {
    /// Worst violation rate over the tested difference vectors.
    pub fn rate(&self) -> f64 {
        self.rate_spread.max(self.rate_spike)
    }
}

/// Empirical frequency with which `S = ||U_r (g - g')||^2` reaches the
/// high-probability sensitivity threshold `r ||g - g'||^2 (1 + 8s ...)`, for a
/// worst-case difference `||g - g'|| = 2L` (with `L = 1`).
pub fn sensitivity_tail_check(
    kind: DistributionKind,
    r: usize,
    d: usize,
    delta_prime: f64,
    trials: usize,
    seed: u64,
) -> Result<TailCheck> {
    Ok(sensitivity_tail_rates(kind, r, d, &[delta_prime], trials, seed)?.remove(0))
}

/// [`sensitivity_tail_check`] for several `delta'` on the same matrix draws.
pub fn sensitivity_tail_rates(
    kind: DistributionKind,
    r: usize,
    d: usize,
    delta_primes: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<TailCheck>> {
    if trials < MIN_TAIL_TRIALS {
        return Err(Error::TooFewTrials { got: trials, min: MIN_TAIL_TRIALS });
    }
    if delta_primes.is_empty() {
        return Err(invalid("delta_prime", "at least one value is required"));
    }
    if delta_primes.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(invalid("delta_prime", "must lie in (0, 1]"));
    }
    if r == 0 || d == 0 {
        return Err(Error::InvalidDimensions { r, d });
    }
    ProjectionSpec::new(kind, 1, 1, 0)?;
    let diff_norm_sq = 4.0;
    let factors: Vec<f64> = delta_primes.iter().map(|p| sensitivity_inflation(kind, r, *p).0).collect();
    let thresholds: Vec<f64> = factors.iter().map(|f| r as f64 * diff_norm_sq * f).collect();
    let spread_entry = 2.0 / (d as f64).sqrt();

    // Same entry stream as `ProjectionMatrix::generate`, without the `r <= d`
    // restriction: the tail bound holds for any `r`.
    let counts = run_blocks(trials, |range| {
        let mut hits = vec![(0usize, 0usize); thresholds.len()];
        let mut row = vec![0.0; d];
        for i in range {
            let mut rng = rng_from_seed(trial_seed(seed, i));
            let mut s_spread = 0.0;
            let mut s_spike = 0.0;
            for _ in 0..r {
                kind.fill(&mut rng, &mut row);
                let dot: f64 = row.iter().sum::<f64>() * spread_entry;
                s_spread += dot * dot;
                s_spike += 4.0 * row[0] * row[0];
            }
            for (h, t) in hits.iter_mut().zip(&thresholds) {
                h.0 += usize::from(s_spread >= *t);
                h.1 += usize::from(s_spike >= *t);
            }
        }
        hits
    });
    let mut totals = vec![(0usize, 0usize); thresholds.len()];
    for block in &counts {
        for (t, h) in totals.iter_mut().zip(block) {
            t.0 += h.0;
            t.1 += h.1;
        }
    }
    Ok(totals
        .iter()
        .zip(&factors)
        .map(|(&(spread_hits, spike_hits), &factor)| TailCheck {
            threshold_factor: factor,
            rate_spread: spread_hits as f64 / trials as f64,
            rate_spike: spike_hits as f64 / trials as f64,
            trials,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn jl_dimension_for_thousand_clients() {
        assert_eq!(jl_min_dim(1000, 0.5, 1.0).unwrap(), 498);
        assert!(jl_min_dim(1, 0.5, 1.0).is_err());
        assert!(jl_min_dim(10, 1.0, 1.0).is_err());
        assert!(jl_min_dim(10, 0.5, 0.0).is_err());
    }

    #[test]
    fn jl_dimension_decreases_in_eps() {
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let eps = k as f64 / 100.0;
            let b = jl_bound(2, eps, 1e-9);
            assert!(b < prev);
            prev = b;
        }
        // a -> 0 limit at n = 2.
        let eps: f64 = 0.9999;
        let limit = 4.0 / (eps * eps / 2.0 - eps.powi(3) / 3.0) * 2f64.ln();
        assert!(close(jl_bound(2, eps, 1e-12), limit, 1e-9));
    }

    #[test]
    fn ldp_jl_substitution() {
        let eps = ldp_jl(1.0, 99.0, 1.0, 0.05, 0.0).unwrap();
        assert!(close(eps, 0.507_454_496_471_807_8, 1e-12), "{eps}");
        let no_noise = ldp_jl(2.0, 0.0, 1.0, 0.05, 0.0).unwrap();
        assert!(close(no_noise, 2.0 * (2.0 * 2.0 * 25f64.ln()).sqrt(), 1e-14));
        let a = ldp_jl(1.0, 3.0, 1.0, 0.01, 0.5).unwrap();
        let b = ldp_jl(1.0, 7.0, 1.0, 0.01, 0.5).unwrap();
        assert!(close(b, a / 2f64.sqrt(), 1e-14));
        assert!(ldp_jl(0.0, 1.0, 1.0, 0.01, 0.5).is_err());
        assert!(ldp_jl(1.0, -1.0, 1.0, 0.01, 0.5).is_err());
        assert!(ldp_jl(1.0, 1.0, 1.0, 1.5, 0.5).is_err());
    }

    #[test]
    fn ldp_general_substitution() {
        let (eps, regime) =
            ldp_general(DistributionKind::Achlioptas { s: 2 }, 100, 5e-5, 1.0, 99.0, 1.0, 5e-5).unwrap();
        assert_eq!(regime, Regime::GeneralSqrt);
        let (factor, _) = sensitivity_inflation(DistributionKind::Achlioptas { s: 2 }, 100, 5e-5);
        assert!(close(factor.sqrt(), 2.456_658_121_656_725_6, 1e-12));
        assert!(close(eps, 2.211_170_394_075_631, 1e-12), "{eps}");
    }

    #[test]
    fn ldp_general_continuous_at_knee() {
        // r = ln(1/delta') exactly: delta' = e^{-9}.
        let delta_prime = (-9.0f64).exp();
        let (inclusive, regime) =
            ldp_general(DistributionKind::Rademacher, 9, delta_prime, 1.0, 2.0, 1.0, 1e-3).unwrap();
        assert_eq!(regime, Regime::GeneralSqrt);
        let linear = (1.0 + 8.0 * (1.0 / delta_prime).ln() / 9.0).sqrt() * gaussian_epsilon(1.0, 2.0, 1.0, 1e-3);
        assert!(close(inclusive, linear, 1e-12));
        let (_, below) = ldp_general(DistributionKind::Rademacher, 8, delta_prime, 1.0, 2.0, 1.0, 1e-3).unwrap();
        assert_eq!(below, Regime::GeneralLinear);
    }

    #[test]
    fn ldp_general_large_r_limit() {
        let (general, _) = ldp_general(DistributionKind::Rademacher, 100_000_000, 0.05, 1.3, 4.0, 1.0, 1e-4).unwrap();
        let jl = ldp_jl(1.3, 4.0, 1.0, 1e-4, 0.0).unwrap();
        assert!((general / jl - 1.0).abs() < 1e-3);
        assert!(general > jl);
    }

    #[test]
    fn baseline_substitution() {
        let eps = ldp_baseline(10_000, 1.0, 1.0, 1.0, 5e-5).unwrap();
        assert!(close(eps, 6.364_473_616_521_742, 1e-12), "{eps}");
        let zero = ldp_baseline(10_000, 1.7, 0.0, 1.0, 1e-3).unwrap();
        assert_eq!(zero, ldp_jl(1.7, 0.0, 1.0, 1e-3, 0.0).unwrap());
        // Same expression as the JL bound at eps_jl = 0 with matched per-dimension noise.
        assert_eq!(ldp_baseline(50, 2.0, 0.3, 1.0, 1e-3).unwrap(), ldp_jl(2.0, 0.3, 1.0, 1e-3, 0.0).unwrap());
    }

    #[test]
    fn crossover_frozen_cases() {
        // Thresholds frozen from an independent brute-force scan over r of the
        // two epsilon formulas (relative grid step 1e-4 or finer).
        let c = crossover_r(&[1000.0], &[1000.0], 10_000, 1.0, 5e-5, 1, 0.5).unwrap();
        assert!(close(c.general, 1045.50, 2e-4), "{}", c.general);
        assert!(close(c.jl, 1538.45, 2e-4), "{}", c.jl);

        let c = crossover_r(&[20.0, 30.0], &[10.0, 10.0], 10_000, 1.0, 0.05, 2, 0.3).unwrap();
        assert!(close(c.general, 3.2457, 2e-4), "{}", c.general);
        assert!(close(c.jl, 165.23, 2e-4), "{}", c.jl);

        let c = crossover_r(&[0.3, 0.3, 0.4], &[1.0, 2.0, 7.0], 10_000, 1.0, 0.05, 1, 0.5).unwrap();
        assert_eq!(c.general, 0.0);
        assert!(close(c.jl, 1.0 / 0.5015, 1e-12), "{}", c.jl);
        assert_eq!(Crossover::max_integer_below(c.jl), 1);

        // Below-the-knee branch.
        let c = crossover_r(&[230.0], &[10.0], 10, 1.0, 1e-6, 1, 0.5).unwrap();
        assert!(close(c.general, 8.95183, 1e-5), "{}", c.general);
    }

    #[test]
    fn crossover_zero_noise() {
        let c = crossover_r(&[0.0, 0.0], &[1.0, 1.0], 100, 1.0, 0.01, 1, 0.5).unwrap();
        assert_eq!(c, Crossover { general: 0.0, jl: 0.0 });
    }

    #[test]
    fn compose_cases() {
        assert_eq!(compose(&[], &[], 2e-5).unwrap(), (0.0, 2e-5));
        let (e, d) = compose(&[0.1, 0.2], &[1e-5, 1e-5], 2e-5).unwrap();
        assert!(close(e, 0.3, 1e-15) && close(d, 4e-5, 1e-15));
        let r = PrivacyReport::static_rounds(0.25, 1e-5, 4, 3e-5, Regime::Jl);
        assert_eq!(r.eps_total, 1.0);
        assert!(close(r.delta_total, 7e-5, 1e-14));
        assert!(compose(&[0.1], &[], 0.0).is_err());
    }

    #[test]
    fn delta_budgeting() {
        assert!(close(per_iteration_delta(0.1, 0.05, 1000).unwrap(), 5e-5, 1e-12));
        assert!(per_iteration_delta(0.01, 0.05, 10).is_err());
        assert!(per_iteration_delta(0.1, 0.0, 0).is_err());
    }

    #[test]
    fn tail_check_rejects_small_trials() {
        assert!(matches!(
            sensitivity_tail_check(DistributionKind::Rademacher, 10, 16, 0.05, 100, 1),
            Err(Error::TooFewTrials { .. })
        ));
    }

    #[test]
    fn tail_check_at_mean() {
        // delta' = 1 puts the threshold at the mean; some draws stay below it.
        let check = sensitivity_tail_check(DistributionKind::Gaussian, 5, 16, 1.0, 10_000, 3).unwrap();
        assert_eq!(check.threshold_factor, 1.0);
        assert!(check.rate() < 1.0);
        assert!(check.rate_spread > 0.0);
    }

    #[test]
    fn tail_check_sound_small() {
        for kind in [DistributionKind::Rademacher, DistributionKind::Gaussian, DistributionKind::Achlioptas { s: 3 }] {
            let check = sensitivity_tail_check(kind, 10, 16, 0.05, 10_000, 5).unwrap();
            assert!(check.rate() <= 0.05, "{kind}: {check:?}");
        }
    }

    proptest! {
        #[test]
        fn epsilon_monotone(kappa in 0.01f64..10.0, noise in 0.0f64..100.0, bump in 0.01f64..10.0) {
            let base = ldp_jl(kappa, noise, 1.0, 1e-4, 0.5).unwrap();
            prop_assert!(ldp_jl(kappa, noise + bump, 1.0, 1e-4, 0.5).unwrap() < base);
            prop_assert!(ldp_jl(kappa + bump, noise, 1.0, 1e-4, 0.5).unwrap() > base);
        }

        #[test]
        fn crossover_matches_direct_comparison(
            zk in prop::collection::vec(0.0f64..5.0, 1..20),
            bk in prop::collection::vec(0.0f64..5.0, 20),
            d in 10usize..5000,
            sigma2 in 0.1f64..3.0,
            eps_jl in 0.05f64..0.95,
            r in 1usize..2000,
            delta_prime in 1e-6f64..0.5,
            s in 1u32..4,
        ) {
            let bk = &bk[..zk.len()];
            let kappa_min = 0.7;
            let delta = 1e-4;
            let c = crossover_r(&zk, bk, d, sigma2, delta_prime, s, eps_jl).unwrap();
            let noise = zk.iter().sum::<f64>() / r as f64;
            let base = ldp_baseline(d, kappa_min, bk.iter().sum::<f64>() / d as f64, sigma2, delta).unwrap();
            let jl = ldp_jl(kappa_min, noise, sigma2, delta, eps_jl).unwrap();
            let (general, _) = ldp_general(DistributionKind::achlioptas(s).unwrap(), r, delta_prime, kappa_min, noise, sigma2, delta).unwrap();
            let rf = r as f64;
            // Skip points within rounding distance of a threshold.
            if (rf - c.jl).abs() > 1e-6 * c.jl.max(1.0) {
                prop_assert_eq!(jl < base, rf < c.jl);
            }
            if (rf - c.general).abs() > 1e-6 * c.general.max(1.0) {
                prop_assert_eq!(general < base, rf < c.general);
            }
        }

        #[test]
        fn remark_upper_bound(
            zk in prop::collection::vec(0.01f64..5.0, 1..30),
            r in 1usize..500,
            eps_jl in 0.0f64..0.99,
            kappa_min in 0.01f64..3.0,
        ) {
            let n = zk.len() as f64;
            let min_zk = zk.iter().copied().fold(f64::INFINITY, f64::min);
            let eps = ldp_jl(kappa_min, zk.iter().sum::<f64>() / r as f64, 1.0, 1e-5, eps_jl).unwrap();
            let bound = 2.0 * (r as f64 * (1.0 + eps_jl) / n).sqrt()
                * (2.0 * kappa_min * (1.25f64 / 1e-5).ln() / min_zk).sqrt();
            prop_assert!(eps <= bound * (1.0 + 1e-12));
        }
    }
}
