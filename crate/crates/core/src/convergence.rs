//! Optimality-gap bounds for FedSGD with learning rate `1/(lambda t)`.
//!
//! For an `L`-smooth, `lambda`-strongly convex loss the gap after `T` rounds
//! satisfies `xi(T) <= (2L / (lambda^2 T^2)) sum_t E||g_hat^t||^2`. The second
//! moment of the decoded gradient splits into a projection term and an
//! equivalent-noise term:
//!
//! ```text
//! E||g_hat||^2 = (E||U_j||^4 + r(d-1)) / (n r)^2 * ||sum_i g_i||^2 + d (noise_sum + sigma2) / (n c)^2
//! ```
//!
//! with `E||U_j||^4 = r^2` (Rademacher), `r^2 + r(s-1)` (Achlioptas) and
//! `r^2 + 2r` (Gaussian). Bounding `||sum_i g_i|| <= n L` gives the per-round
//! bound of [`second_moment_bound`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::projection::DistributionKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    /// `L`: gradient Lipschitz constant, also used as the gradient norm bound.
    pub smoothness: f64,
    /// `lambda`.
    pub strong_convexity: f64,
}

impl LossProfile {
    pub fn new(smoothness: f64, strong_convexity: f64) -> Result<Self> {
        if !(strong_convexity > 0.0) {
            return Err(invalid("strong_convexity", "must be positive"));
        }
        if !(smoothness >= strong_convexity) {
            return Err(invalid("smoothness", "must be at least the strong convexity constant"));
        }
        Ok(LossProfile { smoothness, strong_convexity })
    }

    /// `2L / lambda^2`.
    fn prefactor(&self) -> f64 {
        2.0 * self.smoothness / (self.strong_convexity * self.strong_convexity)
    }
}

/// Channel and projection state of one round as it enters the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTerms {
    pub d: usize,
    pub r: usize,
    pub n: usize,
    /// Alignment constant `c = sqrt(kappa_min) / L`.
    pub c: f64,
    /// `sum_i zeta_i kappa_i / r`.
    pub noise_sum: f64,
    pub sigma2: f64,
}

impl RoundTerms {
    fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r > self.d {
            return Err(Error::InvalidDimensions { r: self.r, d: self.d });
        }
        if self.n == 0 {
            return Err(invalid("n", "must be >= 1"));
        }
        if !(self.c > 0.0) {
            return Err(invalid("c", "must be positive"));
        }
        if !(self.noise_sum >= 0.0 && self.sigma2 >= 0.0) {
            return Err(invalid("noise", "noise powers must be nonnegative"));
        }
        Ok(())
    }
}

/// `E||U_j||^4 / r - r`: 0 for Rademacher, `s - 1` for Achlioptas, 2 for Gaussian.
fn fourth_moment_excess(kind: DistributionKind) -> f64 {
    match kind {
        DistributionKind::Gaussian => 2.0,
        DistributionKind::Rademacher => 0.0,
        DistributionKind::Achlioptas { s } => f64::from(s) - 1.0,
    }
}

/// Projection part of the per-round bound, `L^2 (1 + (d + s - 2)/r)` or
/// `L^2 (1 + (d + 1)/r)` for Gaussian matrices.
pub fn gradient_term(kind: DistributionKind, d: usize, r: usize, grad_bound: f64) -> f64 {
    let extra = (d as f64 - 1.0 + fourth_moment_excess(kind)) / r as f64;
    grad_bound * grad_bound * (1.0 + extra)
}

/// Equivalent-noise part `d (noise_sum + sigma2) / (n c)^2`.
pub fn noise_term(d: usize, n: usize, c: f64, noise_sum: f64, sigma2: f64) -> f64 {
    let nc = n as f64 * c;
    d as f64 * (noise_sum + sigma2) / (nc * nc)
}

/// Upper bound on `E||g_hat||^2` for one round.
#[allow(clippy::too_many_arguments)]
pub fn second_moment_bound(
    kind: DistributionKind,
    d: usize,
    r: usize,
    n: usize,
    c: f64,
    noise_sum: f64,
    sigma2: f64,
    grad_bound: f64,
) -> Result<f64> {
    RoundTerms { d, r, n, c, noise_sum, sigma2 }.validate()?;
    Ok(gradient_term(kind, d, r, grad_bound) + noise_term(d, n, c, noise_sum, sigma2))
}

/// Exact `E||g_hat||^2` for fixed client gradients, before the `||g_i|| <= L`
/// step. `grad_sum_sq` is `||sum_i g_i||^2`.
#[allow(clippy::too_many_arguments)]
pub fn exact_second_moment(
    kind: DistributionKind,
    d: usize,
    r: usize,
    n: usize,
    c: f64,
    noise_sum: f64,
    sigma2: f64,
    grad_sum_sq: f64,
) -> f64 {
    let rf = r as f64;
    let nr = n as f64 * rf;
    let coeff = rf * rf + rf * (d as f64 - 1.0) + rf * fourth_moment_excess(kind);
    coeff / (nr * nr) * grad_sum_sq + noise_term(d, n, c, noise_sum, sigma2)
}

/// Per-round second-moment bound without projection: `L^2 + d (B + sigma2)/(n c)^2`
/// with `B = sum_i beta_i kappa_i / d`.
pub fn baseline_second_moment(d: usize, n: usize, c: f64, beta_noise_sum: f64, sigma2: f64, grad_bound: f64) -> f64 {
    grad_bound * grad_bound + noise_term(d, n, c, beta_noise_sum, sigma2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: DistributionKind,
    /// Reduced dimension when every round uses the same `r`.
    pub r: Option<usize>,
    pub rounds: usize,
    /// `sum_t` of the projection terms.
    pub term_gradient: f64,
    /// `sum_t` of the equivalent-noise terms.
    pub term_noise: f64,
    /// `(2L / (lambda^2 T^2)) (term_gradient + term_noise)`.
    pub xi_bound: f64,
}

/// Gap bound over the given rounds (one entry per round, `T = rounds.len()`).
pub fn convergence_bound(kind: DistributionKind, profile: &LossProfile, rounds: &[RoundTerms]) -> Result<BoundReport> {
    let first = rounds.first().ok_or(Error::EmptyRounds)?;
    let mut term_gradient = 0.0;
    let mut term_noise = 0.0;
    let mut same_r = true;
    for round in rounds {
        round.validate()?;
        same_r &= round.r == first.r;
        term_gradient += gradient_term(kind, round.d, round.r, profile.smoothness);
        term_noise += noise_term(round.d, round.n, round.c, round.noise_sum, round.sigma2);
    }
    let t = rounds.len() as f64;
    Ok(BoundReport {
        kind,
        r: same_r.then_some(first.r),
        rounds: rounds.len(),
        term_gradient,
        term_noise,
        xi_bound: profile.prefactor() / (t * t) * (term_gradient + term_noise),
    })
}

/// Closed form of [`convergence_bound`] for `rounds` identical rounds:
/// `(2L / (lambda^2 T)) M`.
pub fn static_bound(kind: DistributionKind, profile: &LossProfile, round: &RoundTerms, rounds: usize) -> Result<BoundReport> {
    if rounds == 0 {
        return Err(Error::EmptyRounds);
    }
    round.validate()?;
    let t = rounds as f64;
    let grad = gradient_term(kind, round.d, round.r, profile.smoothness);
    let noise = noise_term(round.d, round.n, round.c, round.noise_sum, round.sigma2);
    Ok(BoundReport {
        kind,
        r: Some(round.r),
        rounds,
        term_gradient: t * grad,
        term_noise: t * noise,
        xi_bound: profile.prefactor() / t * (grad + noise),
    })
}

/// Static-round gap bound of the scheme without projection.
pub fn baseline_bound(profile: &LossProfile, d: usize, n: usize, c: f64, beta_noise_sum: f64, sigma2: f64, rounds: usize) -> Result<f64> {
    if rounds == 0 {
        return Err(Error::EmptyRounds);
    }
    Ok(profile.prefactor() / rounds as f64 * baseline_second_moment(d, n, c, beta_noise_sum, sigma2, profile.smoothness))
}

/// Utility-privacy trade-off at a target `T`-fold epsilon: both terms of the
/// bound for the projected scheme and for the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffBound {
    /// `(2L^3 / (lambda^2 T)) (1 + (d + s - 2)/r)`.
    pub first: f64,
    /// `16 d L^3 ln(1.25/delta) (1 + eps_jl) T / (lambda^2 n^2 eps_T^2)`.
    pub second: f64,
    /// `2L^3 / (lambda^2 T)`.
    pub baseline_first: f64,
    /// Second term without the `(1 + eps_jl)` factor.
    pub baseline_second: f64,
}

impl TradeoffBound {
    pub fn value(&self) -> f64 {
        self.first + self.second
    }

    pub fn baseline(&self) -> f64 {
        self.baseline_first + self.baseline_second
    }
}

/// Coefficients `(A, B)` of `A/T + B T`.
#[allow(clippy::too_many_arguments)]
fn tradeoff_coefficients(
    profile: &LossProfile,
    d: usize,
    r: usize,
    s: u32,
    n: usize,
    eps_total: f64,
    delta_t: f64,
    eps_jl: f64,
) -> (f64, f64, f64, f64) {
    let l3 = profile.smoothness.powi(3);
    let lam2 = profile.strong_convexity * profile.strong_convexity;
    let base_a = 2.0 * l3 / lam2;
    let a = base_a * (1.0 + (d as f64 + f64::from(s) - 2.0) / r as f64);
    let nf = n as f64;
    let base_b = 16.0 * d as f64 * l3 * (1.25 / delta_t).ln() / (lam2 * nf * nf * eps_total * eps_total);
    (a, base_b * (1.0 + eps_jl), base_a, base_b)
}

#[allow(clippy::too_many_arguments)]
pub fn utility_privacy_bound(
    profile: &LossProfile,
    d: usize,
    r: usize,
    s: u32,
    n: usize,
    rounds: usize,
    eps_total: f64,
    delta_t: f64,
    eps_jl: f64,
) -> Result<TradeoffBound> {
    if !(eps_total > 0.0) {
        return Err(invalid("eps_total", "must be positive"));
    }
    if rounds == 0 {
        return Err(Error::EmptyRounds);
    }
    if r == 0 || r > d {
        return Err(Error::InvalidDimensions { r, d });
    }
    let (a, b, base_a, base_b) = tradeoff_coefficients(profile, d, r, s, n, eps_total, delta_t, eps_jl);
    let t = rounds as f64;
    Ok(TradeoffBound { first: a / t, second: b * t, baseline_first: base_a / t, baseline_second: base_b * t })
}

/// Integer horizon minimizing [`utility_privacy_bound`]; `None` when the
/// privacy term vanishes and the bound keeps decreasing in `T`.
#[allow(clippy::too_many_arguments)]
pub fn optimal_t(
    profile: &LossProfile,
    d: usize,
    r: usize,
    s: u32,
    n: usize,
    eps_total: f64,
    delta_t: f64,
    eps_jl: f64,
) -> Result<Option<u64>> {
    if r == 0 || r > d {
        return Err(Error::InvalidDimensions { r, d });
    }
    if eps_total.is_infinite() {
        return Ok(None);
    }
    if !(eps_total > 0.0) {
        return Err(invalid("eps_total", "must be positive"));
    }
    let (a, b, _, _) = tradeoff_coefficients(profile, d, r, s, n, eps_total, delta_t, eps_jl);
    if b <= 0.0 {
        return Ok(None);
    }
    let f = |t: f64| a / t + b * t;
    let star = (a / b).sqrt();
    let lo = star.floor().max(1.0);
    let hi = star.ceil().max(1.0);
    Ok(Some(if f(hi) < f(lo) { hi as u64 } else { lo as u64 }))
}
