//! Static noise allocation and reduced-dimension selection.
//!
//! Minimizes the static convergence bound
//!
//! ```text
//! (2L / (lambda^2 T)) [ L^2 (1 + (d + s - 2)/r) + d/(n c)^2 (sum_i zeta_i kappa_i / r + sigma2) ]
//! ```
//!
//! over `r` and `zeta`, subject to `gamma_i + zeta_i <= 1`, the per-client
//! per-iteration LDP target, and the JL lower bound on `r`. For a fixed `r`
//! the LDP targets reduce to one aggregate requirement
//! `sum_i zeta_i kappa_i / r >= Omega` (the water level) and the objective is
//! increasing in the aggregate noise, so the cheapest allocation meets the
//! level exactly. [`fill`] pours noise into clients in order of remaining
//! power until the level is reached; [`solve`] scans `r` upward.

use serde::{Deserialize, Serialize};

use crate::convergence::{gradient_term, noise_term, LossProfile};
use crate::error::{ensure_len, invalid, Result};
use crate::privacy::jl_min_dim;

/// Relative slack accepted when comparing the filled noise with the water level.
const LEVEL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    /// Static SNRs `kappa_i`.
    pub kappas: Vec<f64>,
    /// Signal fractions from alignment.
    pub gammas: Vec<f64>,
    pub d: usize,
    /// Achlioptas sparsity (1 for Rademacher).
    pub s: u32,
    pub profile: LossProfile,
    /// Horizon `T`.
    pub rounds: usize,
    /// Per-client `T`-fold targets `eps_i^T`.
    pub eps_target: Vec<f64>,
    pub delta_t: f64,
    pub eps_jl: f64,
    pub a: f64,
    /// Alignment constant `c`.
    pub c: f64,
    pub sigma2: f64,
    /// Upper end of the `r` scan (further capped at `d`).
    pub r_max: usize,
}

impl AllocationProblem {
    pub fn n(&self) -> usize {
        self.kappas.len()
    }

    pub fn kappa_min(&self) -> f64 {
        self.kappas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.kappas.len();
        if n == 0 {
            return Err(invalid("kappas", "at least one client is required"));
        }
        ensure_len(n, self.gammas.len())?;
        ensure_len(n, self.eps_target.len())?;
        if self.kappas.iter().any(|k| !(*k > 0.0)) {
            return Err(invalid("kappas", "must be positive"));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0 && *g <= 1.0)) {
            return Err(invalid("gammas", "must lie in (0, 1]"));
        }
        if self.eps_target.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("eps_target", "must be positive"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be >= 1"));
        }
        if !(self.c > 0.0) {
            return Err(invalid("c", "must be positive"));
        }
        Ok(())
    }

    /// `kappa_i (1 - gamma_i)`: power left for noise after alignment.
    pub fn headroom(&self) -> Vec<f64> {
        self.kappas
            .iter()
            .zip(&self.gammas)
            .map(|(k, g)| k * (1.0 - g).max(0.0))
            .collect()
    }

    /// Objective at reduced dimension `r` with aggregate noise `sum_i zeta_i kappa_i / r`.
    pub fn objective(&self, r: usize, noise_sum: f64) -> f64 {
        let p = &self.profile;
        let kind = crate::projection::DistributionKind::Achlioptas { s: self.s.max(1) };
        let bracket = gradient_term(kind, self.d, r, p.smoothness) + noise_term(self.d, self.n(), self.c, noise_sum, self.sigma2);
        2.0 * p.smoothness / (p.strong_convexity * p.strong_convexity * self.rounds as f64) * bracket
    }

    /// Lowest admissible `r` (JL condition) and the top of the scan.
    pub fn r_range(&self) -> Result<(usize, usize)> {
        let lo = jl_min_dim(self.n().max(2), self.eps_jl, self.a)?.max(1);
        let hi = self.r_max.min(self.d);
        if lo > hi {
            return Err(invalid("r_max", format!("the JL condition needs r >= {lo}, above min(r_max, d) = {hi}")));
        }
        Ok((lo, hi))
    }
}

/// `Omega = max_i (1 + eps_jl) 8 kappa_min ln(1.25/delta) / (eps_i^T / T)^2 - sigma2`,
/// clamped at 0.
pub fn water_level(problem: &AllocationProblem) -> f64 {
    let kappa_min = problem.kappa_min();
    let t = problem.rounds as f64;
    let log_term = (1.25 / problem.delta_t).ln();
    problem
        .eps_target
        .iter()
        .map(|e| {
            let per_iter = e / t;
            (1.0 + problem.eps_jl) * 8.0 * kappa_min * log_term / (per_iter * per_iter) - problem.sigma2
        })
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    /// `omega_i = zeta_i kappa_i / r`, in client order.
    pub omegas: Vec<f64>,
    /// Unmet part of the water level.
    pub residual: f64,
}

impl Fill {
    pub fn feasible(&self, level: f64) -> bool {
        self.residual <= LEVEL_TOLERANCE * level.max(1.0)
    }
}

/// Greedy fill at reduced dimension `r`. Clients are served by decreasing
/// headroom, ties broken by ascending index; each takes
/// `min(headroom_i / r, [level - already_filled]^+)`.
pub fn fill(problem: &AllocationProblem, r: usize) -> Result<Fill> {
    if r == 0 {
        return Err(invalid("r", "must be >= 1"));
    }
    Ok(fill_level(&problem.headroom(), water_level(problem), r))
}

fn fill_level(headroom: &[f64], level: f64, r: usize) -> Fill {
    let mut order: Vec<usize> = (0..headroom.len()).collect();
    order.sort_by(|&a, &b| headroom[b].total_cmp(&headroom[a]).then(a.cmp(&b)));
    let rf = r as f64;
    let mut omegas = vec![0.0; headroom.len()];
    let mut filled = 0.0;
    for i in order {
        let w = (headroom[i] / rf).min((level - filled).max(0.0));
        omegas[i] = w;
        filled += w;
    }
    Fill { omegas, residual: (level - filled).max(0.0) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub r: usize,
    pub objective: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    /// Reduced dimension with the smallest objective among feasible candidates.
    pub r_star: usize,
    pub zeta_star: Vec<f64>,
    pub omega: Vec<f64>,
    /// Water level `Omega`.
    pub level: f64,
    pub objective: f64,
    pub feasible: bool,
    /// Answer of the incremental stopping rule: start at the JL bound, stop
    /// when no client needs to add noise or the level can no longer be met,
    /// and keep the last feasible `r`.
    pub r_stopping_rule: Option<usize>,
    pub objective_stopping_rule: Option<f64>,
    pub r_min: usize,
    pub r_max: usize,
    /// Every visited `r` with its objective and feasibility.
    pub candidates: Vec<Candidate>,
}

impl AllocationResult {
    /// Largest unmet demand at the lower end of the scan, for infeasible problems.
    pub fn shortfall(&self, problem: &AllocationProblem) -> f64 {
        fill_level(&problem.headroom(), self.level, self.r_min).residual
    }
}

/// Scans `r` from the JL bound to `min(d, r_max)` and returns the best feasible
/// allocation along with the stopping-rule answer.
pub fn solve(problem: &AllocationProblem) -> Result<AllocationResult> {
    problem.validate()?;
    let (r_min, r_max) = problem.r_range()?;
    let level = water_level(problem);
    let headroom = problem.headroom();

    let mut candidates = Vec::new();
    let mut best: Option<(usize, Fill, f64)> = None;
    let mut stopping: Option<(usize, f64)> = None;
    let mut stopped = false;

    for r in r_min..=r_max {
        let f = fill_level(&headroom, level, r);
        let feasible = f.feasible(level);
        let objective = problem.objective(r, f.omegas.iter().sum());
        candidates.push(Candidate { r, objective, feasible });

        if !stopped {
            if feasible {
                stopping = Some((r, objective));
                // No client has to add noise: the first admissible r is kept.
                if level == 0.0 {
                    stopped = true;
                }
            } else {
                stopped = true;
            }
        }

        if feasible && best.as_ref().is_none_or(|(_, _, obj)| objective < *obj) {
            best = Some((r, f, objective));
        }
    }

    let (r_stopping_rule, objective_stopping_rule) = stopping.map_or((None, None), |(r, o)| (Some(r), Some(o)));
    Ok(match best {
        Some((r, f, objective)) => AllocationResult {
            r_star: r,
            zeta_star: f.omegas.iter().zip(&problem.kappas).map(|(w, k)| r as f64 * w / k).collect(),
            omega: f.omegas,
            level,
            objective,
            feasible: true,
            r_stopping_rule,
            objective_stopping_rule,
            r_min,
            r_max,
            candidates,
        },
        None => AllocationResult {
            r_star: r_min,
            zeta_star: vec![0.0; problem.n()],
            omega: vec![0.0; problem.n()],
            level,
            objective: f64::INFINITY,
            feasible: false,
            r_stopping_rule,
            objective_stopping_rule,
            r_min,
            r_max,
            candidates,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(kappas: Vec<f64>, eps_per_iter: f64, sigma2: f64) -> AllocationProblem {
        let kappa_min = kappas.iter().copied().fold(f64::INFINITY, f64::min);
        let gammas = kappas.iter().map(|k| kappa_min / k).collect();
        let rounds = 100;
        AllocationProblem {
            eps_target: vec![eps_per_iter * rounds as f64; kappas.len()],
            kappas,
            gammas,
            d: 2000,
            s: 1,
            profile: LossProfile::new(1.0, 0.1).unwrap(),
            rounds,
            delta_t: 5e-5,
            eps_jl: 0.5,
            a: 1.0,
            c: kappa_min.sqrt(),
            sigma2,
            r_max: 2000,
        }
    }

    #[test]
    fn level_substitution() {
        let p = problem(vec![1.0, 3.0], 0.5, 1.0);
        let expect = 1.5 * 8.0 * (25_000f64).ln() / 0.25 - 1.0;
        assert!((water_level(&p) - expect).abs() < 1e-9);
        assert!((water_level(&p) - 485.078_292_984_816_24).abs() < 1e-9);
    }

    #[test]
    fn level_clamped_when_loose() {
        let p = problem(vec![1.0, 3.0], 1e6, 1.0);
        assert_eq!(water_level(&p), 0.0);
    }

    #[test]
    fn level_uses_strictest_target() {
        let mut p = problem(vec![1.0, 3.0], 0.5, 0.0);
        p.eps_target = vec![0.5 * 100.0, 0.25 * 100.0];
        let strict = water_level(&p);
        p.eps_target = vec![0.5 * 100.0; 2];
        assert!((strict / water_level(&p) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fill_hand_examples() {
        let f = fill_level(&[10.0, 10.0], 7.0, 2);
        assert_eq!(f.omegas, vec![5.0, 2.0]);
        assert_eq!(f.residual, 0.0);
        let f = fill_level(&[4.0], 7.0, 2);
        assert_eq!(f.omegas, vec![2.0]);
        assert_eq!(f.residual, 5.0);
        let f = fill_level(&[4.0, 9.0, 1.0], 0.0, 3);
        assert_eq!(f.omegas, vec![0.0; 3]);
        assert_eq!(f.residual, 0.0);
        // Largest headroom first, regardless of index.
        let f = fill_level(&[2.0, 8.0, 4.0], 5.0, 1);
        assert_eq!(f.omegas, vec![0.0, 5.0, 0.0]);
    }

    #[test]
    fn fill_saturation_structure() {
        let headroom = [3.0, 0.5, 7.0, 2.0, 2.0, 9.0];
        for level in [0.0, 1.0, 4.0, 10.0, 20.0, 30.0] {
            let f = fill_level(&headroom, level, 1);
            let partial = f
                .omegas
                .iter()
                .zip(&headroom)
                .filter(|(w, h)| **w > 0.0 && (*w - *h).abs() > 1e-12)
                .count();
            assert!(partial <= 1, "level {level}: {f:?}");
        }
    }

    #[test]
    fn zero_level_keeps_jl_bound_for_stopping_rule() {
        let p = problem(vec![1.0, 2.0, 5.0], 1e6, 1.0);
        let res = solve(&p).unwrap();
        assert!(res.feasible);
        assert_eq!(res.level, 0.0);
        assert!(res.zeta_star.iter().all(|z| *z == 0.0));
        assert_eq!(res.r_stopping_rule, Some(res.r_min));
        // The objective itself keeps falling with r when no noise is needed.
        assert_eq!(res.r_star, res.r_max);
        let brute = res.candidates.iter().map(|c| c.objective).fold(f64::INFINITY, f64::min);
        assert_eq!(res.objective, brute);
    }

    #[test]
    fn no_headroom_is_infeasible() {
        let mut p = problem(vec![1.0, 1.0, 1.0], 0.5, 1.0);
        p.gammas = vec![1.0; 3];
        let res = solve(&p).unwrap();
        assert!(!res.feasible);
        assert!(res.objective.is_infinite());
        assert!(res.shortfall(&p) > 0.0);
        assert_eq!(res.r_stopping_rule, None);
    }

    #[test]
    fn solution_meets_constraints() {
        let kappas = vec![400.0, 1200.0, 900.0, 50.0, 2500.0];
        let mut p = problem(kappas.clone(), 0.5, 1.0);
        // Put the level where only part of the r range is feasible.
        let headroom: f64 = p.headroom().iter().sum();
        p.sigma2 = (1.0 + p.eps_jl) * 8.0 * 50.0 * (1.25 / p.delta_t).ln() / 0.25 - headroom / 300.0;
        let res = solve(&p).unwrap();
        assert!(res.feasible);
        assert_eq!(res.r_star, 300);
        assert_eq!(res.r_stopping_rule, Some(300));
        let noise: f64 = res.zeta_star.iter().zip(&kappas).map(|(z, k)| z * k).sum::<f64>() / res.r_star as f64;
        for ((z, g), _) in res.zeta_star.iter().zip(&p.gammas).zip(&kappas) {
            assert!(g + z <= 1.0 + 1e-12);
        }
        let need = (1.0 + p.eps_jl) * 8.0 * 50.0 * (1.25 / p.delta_t).ln() / 0.25;
        assert!(noise + p.sigma2 >= need * (1.0 - 1e-9));
    }
}
