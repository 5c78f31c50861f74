//! Sweep drivers behind the subcommands. Each returns rows in axis order;
//! sweep points are evaluated in parallel.

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use serde::Serialize;

use dprp_core::aircomp::{align, round_kappas, Alignment, ChannelMode};
use dprp_core::allocator::{solve, AllocationProblem, AllocationResult};
use dprp_core::checks::{run_all, CheckOutcome, CheckSettings};
use dprp_core::convergence::{baseline_bound, optimal_t, static_bound, utility_privacy_bound, LossProfile, RoundTerms};
use dprp_core::privacy::{jl_failure_tail, jl_min_dim, ldp_baseline, ldp_general, ldp_jl, Regime};
use dprp_core::rng::derive_seed;
use dprp_core::trainer::{make_task, run, NoiseAllocation, ProjectionChoice, TrainConfig, TrainTrace};

use crate::config::ExperimentConfig;

const MAX_REDRAWS: u64 = 100;

/// One channel realization with the resulting noise budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub kappas: Vec<f64>,
    pub alignment: Alignment,
    /// `zeta_i kappa_i`.
    pub zeta_kappas: Vec<f64>,
    /// `beta_i kappa_i`.
    pub beta_kappas: Vec<f64>,
}

impl ChannelDraw {
    /// `sum_i zeta_i kappa_i`.
    pub fn zeta_total(&self) -> f64 {
        self.zeta_kappas.iter().sum()
    }

    /// `sum_i beta_i kappa_i / d`.
    pub fn beta_noise_sum(&self, d: usize) -> f64 {
        self.beta_kappas.iter().sum::<f64>() / d as f64
    }
}

/// Realization `k` of the sweep channel. Draw 0 uses the configured seed.
pub fn channel_draw(config: &ExperimentConfig, k: usize) -> Result<ChannelDraw> {
    let mode = config.channel_mode()?;
    let seed = if k == 0 { config.seed } else { derive_seed(config.seed, &[k as u64]) };
    let powers = vec![config.power; config.n];
    for attempt in 0..=MAX_REDRAWS {
        let kappas = round_kappas(mode, &powers, seed, 1, attempt);
        if let Ok(alignment) = align(&kappas, config.grad_bound, config.kappa_floor) {
            let split = |cap: f64| -> Vec<f64> {
                kappas.iter().zip(&alignment.gamma).map(|(k, g)| k * cap.min(1.0 - g).max(0.0)).collect()
            };
            return Ok(ChannelDraw {
                zeta_kappas: split(config.zeta_cap),
                beta_kappas: split(config.beta_cap),
                kappas,
                alignment,
            });
        }
        if mode == ChannelMode::Unit {
            break;
        }
    }
    Err(anyhow!("no channel draw met kappa_floor = {} after {MAX_REDRAWS} redraws", config.kappa_floor))
}

fn draws(config: &ExperimentConfig) -> Result<Vec<ChannelDraw>> {
    (0..config.draws).map(|k| channel_draw(config, k)).collect()
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpRow {
    pub fingerprint: String,
    pub r: usize,
    /// Projection law, `any` for the JL bound, `none` for the baseline.
    pub kind: String,
    pub eps_iter: f64,
    pub eps_total: f64,
    pub delta_total: f64,
    pub regime: String,
    pub draws: usize,
    pub eps_total_stderr: f64,
}

/// `T`-fold epsilon against `r`: the general bound per projection law, the
/// JL bound where `r` meets the JL condition, and the baseline.
pub fn sweep_ldp(config: &ExperimentConfig) -> Result<Vec<LdpRow>> {
    let kinds = config.parsed_kinds()?;
    let channel = draws(config)?;
    let fingerprint = config.fingerprint();
    let t = config.rounds as f64;
    let r_jl = jl_min_dim(config.n.max(2), config.eps_jl, config.a)?;
    let jl_tail = jl_failure_tail(config.rounds, config.n, config.a);

    let per_r = config
        .r_grid
        .values()
        .into_par_iter()
        .map(|r| -> Result<Vec<LdpRow>> {
            let mut rows = Vec::new();
            let mut push = |kind: String, eps: Vec<f64>, delta_total: f64, regime: Regime| {
                let totals: Vec<f64> = eps.iter().map(|e| t * e).collect();
                let (eps_total, stderr) = mean_stderr(&totals);
                rows.push(LdpRow {
                    fingerprint: fingerprint.clone(),
                    r,
                    kind,
                    eps_iter: eps_total / t,
                    eps_total,
                    delta_total,
                    regime: regime.label().to_string(),
                    draws: eps.len(),
                    eps_total_stderr: stderr,
                });
            };
            for &kind in &kinds {
                let mut regime = Regime::GeneralSqrt;
                let eps = channel
                    .iter()
                    .map(|c| {
                        let (e, reg) = ldp_general(
                            kind,
                            r,
                            config.delta_prime,
                            c.alignment.kappa_min,
                            c.zeta_total() / r as f64,
                            config.sigma2,
                            config.delta,
                        )?;
                        regime = reg;
                        Ok(e)
                    })
                    .collect::<dprp_core::Result<Vec<f64>>>()?;
                push(kind.label(), eps, t * config.delta + t * config.delta_prime, regime);
            }
            if r >= r_jl {
                let eps = channel
                    .iter()
                    .map(|c| ldp_jl(c.alignment.kappa_min, c.zeta_total() / r as f64, config.sigma2, config.delta, config.eps_jl))
                    .collect::<dprp_core::Result<Vec<f64>>>()?;
                push("any".into(), eps, t * config.delta + jl_tail, Regime::Jl);
            }
            let eps = channel
                .iter()
                .map(|c| ldp_baseline(config.d, c.alignment.kappa_min, c.beta_noise_sum(config.d), config.sigma2, config.delta))
                .collect::<dprp_core::Result<Vec<f64>>>()?;
            push("none".into(), eps, t * config.delta, Regime::Baseline);
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_r.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvRow {
    pub fingerprint: String,
    pub r: usize,
    pub kind: String,
    #[serde(rename = "T")]
    pub rounds: usize,
    pub term_gradient: f64,
    pub term_noise: f64,
    pub xi_bound: f64,
    pub baseline_bound: f64,
    pub draws: usize,
    pub xi_bound_stderr: f64,
}

fn profile(config: &ExperimentConfig) -> Result<LossProfile> {
    Ok(LossProfile::new(config.grad_bound, config.lambda)?)
}

/// Static-channel gap bound against `r` per projection law, with the baseline.
pub fn sweep_convergence(config: &ExperimentConfig) -> Result<Vec<ConvRow>> {
    let kinds = config.parsed_kinds()?;
    let channel = draws(config)?;
    let profile = profile(config)?;
    let fingerprint = config.fingerprint();
    let per_r = config
        .r_grid
        .values()
        .into_par_iter()
        .map(|r| -> Result<Vec<ConvRow>> {
            let mut rows = Vec::with_capacity(kinds.len());
            for &kind in &kinds {
                let mut reports = Vec::with_capacity(channel.len());
                let mut baselines = Vec::with_capacity(channel.len());
                for c in &channel {
                    let terms = RoundTerms {
                        d: config.d,
                        r,
                        n: config.n,
                        c: c.alignment.c,
                        noise_sum: c.zeta_total() / r as f64,
                        sigma2: config.sigma2,
                    };
                    reports.push(static_bound(kind, &profile, &terms, config.rounds)?);
                    baselines.push(baseline_bound(
                        &profile,
                        config.d,
                        config.n,
                        c.alignment.c,
                        c.beta_noise_sum(config.d),
                        config.sigma2,
                        config.rounds,
                    )?);
                }
                let xi: Vec<f64> = reports.iter().map(|b| b.xi_bound).collect();
                let (xi_bound, stderr) = mean_stderr(&xi);
                let k = reports.len() as f64;
                rows.push(ConvRow {
                    fingerprint: fingerprint.clone(),
                    r,
                    kind: kind.label(),
                    rounds: config.rounds,
                    term_gradient: reports.iter().map(|b| b.term_gradient).sum::<f64>() / k,
                    term_noise: reports.iter().map(|b| b.term_noise).sum::<f64>() / k,
                    xi_bound,
                    baseline_bound: mean_stderr(&baselines).0,
                    draws: reports.len(),
                    xi_bound_stderr: stderr,
                });
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_r.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub fingerprint: String,
    pub eps_total: f64,
    pub r: usize,
    pub kind: String,
    #[serde(rename = "T")]
    pub rounds: usize,
    pub xi_bound: f64,
    pub baseline_bound: f64,
    /// `(xi_bound - baseline_bound) / baseline_bound`.
    pub relative_gap: f64,
    /// Horizon minimizing the bound at this epsilon (0 when unbounded).
    pub t_opt: u64,
}

/// Closed-form utility-privacy bound against the `T`-fold epsilon.
pub fn sweep_tradeoff(config: &ExperimentConfig) -> Result<Vec<TradeoffRow>> {
    let kinds = config.parsed_kinds()?;
    let profile = profile(config)?;
    let fingerprint = config.fingerprint();
    let per_eps = config
        .eps_grid
        .par_iter()
        .map(|&eps| -> Result<Vec<TradeoffRow>> {
            let mut rows = Vec::new();
            for &r in &config.tradeoff_r {
                for &kind in &kinds {
                    let s = kind.sparsity();
                    let b = utility_privacy_bound(&profile, config.d, r, s, config.n, config.rounds, eps, config.delta, config.eps_jl)?;
                    let t_opt = optimal_t(&profile, config.d, r, s, config.n, eps, config.delta, config.eps_jl)?;
                    rows.push(TradeoffRow {
                        fingerprint: fingerprint.clone(),
                        eps_total: eps,
                        r,
                        kind: kind.label(),
                        rounds: config.rounds,
                        xi_bound: b.value(),
                        baseline_bound: b.baseline(),
                        relative_gap: (b.value() - b.baseline()) / b.baseline(),
                        t_opt: t_opt.unwrap_or(0),
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_eps.into_iter().flatten().collect())
}

/// The allocation problem for the configured scenario on channel draw 0.
pub fn allocation_problem(config: &ExperimentConfig) -> Result<AllocationProblem> {
    let kinds = config.parsed_kinds()?;
    let c = channel_draw(config, 0)?;
    Ok(AllocationProblem {
        kappas: c.kappas,
        gammas: c.alignment.gamma,
        d: config.d,
        s: kinds[0].sparsity(),
        profile: profile(config)?,
        rounds: config.rounds,
        eps_target: vec![config.eps_target; config.n],
        delta_t: config.delta,
        eps_jl: config.eps_jl,
        a: config.a,
        c: c.alignment.c,
        sigma2: config.sigma2,
        r_max: config.alloc_r_max,
    })
}

pub fn allocate(config: &ExperimentConfig) -> Result<(AllocationProblem, AllocationResult)> {
    let problem = allocation_problem(config)?;
    let result = solve(&problem)?;
    Ok((problem, result))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationRow {
    pub fingerprint: String,
    pub client: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub zeta_star: f64,
    pub omega: f64,
    pub r_star: usize,
    pub r_stopping_rule: Option<usize>,
    pub level: f64,
    pub objective: f64,
    pub feasible: bool,
}

pub fn allocation_rows(config: &ExperimentConfig, problem: &AllocationProblem, result: &AllocationResult) -> Vec<AllocationRow> {
    let fingerprint = config.fingerprint();
    (0..problem.n())
        .map(|i| AllocationRow {
            fingerprint: fingerprint.clone(),
            client: i,
            kappa: problem.kappas[i],
            gamma: problem.gammas[i],
            zeta_star: result.zeta_star[i],
            omega: result.omega[i],
            r_star: result.r_star,
            r_stopping_rule: result.r_stopping_rule,
            level: result.level,
            objective: result.objective,
            feasible: result.feasible,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub fingerprint: String,
    /// `dprp` or `baseline` (no projection).
    pub scheme: String,
    pub iteration: usize,
    pub gap: f64,
    pub bound: f64,
    pub epsilon_spent: f64,
}

/// Training runs on the synthetic task: the projected scheme with the first
/// configured law, and the baseline without projection.
pub fn simulate(config: &ExperimentConfig) -> Result<Vec<(String, TrainTrace)>> {
    let kinds = config.parsed_kinds()?;
    let task = make_task(config.n, config.d, config.samples_per_client, config.lambda, config.task_seed)?;
    let base = TrainConfig {
        r: config.r,
        rounds: config.rounds,
        projection: ProjectionChoice::Random(kinds[0]),
        seed: config.seed,
        channel_mode: config.channel_mode()?,
        powers: vec![config.power; config.n],
        noise: NoiseAllocation::Capped(config.zeta_cap),
        clip_bound: config.grad_bound,
        sigma2: config.sigma2,
        delta_t: config.delta,
        eps_jl: config.eps_jl,
        kappa_floor: config.kappa_floor,
        max_redraws: MAX_REDRAWS,
    };
    let baseline = TrainConfig {
        r: config.d,
        projection: ProjectionChoice::Identity,
        noise: NoiseAllocation::Capped(config.beta_cap),
        ..base.clone()
    };
    let runs = [("dprp", base), ("baseline", baseline)]
        .into_par_iter()
        .map(|(name, c)| Ok((name.to_string(), run(&task, &c)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(runs)
}

pub fn trace_rows(config: &ExperimentConfig, runs: &[(String, TrainTrace)]) -> Vec<TraceRow> {
    let fingerprint = config.fingerprint();
    runs.iter()
        .flat_map(|(name, trace)| {
            let fingerprint = fingerprint.clone();
            (0..trace.gaps.len()).map(move |t| TraceRow {
                fingerprint: fingerprint.clone(),
                scheme: name.clone(),
                iteration: t + 1,
                gap: trace.gaps[t],
                bound: trace.bounds[t],
                epsilon_spent: trace.eps_spent[t],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub fingerprint: String,
    pub check: String,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Runs the Monte Carlo suite; `tolerance_scale` other than 1 is a debugging aid.
pub fn verify(config: &ExperimentConfig, tolerance_scale: f64) -> Result<Vec<CheckOutcome>> {
    let settings = CheckSettings { seed: config.seed, trials: config.verify_trials, tolerance_scale };
    Ok(run_all(&settings)?)
}

pub fn check_rows(config: &ExperimentConfig, outcomes: &[CheckOutcome]) -> Vec<CheckRow> {
    let fingerprint = config.fingerprint();
    outcomes
        .iter()
        .map(|o| CheckRow {
            fingerprint: fingerprint.clone(),
            check: o.name.clone(),
            measured: o.measured,
            expected: o.expected,
            tolerance: o.tolerance,
            passed: o.passed,
        })
        .collect()
}

/// Rows as CSV text with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    Ok(String::from_utf8(writer.into_inner().map_err(|e| anyhow!("{e}"))?)?)
}

