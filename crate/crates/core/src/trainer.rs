//! End-to-end training on a synthetic strongly convex task.
//!
//! Client `i` holds `(A_i, b_i)` with `m` rows and the local loss
//! `L_i(w) = ||A_i w - b_i||^2 / (2m) + (lambda/2) ||w||^2`. All clients hold
//! the same number of samples, so the global loss is the plain average of the
//! local ones and its minimizer solves
//! `((1/(nm)) sum A_i^T A_i + lambda I) w = (1/(nm)) sum A_i^T b_i`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aircomp::{aggregate_round, align, round_kappas, ChannelMode, ChannelRound, PowerSplit, DEFAULT_KAPPA_FLOOR};
use crate::convergence::{baseline_second_moment, second_moment_bound, LossProfile, RoundTerms};
use crate::error::{ensure_len, invalid, Error, Result};
use crate::privacy::gaussian_epsilon;
use crate::projection::{DistributionKind, IdentityProjector, ProjectionMatrix, ProjectionSpec, Projector};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub clients: Vec<ClientData>,
    pub lambda: f64,
    pub w_star: Vec<f64>,
    pub optimal_loss: f64,
    /// Largest Hessian eigenvalue of the global loss.
    pub smoothness: f64,
}

impl SyntheticTask {
    /// Builds a task from explicit client data; every client must hold `m x d`
    /// data with the same `m`.
    pub fn from_clients(clients: Vec<ClientData>, lambda: f64) -> Result<Self> {
        let first = clients.first().ok_or_else(|| invalid("clients", "at least one client is required"))?;
        if !(lambda > 0.0) {
            return Err(invalid("lambda", "must be positive"));
        }
        let (m, d) = first.a.shape();
        if m == 0 || d == 0 {
            return Err(invalid("clients", "data must be nonempty"));
        }
        for c in &clients {
            ensure_len(d, c.a.ncols())?;
            ensure_len(m, c.a.nrows())?;
            ensure_len(m, c.b.len())?;
        }
        let scale = 1.0 / (clients.len() * m) as f64;
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for c in &clients {
            gram += c.a.tr_mul(&c.a);
            rhs += c.a.tr_mul(&c.b);
        }
        gram *= scale;
        rhs *= scale;
        let data_top = gram.clone().symmetric_eigen().eigenvalues.max().max(0.0);
        let hessian = gram + DMatrix::identity(d, d) * lambda;
        let chol = hessian
            .cholesky()
            .ok_or_else(|| invalid("lambda", "regularized Gram matrix is not positive definite"))?;
        let w_star = chol.solve(&rhs);
        let mut task = SyntheticTask {
            clients,
            lambda,
            w_star: w_star.as_slice().to_vec(),
            optimal_loss: 0.0,
            smoothness: lambda + data_top,
        };
        task.optimal_loss = task.loss(&task.w_star.clone());
        Ok(task)
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn d(&self) -> usize {
        self.clients[0].a.ncols()
    }

    pub fn local_loss(&self, i: usize, w: &[f64]) -> f64 {
        let c = &self.clients[i];
        let w = DVector::from_column_slice(w);
        let resid = &c.a * &w - &c.b;
        resid.norm_squared() / (2.0 * c.a.nrows() as f64) + 0.5 * self.lambda * w.norm_squared()
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        (0..self.n()).map(|i| self.local_loss(i, w)).sum::<f64>() / self.n() as f64
    }

    pub fn gap(&self, w: &[f64]) -> f64 {
        self.loss(w) - self.optimal_loss
    }

    /// Unclipped `grad L_i(w)`.
    pub fn raw_gradient(&self, i: usize, w: &[f64]) -> Vec<f64> {
        let c = &self.clients[i];
        let wv = DVector::from_column_slice(w);
        let resid = &c.a * &wv - &c.b;
        let g = c.a.tr_mul(&resid) / c.a.nrows() as f64 + wv * self.lambda;
        g.as_slice().to_vec()
    }

    /// Full gradient of the global loss.
    pub fn global_gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d()];
        for i in 0..self.n() {
            for (a, b) in g.iter_mut().zip(self.raw_gradient(i, w)) {
                *a += b;
            }
        }
        g.iter_mut().for_each(|v| *v /= self.n() as f64);
        g
    }

    /// Minimizer of client `i`'s own loss.
    pub fn local_minimizer(&self, i: usize) -> Vec<f64> {
        let c = &self.clients[i];
        let m = c.a.nrows() as f64;
        let d = self.d();
        let h = c.a.tr_mul(&c.a) / m + DMatrix::identity(d, d) * self.lambda;
        let rhs = c.a.tr_mul(&c.b) / m;
        h.cholesky().expect("positive definite").solve(&rhs).as_slice().to_vec()
    }
}

/// Random Gaussian task: `A_i` has i.i.d. `N(0, 1)` entries and
/// `b_i = A_i w_true + 0.1 e` with `w_true ~ N(0, I/d)` shared by all clients.
pub fn make_task(n: usize, d: usize, m: usize, lambda: f64, seed: u64) -> Result<SyntheticTask> {
    if n == 0 || d == 0 || m == 0 {
        return Err(invalid("task", "n, d and m must be >= 1"));
    }
    let mut rng = stream_rng(seed, Stream::Task, &[]);
    let sd = 1.0 / (d as f64).sqrt();
    let w_true = DVector::from_iterator(d, (0..d).map(|_| sd * rng.sample::<f64, _>(StandardNormal)));
    let clients = (0..n)
        .map(|_| {
            let a = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let e = DVector::from_iterator(m, (0..m).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)));
            let b = &a * &w_true + e;
            ClientData { a, b }
        })
        .collect();
    SyntheticTask::from_clients(clients, lambda)
}

/// Rescales `g` onto the ball of radius `bound` if it lies outside. Returns
/// whether clipping happened.
pub fn clip(g: &mut [f64], bound: f64) -> bool {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > bound {
        let s = bound / norm;
        g.iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

/// `grad L_i(w)` clipped to norm at most `bound`.
pub fn local_gradient(task: &SyntheticTask, i: usize, w: &[f64], bound: f64) -> Result<Vec<f64>> {
    if i >= task.n() {
        return Err(invalid("client", format!("index {i} out of range for {} clients", task.n())));
    }
    ensure_len(task.d(), w.len())?;
    let mut g = task.raw_gradient(i, w);
    clip(&mut g, bound);
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionChoice {
    Random(DistributionKind),
    /// `T = I`; requires `r = d`.
    Identity,
}

/// How clients set their artificial-noise fractions each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseAllocation {
    /// Fixed `zeta_i`; a round where `gamma_i + zeta_i > 1` is an error.
    Fixed(Vec<f64>),
    /// `zeta_i = min(cap, 1 - gamma_i)`.
    Capped(f64),
    /// `zeta_i = 1 - gamma_i`.
    FullHeadroom,
}

impl NoiseAllocation {
    fn split(&self, gamma: Vec<f64>) -> Result<PowerSplit> {
        match self {
            NoiseAllocation::Fixed(z) => PowerSplit::new(gamma, z.clone()),
            NoiseAllocation::Capped(cap) => Ok(PowerSplit::capped(gamma, *cap)),
            NoiseAllocation::FullHeadroom => Ok(PowerSplit::full_headroom(gamma)),
        }
    }

    /// The same allocation with every noise fraction multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            NoiseAllocation::Fixed(z) => NoiseAllocation::Fixed(z.iter().map(|v| v * factor).collect()),
            NoiseAllocation::Capped(cap) => NoiseAllocation::Capped(cap * factor),
            NoiseAllocation::FullHeadroom => NoiseAllocation::FullHeadroom,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub r: usize,
    pub rounds: usize,
    pub projection: ProjectionChoice,
    pub seed: u64,
    pub channel_mode: ChannelMode,
    /// Per-client power budgets `P_i`.
    pub powers: Vec<f64>,
    pub noise: NoiseAllocation,
    /// Gradient clip bound `L`, also the transmit normalizer.
    pub clip_bound: f64,
    pub sigma2: f64,
    /// `delta^t` used for the running epsilon.
    pub delta_t: f64,
    pub eps_jl: f64,
    pub kappa_floor: f64,
    /// Channel redraws allowed per round in i.i.d. mode.
    pub max_redraws: u64,
}

impl TrainConfig {
    pub fn new(n: usize, r: usize, rounds: usize, kind: DistributionKind, seed: u64) -> Self {
        TrainConfig {
            r,
            rounds,
            projection: ProjectionChoice::Random(kind),
            seed,
            channel_mode: ChannelMode::Static,
            powers: vec![1.0; n],
            noise: NoiseAllocation::Capped(0.5),
            clip_bound: 1.0,
            sigma2: 1.0,
            delta_t: 5e-5,
            eps_jl: 0.5,
            kappa_floor: DEFAULT_KAPPA_FLOOR,
            max_redraws: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// `L(w^t) - L(w*)` after each round.
    pub gaps: Vec<f64>,
    /// Gap bound after each round, evaluated on the channel draws seen so far.
    pub bounds: Vec<f64>,
    /// Cumulative epsilon spent by the most exposed client.
    pub eps_spent: Vec<f64>,
    pub final_gap: f64,
    pub final_w: Vec<f64>,
    /// Rounds whose channel had to be redrawn.
    pub redraws: usize,
    /// Client gradients that hit the clip bound.
    pub clipped: usize,
    /// Smoothness of the task's loss.
    pub smoothness_true: f64,
    pub clip_bound: f64,
    /// The `L` used in the bound: `max(smoothness_true, clip_bound)`.
    pub bound_l: f64,
}

fn projector_for(config: &TrainConfig, d: usize, t: u64) -> Result<Box<dyn Projector>> {
    Ok(match config.projection {
        ProjectionChoice::Identity => {
            if config.r != d {
                return Err(Error::InvalidDimensions { r: config.r, d });
            }
            Box::new(IdentityProjector { d })
        }
        ProjectionChoice::Random(kind) => {
            Box::new(ProjectionMatrix::generate(ProjectionSpec::for_round(kind, d, config.r, config.seed, t)?)?)
        }
    })
}

/// Outcome of one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStep {
    /// Decoded gradient estimate.
    pub g_hat: Vec<f64>,
    pub terms: RoundTerms,
    pub kappa_min: f64,
    /// Channel draws rejected before a feasible one.
    pub attempts: u64,
    /// Client gradients that hit the clip bound.
    pub clipped: usize,
}

/// One round at model `w`: local gradients, channel draw and alignment,
/// projection, transmission and decoding. Randomness is keyed by
/// `(config.seed, t)`.
pub fn round(task: &SyntheticTask, config: &TrainConfig, w: &[f64], t: u64) -> Result<RoundStep> {
    let n = task.n();
    let d = task.d();
    ensure_len(n, config.powers.len())?;
    ensure_len(d, w.len())?;
    let mut clipped = 0;
    let gradients: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut g = task.raw_gradient(i, w);
            clipped += usize::from(clip(&mut g, config.clip_bound));
            g
        })
        .collect();

    let mut attempts = 0;
    let (kappas, alignment) = loop {
        let kappas = round_kappas(config.channel_mode, &config.powers, config.seed, t, attempts);
        match align(&kappas, config.clip_bound, config.kappa_floor) {
            Ok(a) => break (kappas, a),
            Err(e @ Error::AlignmentInfeasible { .. }) => {
                if config.channel_mode != ChannelMode::Iid || attempts >= config.max_redraws {
                    return Err(e);
                }
                attempts += 1;
            }
            Err(e) => return Err(e),
        }
    };

    let split = config.noise.split(alignment.gamma.clone())?;
    let channel = ChannelRound::new(kappas, config.powers.clone(), config.sigma2)?;
    let projector = projector_for(config, d, t)?;
    let result = aggregate_round(
        &gradients,
        projector.as_ref(),
        &channel,
        &split,
        alignment.c,
        config.clip_bound,
        config.seed,
        t,
    )?;
    let noise_sum = split.noise_sum(&channel.kappas, config.r);
    Ok(RoundStep {
        g_hat: result.g_hat,
        terms: RoundTerms { d, r: config.r, n, c: alignment.c, noise_sum, sigma2: config.sigma2 },
        kappa_min: alignment.kappa_min,
        attempts,
        clipped,
    })
}

/// Runs `T` rounds of projected, noisy over-the-air FedSGD from `w = 0` with
/// step size `1/(lambda t)`.
pub fn run(task: &SyntheticTask, config: &TrainConfig) -> Result<TrainTrace> {
    let d = task.d();
    if config.rounds == 0 {
        return Err(Error::EmptyRounds);
    }
    if config.r == 0 || config.r > d {
        return Err(Error::InvalidDimensions { r: config.r, d });
    }
    let bound_l = task.smoothness.max(config.clip_bound);
    LossProfile::new(bound_l, task.lambda)?;

    let mut w = vec![0.0; d];
    let mut trace = TrainTrace {
        gaps: Vec::with_capacity(config.rounds),
        bounds: Vec::with_capacity(config.rounds),
        eps_spent: Vec::with_capacity(config.rounds),
        final_gap: 0.0,
        final_w: Vec::new(),
        redraws: 0,
        clipped: 0,
        smoothness_true: task.smoothness,
        clip_bound: config.clip_bound,
        bound_l,
    };
    let prefactor = 2.0 * bound_l / (task.lambda * task.lambda);
    let mut moment_sum = 0.0;
    let mut eps_total = 0.0;

    for t in 1..=config.rounds as u64 {
        let step = round(task, config, &w, t)?;
        trace.redraws += usize::from(step.attempts > 0);
        trace.clipped += step.clipped;

        let eta = 1.0 / (task.lambda * t as f64);
        for (wj, gj) in w.iter_mut().zip(&step.g_hat) {
            *wj -= eta * gj;
        }

        let noise = step.terms.noise_sum + config.sigma2;
        // The JL inflation only applies when gradients are projected.
        let inflation = match config.projection {
            ProjectionChoice::Random(_) => (1.0 + config.eps_jl).sqrt(),
            ProjectionChoice::Identity => 1.0,
        };
        eps_total += if noise > 0.0 {
            inflation * gaussian_epsilon(step.kappa_min, step.terms.noise_sum, config.sigma2, config.delta_t)
        } else {
            f64::INFINITY
        };
        let m = step.terms;
        // Without projection the gradient part of the second moment is just L^2.
        moment_sum += match config.projection {
            ProjectionChoice::Random(kind) => second_moment_bound(kind, m.d, m.r, m.n, m.c, m.noise_sum, m.sigma2, bound_l)?,
            ProjectionChoice::Identity => baseline_second_moment(m.d, m.n, m.c, m.noise_sum, m.sigma2, bound_l),
        };

        trace.gaps.push(task.gap(&w));
        trace.bounds.push(prefactor / (t * t) as f64 * moment_sum);
        trace.eps_spent.push(eps_total);
    }
    trace.final_gap = *trace.gaps.last().expect("rounds >= 1");
    trace.final_w = w;
    Ok(trace)
}

/// Plain FedSGD with exact averaged (clipped) gradients; returns the gap after
/// each round and the final model.
pub fn run_fedsgd(task: &SyntheticTask, rounds: usize, clip_bound: f64) -> (Vec<f64>, Vec<f64>) {
    let n = task.n();
    let mut w = vec![0.0; task.d()];
    let mut gaps = Vec::with_capacity(rounds);
    for t in 1..=rounds {
        let mut avg = vec![0.0; task.d()];
        for i in 0..n {
            let mut g = task.raw_gradient(i, &w);
            clip(&mut g, clip_bound);
            for (a, b) in avg.iter_mut().zip(&g) {
                *a += b;
            }
        }
        avg.iter_mut().for_each(|v| *v /= n as f64);
        let eta = 1.0 / (task.lambda * t as f64);
        for (wj, gj) in w.iter_mut().zip(&avg) {
            *wj -= eta * gj;
        }
        gaps.push(task.gap(&w));
    }
    (gaps, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_targets_zero_optimum() {
        let mut rng = crate::rng::rng_from_seed(1);
        let clients = (0..3)
            .map(|_| ClientData {
                a: DMatrix::from_fn(5, 4, |_, _| rng.sample::<f64, _>(StandardNormal)),
                b: DVector::zeros(5),
            })
            .collect();
        let task = SyntheticTask::from_clients(clients, 0.3).unwrap();
        assert!(task.w_star.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn optimum_matches_long_gradient_descent() {
        let task = make_task(2, 3, 8, 0.2, 4).unwrap();
        let mut w = vec![0.0; 3];
        let step = 1.0 / task.smoothness;
        for _ in 0..20_000 {
            let g = task.global_gradient(&w);
            for (a, b) in w.iter_mut().zip(g) {
                *a -= step * b;
            }
        }
        for (a, b) in w.iter().zip(&task.w_star) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let g = task.global_gradient(&task.w_star);
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn strong_convexity_tracks_lambda() {
        let a = make_task(1, 4, 3, 0.5, 9).unwrap();
        let b = SyntheticTask::from_clients(a.clients.clone(), 1.0).unwrap();
        // With m < d the data Gram matrix is singular, so the smallest Hessian
        // eigenvalue is exactly lambda.
        let smallest = |t: &SyntheticTask| {
            let d = t.d();
            let mut h = DMatrix::<f64>::zeros(d, d);
            for c in &t.clients {
                h += c.a.tr_mul(&c.a) / (c.a.nrows() * t.n()) as f64;
            }
            (h + DMatrix::identity(d, d) * t.lambda).symmetric_eigen().eigenvalues.min()
        };
        assert!((smallest(&a) - 0.5).abs() < 1e-10);
        assert!((smallest(&b) - 1.0).abs() < 1e-10);
        assert!((b.smoothness - a.smoothness - 0.5).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let task = make_task(3, 10, 12, 0.1, 2).unwrap();
        let w: Vec<f64> = (0..10).map(|j| 0.1 * j as f64 - 0.3).collect();
        let g = task.raw_gradient(1, &w);
        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for j in 0..10 {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (task.local_loss(1, &plus) - task.local_loss(1, &minus)) / (2.0 * h);
            let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
            max_rel = max_rel.max((fd - g[j]).abs() / scale);
        }
        assert!(max_rel < 1e-5, "{max_rel}");
    }

    #[test]
    fn gradient_vanishes_at_local_minimizer() {
        let task = make_task(3, 6, 9, 0.2, 5).unwrap();
        let w = task.local_minimizer(2);
        let g = local_gradient(&task, 2, &w, 10.0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        assert!(local_gradient(&task, 3, &w, 1.0).is_err());
    }

    #[test]
    fn clipping_rescales_to_bound() {
        let mut g = vec![3.0, 4.0];
        assert!(clip(&mut g, 2.5));
        assert!((g[0] - 1.5).abs() < 1e-15 && (g[1] - 2.0).abs() < 1e-15);
        let mut g = vec![0.3, 0.4];
        assert!(!clip(&mut g, 1.0));
        assert_eq!(g, vec![0.3, 0.4]);
    }

    #[test]
    fn degenerate_run_is_plain_fedsgd() {
        let task = make_task(4, 6, 10, 0.5, 3).unwrap();
        let mut config = TrainConfig::new(4, 6, 50, DistributionKind::Rademacher, 1);
        config.projection = ProjectionChoice::Identity;
        config.channel_mode = ChannelMode::Unit;
        config.noise = NoiseAllocation::Fixed(vec![0.0; 4]);
        config.sigma2 = 0.0;
        let trace = run(&task, &config).unwrap();
        let (gaps, w) = run_fedsgd(&task, 50, config.clip_bound);
        assert_eq!(trace.gaps, gaps);
        assert_eq!(trace.final_w, w);
        assert!(trace.eps_spent.iter().all(|e| e.is_infinite()));
    }

    #[test]
    fn runs_are_deterministic() {
        let task = make_task(5, 8, 10, 0.5, 3).unwrap();
        let mut config = TrainConfig::new(5, 4, 30, DistributionKind::Gaussian, 8);
        config.channel_mode = ChannelMode::Iid;
        let a = run(&task, &config).unwrap();
        let b = run(&task, &config).unwrap();
        assert_eq!(a, b);
        let profile = LossProfile::new(a.bound_l, task.lambda).unwrap();
        let mut w = vec![0.0; 8];
        let mut terms = Vec::new();
        for t in 1..=30u64 {
            let step = round(&task, &config, &w, t).unwrap();
            for (wj, gj) in w.iter_mut().zip(&step.g_hat) {
                *wj -= gj / (task.lambda * t as f64);
            }
            terms.push(step.terms);
        }
        let direct = crate::convergence::convergence_bound(DistributionKind::Gaussian, &profile, &terms).unwrap();
        assert!((direct.xi_bound - a.bounds[29]).abs() <= 1e-12 * direct.xi_bound);
        assert_eq!(a.gaps.len(), 30);
        assert_eq!(a.bounds.len(), 30);
        config.seed = 9;
        assert_ne!(run(&task, &config).unwrap().gaps, a.gaps);
    }

    #[test]
    fn static_channel_below_floor_aborts() {
        let task = make_task(3, 4, 5, 0.5, 1).unwrap();
        let mut config = TrainConfig::new(3, 2, 5, DistributionKind::Rademacher, 1);
        config.kappa_floor = 1e9;
        assert!(matches!(run(&task, &config), Err(Error::AlignmentInfeasible { .. })));
    }

    #[test]
    fn iid_channel_redraws() {
        let task = make_task(3, 4, 5, 0.5, 1).unwrap();
        let mut config = TrainConfig::new(3, 2, 40, DistributionKind::Rademacher, 2);
        config.channel_mode = ChannelMode::Iid;
        // Roughly a third of the rounds have min |h|^2 below 0.15 for 3 clients.
        config.kappa_floor = 0.15;
        let trace = run(&task, &config).unwrap();
        assert!(trace.redraws > 0);
        config.max_redraws = 0;
        assert!(run(&task, &config).is_err());
    }
}
