//! One round of over-the-air aggregation.
//!
//! Channels are modelled in real baseband. Each client pre-rotates its signal
//! by the conjugate channel phase, so after superposition only the magnitudes
//! `|h_i| = sqrt(kappa_i / P_i)` remain and no complex arithmetic is needed.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Error, Result};
use crate::projection::Projector;
use crate::rng::{stream_rng, Stream};

/// Default lower limit on `kappa_min` below which alignment is refused.
pub const DEFAULT_KAPPA_FLOOR: f64 = 1e-6;

/// Per-round channel state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRound {
    /// `kappa_i = P_i |h_i|^2`, the received SNR of each client.
    pub kappas: Vec<f64>,
    /// Transmit power budgets `P_i`.
    pub powers: Vec<f64>,
    /// Receiver noise variance.
    pub sigma2_channel: f64,
}

impl ChannelRound {
    pub fn new(kappas: Vec<f64>, powers: Vec<f64>, sigma2_channel: f64) -> Result<Self> {
        ensure_len(kappas.len(), powers.len())?;
        if kappas.is_empty() {
            return Err(invalid("kappas", "at least one client is required"));
        }
        if kappas.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
            return Err(invalid("kappas", "SNRs must be finite and nonnegative"));
        }
        if powers.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(invalid("powers", "power budgets must be positive"));
        }
        if !(sigma2_channel.is_finite() && sigma2_channel >= 0.0) {
            return Err(invalid("sigma2_channel", "noise variance must be nonnegative"));
        }
        Ok(ChannelRound { kappas, powers, sigma2_channel })
    }

    pub fn n(&self) -> usize {
        self.kappas.len()
    }

    pub fn kappa_min(&self) -> f64 {
        self.kappas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Channel magnitudes `|h_i|`.
    pub fn gains(&self) -> Vec<f64> {
        self.kappas
            .iter()
            .zip(&self.powers)
            .map(|(k, p)| (k / p).sqrt())
            .collect()
    }
}

/// How channel gains evolve over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    /// Rayleigh gains drawn once and reused every round.
    Static,
    /// Fresh Rayleigh gains every round.
    Iid,
    /// `|h_i| = 1` for every client and round.
    Unit,
}

impl std::str::FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" => Ok(ChannelMode::Static),
            "iid" => Ok(ChannelMode::Iid),
            "unit" => Ok(ChannelMode::Unit),
            other => Err(invalid("channel_mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Rayleigh fading: `|h|^2 ~ Exp(1)`, the squared magnitude of a `CN(0, 1)` draw.
pub fn draw_rayleigh_kappas<R: Rng + ?Sized>(powers: &[f64], rng: &mut R) -> Vec<f64> {
    powers
        .iter()
        .map(|p| {
            let h2: f64 = rng.sample(Exp1);
            p * h2
        })
        .collect()
}

/// SNRs for round `t` of a run keyed by `root_seed`. `attempt` separates
/// redraws after an infeasible round.
pub fn round_kappas(mode: ChannelMode, powers: &[f64], root_seed: u64, t: u64, attempt: u64) -> Vec<f64> {
    match mode {
        ChannelMode::Unit => powers.to_vec(),
        ChannelMode::Static => {
            let mut rng = stream_rng(root_seed, Stream::ChannelGain, &[0, attempt]);
            draw_rayleigh_kappas(powers, &mut rng)
        }
        ChannelMode::Iid => {
            let mut rng = stream_rng(root_seed, Stream::ChannelGain, &[t, attempt]);
            draw_rayleigh_kappas(powers, &mut rng)
        }
    }
}

/// Signal power fractions and the common receive amplitude after alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub gamma: Vec<f64>,
    pub c: f64,
    pub kappa_min: f64,
}

/// Equalizes received signal amplitudes: `gamma_i = kappa_min / kappa_i` and
/// `c = sqrt(kappa_min) / L`, so `sqrt(gamma_i kappa_i) / L = c` for every client.
pub fn align(kappas: &[f64], grad_bound: f64, floor: f64) -> Result<Alignment> {
    if kappas.is_empty() {
        return Err(invalid("kappas", "at least one client is required"));
    }
    if !(grad_bound.is_finite() && grad_bound > 0.0) {
        return Err(invalid("grad_bound", "must be positive"));
    }
    let kappa_min = kappas.iter().copied().fold(f64::INFINITY, f64::min);
    if !(kappa_min > 0.0) || kappa_min < floor {
        return Err(Error::AlignmentInfeasible { kappa_min, floor });
    }
    let gamma = kappas.iter().map(|k| kappa_min / k).collect();
    Ok(Alignment { gamma, c: kappa_min.sqrt() / grad_bound, kappa_min })
}

/// Per-client split of the power budget between signal and artificial noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSplit {
    pub gamma: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl PowerSplit {
    pub fn new(gamma: Vec<f64>, zeta: Vec<f64>) -> Result<Self> {
        ensure_len(gamma.len(), zeta.len())?;
        for (&g, &z) in gamma.iter().zip(&zeta) {
            check_split(g, z)?;
        }
        Ok(PowerSplit { gamma, zeta })
    }

    /// Every client spends its full remaining budget on noise: `zeta_i = 1 - gamma_i`.
    pub fn full_headroom(gamma: Vec<f64>) -> Self {
        let zeta = gamma.iter().map(|g| (1.0 - g).max(0.0)).collect();
        PowerSplit { gamma, zeta }
    }

    /// `zeta_i = min(cap, 1 - gamma_i)`.
    pub fn capped(gamma: Vec<f64>, cap: f64) -> Self {
        let zeta = gamma.iter().map(|g| cap.min(1.0 - g).max(0.0)).collect();
        PowerSplit { gamma, zeta }
    }

    /// `sum_i zeta_i kappa_i / r`.
    pub fn noise_sum(&self, kappas: &[f64], r: usize) -> f64 {
        noise_sum(&self.zeta, kappas, r)
    }
}

fn check_split(gamma: f64, zeta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&zeta) {
        return Err(invalid("power split", format!("fractions must lie in [0, 1], got gamma={gamma}, zeta={zeta}")));
    }
    // Rounding in kappa_min / kappa_i can land a hair above 1.
    if gamma + zeta > 1.0 + 1e-12 {
        return Err(Error::PowerBudget { total: gamma + zeta });
    }
    Ok(())
}

/// `sum_i zeta_i kappa_i / r`, the artificial-noise power per channel use at the receiver.
pub fn noise_sum(zeta: &[f64], kappas: &[f64], r: usize) -> f64 {
    zeta.iter().zip(kappas).map(|(z, k)| z * k).sum::<f64>() / r as f64
}

/// Variance of the effective noise at the channel output, per channel use.
pub fn effective_noise_variance(noise_sum: f64, sigma2_channel: f64) -> f64 {
    noise_sum + sigma2_channel
}

/// Per-coordinate variance of the noise part of the decoded gradient.
pub fn equivalent_noise_variance(n: usize, c: f64, noise_sum: f64, sigma2_channel: f64) -> f64 {
    let nc = n as f64 * c;
    (noise_sum + sigma2_channel) / (nc * nc)
}

/// Transmit signal `x = (sqrt(gamma P)/L) z + sqrt(zeta P / r) m`, `m ~ N(0, I_r)`.
pub fn transmit<R: Rng + ?Sized>(
    z: &[f64],
    gamma: f64,
    zeta: f64,
    power: f64,
    grad_bound: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_split(gamma, zeta)?;
    if !(grad_bound > 0.0) {
        return Err(invalid("grad_bound", "must be positive"));
    }
    if !(power > 0.0) {
        return Err(invalid("power", "must be positive"));
    }
    let signal = (gamma * power).sqrt() / grad_bound;
    let mut x: Vec<f64> = z.iter().map(|v| signal * v).collect();
    if zeta > 0.0 {
        let noise = (zeta * power / z.len() as f64).sqrt();
        for v in &mut x {
            let m: f64 = rng.sample(StandardNormal);
            *v += noise * m;
        }
    }
    Ok(x)
}

/// `y = sum_i |h_i| x_i + n`, `n ~ N(0, sigma2 I_r)`.
pub fn mac_superpose<R: Rng + ?Sized>(signals: &[Vec<f64>], channel: &ChannelRound, rng: &mut R) -> Result<Vec<f64>> {
    ensure_len(channel.n(), signals.len())?;
    let r = signals.first().map(Vec::len).unwrap_or(0);
    let mut y = vec![0.0; r];
    for (x, h) in signals.iter().zip(channel.gains()) {
        ensure_len(r, x.len())?;
        for (acc, v) in y.iter_mut().zip(x) {
            *acc += h * v;
        }
    }
    if channel.sigma2_channel > 0.0 {
        let sd = channel.sigma2_channel.sqrt();
        for v in &mut y {
            let e: f64 = rng.sample(StandardNormal);
            *v += sd * e;
        }
    }
    Ok(y)
}

/// Parameter-server estimate `g_hat = T^T y / (n c)`.
pub fn ps_decode<P: Projector + ?Sized>(y: &[f64], projector: &P, n: usize, c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(invalid("c", "alignment constant must be positive"));
    }
    if n == 0 {
        return Err(invalid("n", "at least one client is required"));
    }
    let denom = n as f64 * c;
    let mut g = projector.back_project(y)?;
    g.iter_mut().for_each(|v| *v /= denom);
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub g_hat: Vec<f64>,
    pub y: Vec<f64>,
    pub c: f64,
    pub sigma2_effective: f64,
}

/// Runs project -> transmit -> superpose -> decode for one round. Client `i`
/// draws its artificial noise from `(root_seed, ClientNoise, t, i)` and the
/// receiver noise comes from `(root_seed, ChannelNoise, t)`.
#[allow(clippy::too_many_arguments)]
pub fn aggregate_round<P: Projector + ?Sized>(
    gradients: &[Vec<f64>],
    projector: &P,
    channel: &ChannelRound,
    split: &PowerSplit,
    c: f64,
    grad_bound: f64,
    root_seed: u64,
    t: u64,
) -> Result<RoundResult> {
    let n = channel.n();
    ensure_len(n, gradients.len())?;
    ensure_len(n, split.zeta.len())?;
    let signals = gradients
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let z = projector.project(g)?;
            let mut rng = stream_rng(root_seed, Stream::ClientNoise, &[t, i as u64]);
            transmit(&z, split.gamma[i], split.zeta[i], channel.powers[i], grad_bound, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = stream_rng(root_seed, Stream::ChannelNoise, &[t]);
    let y = mac_superpose(&signals, channel, &mut rng)?;
    let g_hat = ps_decode(&y, projector, n, c)?;
    let r = projector.channel_dim();
    Ok(RoundResult {
        g_hat,
        y,
        c,
        sigma2_effective: effective_noise_variance(split.noise_sum(&channel.kappas, r), channel.sigma2_channel),
    })
}
