//! Experiment configuration: presets, TOML files and `key=value` overrides.
//!
//! Layers apply in order preset -> file -> overrides. Files and overrides may
//! set any subset of fields; unknown keys are rejected.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dprp_core::aircomp::ChannelMode;
use dprp_core::DistributionKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    /// Clients.
    pub n: usize,
    /// Model dimension.
    pub d: usize,
    /// Horizon `T`.
    pub rounds: usize,
    pub lambda: f64,
    /// Gradient bound `L`, also the smoothness constant in the bounds.
    pub grad_bound: f64,
    /// Power budget `P_i`, the same for every client.
    pub power: f64,
    pub delta: f64,
    pub delta_prime: f64,
    /// Projection laws, e.g. `achlioptas-s1`, `gaussian`.
    pub kinds: Vec<String>,
    pub eps_jl: f64,
    /// JL confidence exponent.
    pub a: f64,
    pub sigma2: f64,
    /// `static`, `iid` or `unit`.
    pub channel: String,
    pub seed: u64,
    /// Artificial noise `zeta_i = min(zeta_cap, 1 - gamma_i)`.
    pub zeta_cap: f64,
    /// Baseline noise `beta_i = min(beta_cap, 1 - gamma_i)`.
    pub beta_cap: f64,
    pub kappa_floor: f64,
    /// Channel realizations per sweep point; more than one adds stderr bands.
    pub draws: usize,

    /// Reduced dimensions swept by `ldp-curve` and `conv-curve`.
    pub r_grid: RGrid,
    /// `T`-fold epsilons swept by `tradeoff`.
    pub eps_grid: Vec<f64>,
    /// Reduced dimensions compared by `tradeoff`.
    pub tradeoff_r: Vec<usize>,

    /// Per-client `T`-fold target for `allocate`.
    pub eps_target: f64,
    /// Top of the `allocate` scan over `r`.
    pub alloc_r_max: usize,

    /// Reduced dimension for `simulate`.
    pub r: usize,
    pub samples_per_client: usize,
    pub task_seed: u64,

    /// Monte Carlo trials for `verify`.
    pub verify_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RGrid {
    pub start: usize,
    pub stop: usize,
    pub step: usize,
}

impl RGrid {
    pub fn values(&self) -> Vec<usize> {
        (self.start..=self.stop).step_by(self.step.max(1)).collect()
    }
}

pub const PRESETS: [&str; 2] = ["large", "small"];

impl ExperimentConfig {
    /// Full-scale setup: 1000 clients, `d = 10^4`,
    /// `T = 1000`, Rayleigh channel, Achlioptas `s = 1, 2`.
    pub fn large() -> Self {
        ExperimentConfig {
            scenario: "large".into(),
            n: 1000,
            d: 10_000,
            rounds: 1000,
            lambda: 0.001,
            grad_bound: 1.0,
            power: 1.0,
            delta: 5e-5,
            delta_prime: 5e-5,
            kinds: vec!["achlioptas-s1".into(), "achlioptas-s2".into()],
            eps_jl: 0.5,
            a: 1.0,
            sigma2: 1.0,
            channel: "static".into(),
            seed: 1,
            zeta_cap: 1.0,
            beta_cap: 1.0,
            kappa_floor: 1e-9,
            draws: 1,
            r_grid: RGrid { start: 10, stop: 10_000, step: 10 },
            eps_grid: log_grid(0.1, 1000.0, 41),
            tradeoff_r: vec![100, 1000],
            eps_target: 1000.0,
            alloc_r_max: 10_000,
            r: 500,
            samples_per_client: 20,
            task_seed: 1,
            verify_trials: 100_000,
        }
    }

    /// A desk-sized scenario for training runs and quick checks.
    pub fn small() -> Self {
        ExperimentConfig {
            scenario: "small".into(),
            n: 10,
            d: 50,
            rounds: 500,
            lambda: 0.5,
            grad_bound: 1.0,
            power: 1.0,
            delta: 5e-5,
            delta_prime: 5e-5,
            kinds: vec!["rademacher".into()],
            eps_jl: 0.5,
            a: 1.0,
            sigma2: 1.0,
            channel: "iid".into(),
            seed: 1,
            zeta_cap: 0.5,
            beta_cap: 0.5,
            kappa_floor: 0.05,
            draws: 1,
            r_grid: RGrid { start: 5, stop: 50, step: 5 },
            eps_grid: log_grid(1.0, 1000.0, 13),
            tradeoff_r: vec![5, 25],
            eps_target: 5000.0,
            alloc_r_max: 50,
            r: 25,
            samples_per_client: 20,
            task_seed: 1,
            verify_trials: 20_000,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "large" => Ok(Self::large()),
            "small" => Ok(Self::small()),
            other => bail!("unknown preset `{other}` (expected one of: {})", PRESETS.join(", ")),
        }
    }

    /// Preset, then the optional TOML file, then `key=value` overrides.
    pub fn load(preset: &str, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = to_table(&Self::preset(preset)?)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let layer: toml::Table =
                toml::from_str(&text).map_err(|e| anyhow!("{}: {}", path.display(), e.to_string().trim_end()))?;
            merge(&mut table, layer);
            // Report unknown keys and type errors against the file first.
            Self::from_table(table.clone()).with_context(|| format!("in {}", path.display()))?;
        }
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{item}` is not of the form key=value"))?;
            set_path(&mut table, key.trim(), parse_value(value.trim()))
                .with_context(|| format!("in override `{item}`"))?;
            Self::from_table(table.clone()).with_context(|| format!("in override `{item}`"))?;
        }
        let config = Self::from_table(table)?;
        if let Err(e) = config.validate() {
            let mut layers = vec![format!("preset `{preset}`")];
            layers.extend(file.map(|p| p.display().to_string()));
            layers.extend(overrides.iter().map(|o| format!("`{o}`")));
            return Err(e.context(format!("invalid configuration from {}", layers.join(" + "))));
        }
        Ok(config)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| anyhow!("{}", e.to_string().trim_end()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.rounds == 0 {
            bail!("n, d and rounds must be >= 1");
        }
        if self.kinds.is_empty() {
            bail!("kinds must name at least one projection law");
        }
        self.parsed_kinds()?;
        self.channel_mode()?;
        if !(self.grad_bound > 0.0 && self.power > 0.0 && self.lambda > 0.0) {
            bail!("grad_bound, power and lambda must be positive");
        }
        if self.grad_bound < self.lambda {
            bail!("grad_bound ({}) must be at least lambda ({})", self.grad_bound, self.lambda);
        }
        if self.draws == 0 {
            bail!("draws must be >= 1");
        }
        if self.r_grid.step == 0 || self.r_grid.start == 0 || self.r_grid.start > self.r_grid.stop {
            bail!("r_grid needs 1 <= start <= stop and step >= 1");
        }
        if self.r_grid.stop > self.d {
            bail!("r_grid.stop ({}) exceeds d ({})", self.r_grid.stop, self.d);
        }
        if self.tradeoff_r.iter().any(|&r| r == 0 || r > self.d) {
            bail!("tradeoff_r values must lie in 1..=d");
        }
        if self.eps_grid.iter().any(|e| e.is_nan() || *e <= 0.0) {
            bail!("eps_grid values must be positive");
        }
        Ok(())
    }

    pub fn parsed_kinds(&self) -> Result<Vec<DistributionKind>> {
        self.kinds
            .iter()
            .map(|k| k.parse::<DistributionKind>().map_err(|e| anyhow!("kinds: {e}")))
            .collect()
    }

    pub fn channel_mode(&self) -> Result<ChannelMode> {
        self.channel.parse::<ChannelMode>().map_err(|e| anyhow!("channel: {e}"))
    }

    /// Canonical TOML text of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// `points` values spaced evenly in log scale from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..points)
        .map(|k| {
            let v = 10f64.powf(a + (b - a) * k as f64 / (points - 1) as f64);
            // Keep grid points short in the CSV.
            (v * 1e6).round() / 1e6
        })
        .collect()
}

fn to_table(config: &ExperimentConfig) -> Result<toml::Table> {
    Ok(toml::Table::try_from(config)?)
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (key, value) in layer {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(inner)), toml::Value::Table(patch)) => merge(inner, patch),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Interprets an override value as TOML (`3`, `0.5`, `[1, 2]`, `true`) and
/// falls back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut current = table;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            if !current.contains_key(part) {
                bail!("unknown field `{key}`");
            }
            current.insert(part.to_string(), value);
            return Ok(());
        }
        current = match current.get_mut(part) {
            Some(toml::Value::Table(inner)) => inner,
            _ => bail!("unknown field `{key}`"),
        };
    }
    bail!("empty key")
}
