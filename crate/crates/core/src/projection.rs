//! Random projection matrices shared between clients and the parameter server.
//!
//! A [`ProjectionMatrix`] holds the `r x d` block `U_r` of a random matrix whose
//! entries follow one of the laws in [`DistributionKind`]. Only the first `r`
//! rows are ever sampled, so the draws differ from a hypothetical generator that
//! fills a full `d x d` matrix row by row and then truncates it only in the sense
//! that no rows beyond `r` are consumed from the stream; the first `r` rows are
//! the same either way.
//!
//! The `1/sqrt(r)` normalization is applied by [`Projector::project`] and
//! [`Projector::back_project`], not stored in the matrix, so entries stay in
//! their natural support (`{-1, +1}`, `{-sqrt(s), 0, +sqrt(s)}` or the reals).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Error, Result};
use crate::rng::{rng_from_seed, stream_seed, Stream};

/// Entry law of the projection matrix. Every law has mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistributionKind {
    /// `+1` or `-1` with probability 1/2 each.
    Rademacher,
    /// Standard normal.
    Gaussian,
    /// `+sqrt(s)` and `-sqrt(s)` with probability `1/(2s)` each, `0` otherwise.
    Achlioptas { s: u32 },
}

impl DistributionKind {
    pub fn achlioptas(s: u32) -> Result<Self> {
        if s == 0 {
            return Err(invalid("s", "Achlioptas sparsity must be >= 1"));
        }
        Ok(DistributionKind::Achlioptas { s })
    }

    /// Sparsity `s` as it enters the bounds: 1 for Rademacher and Gaussian.
    pub fn sparsity(&self) -> u32 {
        match *self {
            DistributionKind::Achlioptas { s } => s,
            _ => 1,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            DistributionKind::Rademacher => "rademacher".to_string(),
            DistributionKind::Gaussian => "gaussian".to_string(),
            DistributionKind::Achlioptas { s } => format!("achlioptas-s{s}"),
        }
    }

    /// Probability that a single entry is exactly zero.
    pub fn zero_probability(&self) -> f64 {
        match *self {
            DistributionKind::Achlioptas { s } => 1.0 - 1.0 / f64::from(s),
            _ => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if let DistributionKind::Achlioptas { s: 0 } = self {
            return Err(invalid("s", "Achlioptas sparsity must be >= 1"));
        }
        Ok(())
    }

    /// Fills `out` with i.i.d. entries of this law.
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match *self {
            // Achlioptas with s = 1 is the Rademacher law; share the sampler so
            // the two produce identical matrices from identical seeds.
            DistributionKind::Rademacher | DistributionKind::Achlioptas { s: 1 } => {
                for chunk in out.chunks_mut(64) {
                    let mut bits: u64 = rng.random();
                    for x in chunk {
                        *x = if bits & 1 == 1 { 1.0 } else { -1.0 };
                        bits >>= 1;
                    }
                }
            }
            DistributionKind::Gaussian => {
                for x in out {
                    *x = rng.sample(StandardNormal);
                }
            }
            DistributionKind::Achlioptas { s } => {
                let s = f64::from(s);
                let half = 0.5 / s;
                let nonzero = 1.0 / s;
                let magnitude = s.sqrt();
                for x in out {
                    let u: f64 = rng.random();
                    *x = if u < half {
                        magnitude
                    } else if u < nonzero {
                        -magnitude
                    } else {
                        0.0
                    };
                }
            }
        }
    }
}

impl std::fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "rademacher" => Ok(DistributionKind::Rademacher),
            "gaussian" => Ok(DistributionKind::Gaussian),
            other => {
                let sparsity = other
                    .strip_prefix("achlioptas-s")
                    .or_else(|| other.strip_prefix("achlioptas:"))
                    .or_else(|| other.strip_prefix("achlioptas"))
                    .ok_or_else(|| invalid("kind", format!("unknown distribution `{s}`")))?;
                let sparsity: u32 = sparsity
                    .parse()
                    .map_err(|_| invalid("kind", format!("bad Achlioptas sparsity in `{s}`")))?;
                DistributionKind::achlioptas(sparsity)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProjectionSpec {
    pub kind: DistributionKind,
    pub d: usize,
    pub r: usize,
    pub seed: u64,
}

impl ProjectionSpec {
    pub fn new(kind: DistributionKind, d: usize, r: usize, seed: u64) -> Result<Self> {
        let spec = ProjectionSpec { kind, d, r, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec for round `t` of a run keyed by `root_seed`.
    pub fn for_round(kind: DistributionKind, d: usize, r: usize, root_seed: u64, t: u64) -> Result<Self> {
        Self::new(kind, d, r, round_seed(root_seed, t))
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r > self.d {
            return Err(Error::InvalidDimensions { r: self.r, d: self.d });
        }
        self.kind.validate()
    }
}

/// Seed of the projection matrix used in round `t`.
pub fn round_seed(root_seed: u64, t: u64) -> u64 {
    stream_seed(root_seed, Stream::Projection, &[t])
}

/// Linear map from the model space (dimension `d`) to the channel (dimension `r`).
pub trait Projector {
    fn model_dim(&self) -> usize;
    fn channel_dim(&self) -> usize;
    /// `T g`, an `r`-vector.
    fn project(&self, g: &[f64]) -> Result<Vec<f64>>;
    /// `T^T y`, a `d`-vector.
    fn back_project(&self, y: &[f64]) -> Result<Vec<f64>>;
}

/// The `r x d` block `U_r`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    spec: ProjectionSpec,
    rows: Vec<f64>,
}

impl ProjectionMatrix {
    pub fn generate(spec: ProjectionSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from_seed(spec.seed);
        Ok(Self::generate_with(spec, &mut rng))
    }

    fn generate_with(spec: ProjectionSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut rows = vec![0.0; spec.r * spec.d];
        for row in rows.chunks_mut(spec.d) {
            spec.kind.fill(rng, row);
        }
        ProjectionMatrix { spec, rows }
    }

    /// Builds a matrix from explicit entries (row-major, `r x d`).
    pub fn from_rows(kind: DistributionKind, d: usize, r: usize, rows: Vec<f64>) -> Result<Self> {
        let spec = ProjectionSpec::new(kind, d, r, 0)?;
        ensure_len(r * d, rows.len())?;
        Ok(ProjectionMatrix { spec, rows })
    }

    pub fn spec(&self) -> &ProjectionSpec {
        &self.spec
    }

    pub fn entries(&self) -> &[f64] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let d = self.spec.d;
        &self.rows[k * d..(k + 1) * d]
    }

    pub fn entry(&self, k: usize, j: usize) -> f64 {
        self.rows[k * self.spec.d + j]
    }

    /// `U_r g` without the `1/sqrt(r)` factor.
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.spec.d, g.len())?;
        Ok(self
            .rows
            .chunks(self.spec.d)
            .map(|row| dot_skip_zero(row, g))
            .collect())
    }

    /// `U_r^T y` without the `1/sqrt(r)` factor.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.spec.r, y.len())?;
        let mut out = vec![0.0; self.spec.d];
        for (row, &yk) in self.rows.chunks(self.spec.d).zip(y) {
            if yk == 0.0 {
                continue;
            }
            for (o, &u) in out.iter_mut().zip(row) {
                if u != 0.0 {
                    *o += u * yk;
                }
            }
        }
        Ok(out)
    }

    /// Column `j` of `U_r`, an `r`-vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.spec.r).map(|k| self.entry(k, j)).collect()
    }

    /// `U_r^T U_r`, the `d x d` Gram matrix, row-major.
    pub fn gram(&self) -> Vec<f64> {
        let d = self.spec.d;
        let mut out = vec![0.0; d * d];
        for row in self.rows.chunks(d) {
            for (j, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (k, &b) in row.iter().enumerate() {
                    out[j * d + k] += a * b;
                }
            }
        }
        out
    }
}

fn dot_skip_zero(row: &[f64], g: &[f64]) -> f64 {
    row.iter()
        .zip(g)
        .filter(|(u, _)| **u != 0.0)
        .map(|(u, x)| u * x)
        .sum()
}

impl Projector for ProjectionMatrix {
    fn model_dim(&self) -> usize {
        self.spec.d
    }

    fn channel_dim(&self) -> usize {
        self.spec.r
    }

    fn project(&self, g: &[f64]) -> Result<Vec<f64>> {
        let scale = 1.0 / (self.spec.r as f64).sqrt();
        let mut z = self.apply(g)?;
        z.iter_mut().for_each(|x| *x *= scale);
        Ok(z)
    }

    fn back_project(&self, y: &[f64]) -> Result<Vec<f64>> {
        let scale = 1.0 / (self.spec.r as f64).sqrt();
        let mut g = self.apply_transpose(y)?;
        g.iter_mut().for_each(|x| *x *= scale);
        Ok(g)
    }
}

/// `T = I_d`. A debugging projection under which the pipeline reduces to plain
/// FedSGD; both directions return the input unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityProjector {
    pub d: usize,
}

impl Projector for IdentityProjector {
    fn model_dim(&self) -> usize {
        self.d
    }

    fn channel_dim(&self) -> usize {
        self.d
    }

    fn project(&self, g: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.d, g.len())?;
        Ok(g.to_vec())
    }

    fn back_project(&self, y: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.d, y.len())?;
        Ok(y.to_vec())
    }
}
