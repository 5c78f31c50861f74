//! Differentially private FedSGD with random projections over an
//! over-the-air multiple-access channel.
//!
//! Clients project their gradients to `r` dimensions with a shared random
//! matrix, add artificial Gaussian noise and transmit simultaneously; the
//! server receives the superposition plus receiver noise and back-projects.

// Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aircomp;
pub mod allocator;
pub mod checks;
pub mod convergence;
pub mod error;
pub mod montecarlo;
pub mod privacy;
pub mod projection;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use projection::{DistributionKind, IdentityProjector, ProjectionMatrix, ProjectionSpec, Projector};
