//! Seed derivation and random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] seeded with a
//! 64-bit value obtained from a root seed through [`derive_seed`]. ChaCha's
//! output is specified independently of the host platform, so identical seeds
//! reproduce identical draws everywhere.
//!
//! The derivation chain is SplitMix64-based:
//!
//! ```text
//! s_0 = root
//! s_k = mix(s_{k-1} ^ mix(part_k + GOLDEN))
//! ```
//!
//! where `mix` is the SplitMix64 finalizer and `GOLDEN = 0x9E3779B97F4A7C15`.
//! A projection matrix for round `t` uses `derive_seed(root, &[Stream::Projection, t])`;
//! client `i`'s artificial noise in round `t` uses
//! `derive_seed(root, &[Stream::ClientNoise, t, i])`, and so on. Clients and
//! the parameter server only need to share `root`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(root, |s, &p| mix64(s ^ mix64(p.wrapping_add(GOLDEN))))
}

/// Domain separators for the seed chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Projection = 1,
    ClientNoise = 2,
    ChannelNoise = 3,
    ChannelGain = 4,
    Task = 5,
    Trial = 6,
}

impl From<Stream> for u64 {
    fn from(s: Stream) -> u64 {
        s as u64
    }
}

pub fn stream_seed(root: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut parts = Vec::with_capacity(indices.len() + 1);
    parts.push(u64::from(stream));
    parts.extend_from_slice(indices);
    derive_seed(root, &parts)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(root: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    rng_from_seed(stream_seed(root, stream, indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable() {
        // Frozen so that a change to the chain is caught.
        assert_eq!(derive_seed(0, &[]), 0);
        let a = derive_seed(42, &[1, 7]);
        assert_eq!(a, derive_seed(42, &[1, 7]));
        assert_ne!(a, derive_seed(42, &[7, 1]));
        assert_ne!(a, derive_seed(43, &[1, 7]));
    }

    #[test]
    fn streams_are_separated() {
        let p = stream_seed(9, Stream::Projection, &[3]);
        let c = stream_seed(9, Stream::ClientNoise, &[3]);
        assert_ne!(p, c);
    }

    #[test]
    fn same_seed_same_draws() {
        let mut a = stream_rng(5, Stream::Trial, &[0]);
        let mut b = stream_rng(5, Stream::Trial, &[0]);
        let xs: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
    }
}
