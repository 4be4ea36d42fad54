//! Reproducible random streams.
//!
//! Replication `r` of a run with master seed `s` uses the seed
//! `derive_seed(s, r)`, where `derive_seed(s, i) = mix64(s + (i + 1)·γ)` with
//! `γ = 0x9E3779B97F4A7C15` and `mix64` the SplitMix64 finalizer. That is the
//! `(i+1)`-th output of a SplitMix64 generator started at state `s`, so
//! replication seeds never depend on scheduling. Within a replication,
//! independent substreams (environment, offspring of each process) are
//! derived the same way from the replication seed and feed a
//! Xoshiro256++ generator.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Substream of a replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Environment = 0,
    Offspring1 = 1,
    Offspring2 = 2,
    Normals = 3,
}

/// SplitMix64 output function (Stafford's variant 13).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn stream_rng(replication_seed: u64, stream: Stream) -> SimRng {
    SimRng::seed_from_u64(derive_seed(replication_seed, stream as u64))
}
