//! Deterministic randomness.
//!
//! All stochastic choices in the simulator (weight init, shuffles, check-in
//! and drop draws, participant sampling, synthetic noise) flow through
//! [`ChaCha8Rng`] streams derived from a run seed plus a stream tag and
//! context words. Distinct consumers never share a stream, so adding or
//! removing draws in one place cannot perturb another.
//!
//! Sampling primitives are hand-rolled on top of `next_u64` so that the
//! generated sequences do not depend on distribution code in external
//! crates.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent stream identifiers, one per randomness consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    WeightInit,
    EpochShuffle,
    CheckIn,
    Select,
    MidRoundDrop,
    LocalTraining,
    SynthNoise,
    SynthLocation,
    KmeansInit,
    PartitionShuffle,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::WeightInit => 0x5745_4947_4854_0001,
            Stream::EpochShuffle => 0x5348_5546_464c_0002,
            Stream::CheckIn => 0x4348_4543_4b49_0003,
            Stream::Select => 0x5345_4c45_4354_0004,
            Stream::MidRoundDrop => 0x4452_4f50_4f55_0005,
            Stream::LocalTraining => 0x4c4f_4341_4c55_0006,
            Stream::SynthNoise => 0x4e4f_4953_4500_0007,
            Stream::SynthLocation => 0x4c4f_4341_5445_0008,
            Stream::KmeansInit => 0x4b4d_4541_4e53_0009,
            Stream::PartitionShuffle => 0x5041_5254_0000_000a,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapses `(seed, stream, context words)` into a single sub-seed.
pub fn derive_seed(seed: u64, stream: Stream, context: &[u64]) -> u64 {
    let mut acc = splitmix(seed ^ stream.tag());
    for &word in context {
        acc = splitmix(acc ^ word);
    }
    acc
}

/// RNG for the given `(seed, stream, context)` triple.
pub fn stream_rng(seed: u64, stream: Stream, context: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, context))
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(rng)
}

/// Standard normal draw (Box-Muller; one of the pair is discarded).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = loop {
        let u = uniform01(rng);
        if u > 0.0 {
            break u;
        }
    };
    let u2 = uniform01(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform integer in `[0, n)`. Modulo bias is below 2^-32 for the index
/// ranges used here (shuffles and sampling over at most millions of items).
pub fn uniform_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    (rng.next_u64() % n as u64) as usize
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_index(rng, i + 1);
        items.swap(i, j);
    }
}

/// Samples `k` distinct indices from `0..n` without replacement
/// (partial Fisher-Yates); returned in draw order.
pub fn sample_without_replacement(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_index(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
