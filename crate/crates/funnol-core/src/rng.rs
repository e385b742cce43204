//! Deterministic random number generation.
//!
//! Every stochastic step in this crate (weight initialization, splits,
//! downsampling, corruption, batch shuffling) draws from a SplitMix64
//! stream seeded by a key derived from the run seed and the identity of
//! the step. Streams keyed on (seed, purpose, index, ...) make results
//! independent of evaluation order and of thread scheduling.

/// SplitMix64 generator. Small state, full 64-bit period, passes BigCrush.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        // Guard u1 away from zero so ln is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / ((1u64 << 53) + 1) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform index in [0, n).
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Rejection-free: bias is negligible for n far below 2^64.
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }

    /// Uniform sample of `k` distinct indices from [0, n), in sorted order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut all: Vec<usize> = (0..n).collect();
        self.shuffle(&mut all);
        let mut chosen: Vec<usize> = all.into_iter().take(k).collect();
        chosen.sort_unstable();
        chosen
    }
}

/// Mixes a list of key parts into a single 64-bit seed.
///
/// Used to derive independent streams from one master seed, e.g.
/// `mix_key(&[seed, draw, sample, cell])` for per-cell corruption draws.
pub fn mix_key(parts: &[u64]) -> u64 {
    let mut acc = 0x53a4_9f1e_8cd1_77cbu64;
    for &p in parts {
        acc ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = acc;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        acc = z ^ (z >> 31);
    }
    acc
}

/// Stream tags keeping derived seeds for different purposes disjoint.
pub mod stream {
    pub const INIT: u64 = 0x01;
    pub const SHUFFLE: u64 = 0x02;
    pub const CORRUPT: u64 = 0x03;
    pub const SPLIT: u64 = 0x04;
    pub const DOWNSAMPLE: u64 = 0x05;
    pub const PROTOCOL: u64 = 0x06;
    pub const SIMULATE: u64 = 0x07;
}
