//! Reproducible random streams.
//!
//! Every random draw in the crate goes through [`Stream`], a ChaCha8
//! generator (`rand_chacha::ChaCha8Rng`) keyed by a 64-bit seed and a
//! 64-bit stream id. Dataset instance `k` of a run seeded with `s` always
//! reads stream `(s, k)`, so generation order and thread count never
//! change the output.
//!
//! Derived draws are defined here rather than borrowed from `rand`'s
//! distributions so the exact mapping from bits to values is fixed:
//!
//! - `uniform()` = `(next_u64() >> 11) * 2^-53`, a double in `[0, 1)`.
//! - `below(n)` = rejection sampling on `next_u64()` against the largest
//!   multiple of `n`, then `% n`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Named stream ids so independent consumers of one seed never overlap.
pub mod streams {
    pub const JACOBI_DATA: u64 = 1 << 32;
    pub const DIFFUSION_DATA: u64 = 2 << 32;
    pub const PROBES: u64 = 3 << 32;
    pub const INIT: u64 = 4 << 32;
    pub const SHUFFLE: u64 = 5 << 32;
    pub const MISC: u64 = 6 << 32;
}

#[derive(Clone, Debug)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_in(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    /// Standard normal via Box–Muller (first variate only).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `count` distinct indices from `0..n`, in draw order.
    pub fn sample_distinct(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n, "cannot draw {count} distinct values from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}
