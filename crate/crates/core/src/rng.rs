//! Seeded random streams.
//!
//! Every random draw in the toolkit comes from a 128-bit-state PCG generator
//! (`Pcg64`, XSL-RR output) seeded through `SeedableRng::seed_from_u64`.
//! Uniform reals are formed from the top 53 bits of `next_u64`, so a stream is
//! reproducible in any language that implements the same generator.

use rand_pcg::rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;

/// Tags separating independent streams derived from one user seed.
pub mod tag {
    pub const ISING: u64 = 0x1;
    pub const W_CON: u64 = 0x2;
    pub const ESN_RECURRENT: u64 = 0x3;
    pub const ESN_INPUT: u64 = 0x4;
    pub const SYNTH: u64 = 0x5;
    pub const PERTURB: u64 = 0x6;
}

#[derive(Debug, Clone)]
pub struct Stream {
    inner: Pcg64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Pcg64::seed_from_u64(seed),
        }
    }

    /// Stream for `(seed, tag)`; distinct tags give unrelated sequences.
    pub fn derived(seed: u64, tag: u64) -> Self {
        Self::new(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Standard normal via Box-Muller (one value per two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}
