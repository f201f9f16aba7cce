//! Seeded noise streams.
//!
//! Every random draw in the simulator comes from a [`NoiseStream`]. A stream
//! is a xoshiro256++ generator seeded through SplitMix64 (the
//! `seed_from_u64` expansion of `rand_xoshiro`) from
//! `scenario_seed ^ fnv1a64(stream_name)`. Uniform doubles take the top 53
//! bits of `next_u64`; normals use the Box-Muller cosine branch with two
//! uniforms per draw. Each sensor owns its own named stream, so adding a
//! noise source never perturbs the draws of the others.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn fnv1a64(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: Xoshiro256PlusPlus,
}

impl NoiseStream {
    pub fn new(seed: u64, name: &str) -> Self {
        Self { rng: Xoshiro256PlusPlus::seed_from_u64(seed ^ fnv1a64(name)) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1]
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Zero-mean normal; `sigma == 0` still consumes the draws so the stream
    /// layout does not depend on noise settings.
    pub fn normal(&mut self, sigma: f64) -> f64 {
        sigma * self.standard_normal()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        self.next_u64() % n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = NoiseStream::new(42, "flow");
        let mut b = NoiseStream::new(42, "flow");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn names_separate_streams() {
        let mut a = NoiseStream::new(42, "flow");
        let mut b = NoiseStream::new(42, "tags");
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn normal_moments() {
        let mut s = NoiseStream::new(7, "moments");
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.standard_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut s = NoiseStream::new(1, "u");
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
