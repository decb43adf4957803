//! Reproducible random streams.
//!
//! Every stream is xoshiro256** seeded by expanding a 64-bit seed with
//! splitmix64. Floating-point draws are built from the raw 64-bit output with
//! fixed conversions so that the same seed yields the same numbers in any
//! implementation of the two generators.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};

/// One splitmix64 output for `x`; used to derive independent per-trial seeds.
pub fn splitmix64(x: u64) -> u64 {
    SplitMix64::seed_from_u64(x).next_u64()
}

/// Seed for trial `trial` of a run seeded with `seed`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    splitmix64(seed.wrapping_add(trial))
}

#[derive(Debug, Clone)]
pub struct Stream {
    inner: Xoshiro256StarStar,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on (0, 1]; safe to take the logarithm of.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_in(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi);
        let span = (hi - lo + 1) as u64;
        lo + (self.next_u64() % span) as usize
    }

    /// Standard normal via Box-Muller (cosine branch only).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Natural log of a Gamma(shape, 1) draw.
    ///
    /// Marsaglia-Tsang squeeze for shape >= 1; shape < 1 uses the
    /// `Gamma(shape + 1) * U^(1/shape)` boost, kept in log space so tiny
    /// shapes do not underflow.
    pub fn ln_gamma_draw(&mut self, shape: f64) -> f64 {
        assert!(shape > 0.0 && shape.is_finite());
        if shape < 1.0 {
            let boosted = self.ln_gamma_draw(shape + 1.0);
            return boosted + self.uniform_open().ln() / shape;
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform_open();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return (d * v).ln();
            }
        }
    }

    /// Symmetric Dirichlet(alpha, ..., alpha) sample of dimension `n`.
    pub fn dirichlet(&mut self, alpha: f64, n: usize) -> Vec<f64> {
        let logs: Vec<f64> = (0..n).map(|_| self.ln_gamma_draw(alpha)).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = out.iter().sum();
        for x in &mut out {
            *x /= total;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = Stream::new(42);
        let mut b = Stream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(Stream::new(1).next_u64(), Stream::new(2).next_u64());
    }

    #[test]
    fn splitmix_reference_value() {
        // First output of splitmix64 seeded with 0.
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
    }

    #[test]
    fn gamma_moments() {
        let mut s = Stream::new(7);
        for &shape in &[0.3, 1.0, 2.5] {
            let n = 20_000;
            let draws: Vec<f64> = (0..n).map(|_| s.ln_gamma_draw(shape).exp()).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((mean - shape).abs() < 0.05 * shape.max(1.0), "{shape}: {mean}");
            assert!((var - shape).abs() < 0.1 * shape.max(1.0), "{shape}: {var}");
        }
    }

    #[test]
    fn dirichlet_on_simplex_even_for_tiny_alpha() {
        let mut s = Stream::new(3);
        for &alpha in &[1e-3, 0.1, 1.0, 10.0] {
            let x = s.dirichlet(alpha, 7);
            assert!(x.iter().all(|&v| v >= 0.0 && v.is_finite()));
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
