//! Seeded, named random streams.
//!
//! All randomness in a run flows from one master seed. Each consumer asks
//! for a stream by name; the stream key is derived from the master seed and
//! the name alone, so adding a new consumer never perturbs existing streams.
//!
//! Sampling is built directly on the ChaCha8 word stream (uniform bits plus
//! Box-Muller) instead of distribution crates, so draws are stable across
//! dependency upgrades.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct SeedHub {
    master: u64,
}

impl SeedHub {
    pub fn new(master: u64) -> Self {
        SeedHub { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Derive the stream for `name`. Deterministic in `(master, name)`.
    pub fn stream(&self, name: &str) -> Stream {
        let mut key = [0u8; 32];
        let mut state = self.master ^ 0x9e3779b97f4a7c15;
        for &b in name.as_bytes() {
            state = splitmix64(state ^ b as u64);
        }
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Stream { rng: ChaCha8Rng::from_seed(key), spare_normal: None }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub struct Stream {
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`, safe as a log argument.
    fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // acceptable modulo bias for the desk-scale index ranges used here
        (self.rng.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller, computed in f64.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    pub fn normal_tensor<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::from_f64(self.normal()))
    }

    pub fn normal_scaled<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        Tensor::from_fn(shape, |_| T::from_f64(self.normal() * std))
    }

    /// Uniformly distributed point on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
            if norm > 1e-12 {
                return v.iter().map(|x| x / norm).collect();
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<U>(&mut self, items: &mut [U]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `count` indices sampled uniformly with replacement from `0..n`.
    pub fn indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.below(n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic_and_independent() {
        let hub = SeedHub::new(7);
        let a1: Vec<u64> = {
            let mut s = hub.stream("alpha");
            (0..4).map(|_| s.next_u64()).collect()
        };
        let a2: Vec<u64> = {
            let mut s = hub.stream("alpha");
            (0..4).map(|_| s.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut s = hub.stream("beta");
            (0..4).map(|_| s.next_u64()).collect()
        };
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
    }

    #[test]
    fn normal_moments_are_sane() {
        let hub = SeedHub::new(123);
        let mut s = hub.stream("normal");
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let z = s.normal();
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {}", mean);
        assert!((var - 1.0).abs() < 0.02, "var {}", var);
    }

    #[test]
    fn unit_vectors_have_unit_norm() {
        let hub = SeedHub::new(5);
        let mut s = hub.stream("dirs");
        for _ in 0..10 {
            let v = s.unit_vector(32);
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}
