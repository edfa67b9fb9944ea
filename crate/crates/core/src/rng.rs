//! Seeded, counter-based random streams.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

/// ChaCha8 keyed by a 64-bit seed. The keystream position is the counter, so the same
/// seed and call sequence always reproduce the same values, and `fork` hands out
/// independent streams without touching the parent.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream keyed by `(seed, stream)`, starting from position zero.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            seed: self.seed,
            inner,
        }
    }

    /// Uniform draw on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| lo + (hi - lo) * self.next_f64()).collect()
    }

    /// Real-valued tensor of i.i.d. draws on `[lo, hi)`.
    pub fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Result<ComplexTensor> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidRange { lo, hi });
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            // guard the upper end against rounding of lo + (hi - lo) * u
            let v = lo + (hi - lo) * self.next_f64();
            values.push(if v < hi { v } else { lo });
        }
        ComplexTensor::from_real(shape, &values)
    }

    /// Complex tensor with real and imaginary parts uniform on `[-1, 1)`.
    pub fn complex_uniform(&mut self, shape: &[usize]) -> ComplexTensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| Complex64::new(2.0 * self.next_f64() - 1.0, 2.0 * self.next_f64() - 1.0))
            .collect();
        ComplexTensor::from_parts(shape.to_vec(), data)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}
