//! SplitMix64, the single source of randomness for fixtures and initialization.

use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }

    pub fn tensor<T: Element>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
        let len = shape.iter().product();
        let data = (0..len).map(|_| T::from_f64(self.uniform(lo, hi))).collect();
        Tensor::from_vec(shape, data).expect("shape and data length agree")
    }

    /// Weight initialization: uniform in [-s, s] with s = 1/sqrt(fan_in).
    pub fn fan_in_uniform<T: Element>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let s = 1.0 / (fan_in as f64).sqrt();
        self.tensor(shape, -s, s)
    }
}
