//! Deterministic parameter initialization.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded generator shared by every initializer in the crate.
#[derive(Debug, Clone)]
pub struct ParamRng(ChaCha8Rng);

impl ParamRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent child stream; keeps one component's draws from shifting another's.
    pub fn fork(&mut self, stream: u64) -> Self {
        let mut child = ChaCha8Rng::seed_from_u64(self.0.gen::<u64>());
        child.set_stream(stream);
        Self(child)
    }

    /// `n` values uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn fan_in_uniform(&mut self, n: usize, fan_in: usize) -> Vec<f32> {
        let bound = 1.0 / libm::sqrtf(fan_in.max(1) as f32);
        self.uniform(n, -bound, bound)
    }

    pub fn uniform(&mut self, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        (0..n).map(|_| self.0.gen_range(lo..hi)).collect()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_bounded() {
        let a = ParamRng::new(3).fan_in_uniform(100, 16);
        let b = ParamRng::new(3).fan_in_uniform(100, 16);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() <= 0.25));
        assert_ne!(ParamRng::new(4).fan_in_uniform(100, 16), a);
    }
}
