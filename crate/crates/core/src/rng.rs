//! Seeded, platform-stable random streams.
//!
//! Uniforms come from a ChaCha8 block generator (a counter-mode stream
//! cipher, so the stream depends only on the seed and the draw count).
//! Gaussians use the ziggurat transform from `rand_distr`, which is table
//! driven and does not depend on platform `libm` for the common path.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

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

    /// Independent child stream keyed by `(seed, stream)`.
    pub fn derive(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher-Yates on our own index draws keeps the order tied to this stream.
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// I.i.d. standard-normal tensor.
    pub fn randn<S: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<S>> {
        check_extents(shape)?;
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| S::from_f64(self.normal())).collect();
        Tensor::new(shape, data)
    }

    /// I.i.d. uniform tensor on [lo, hi).
    pub fn rand_uniform<S: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<S>> {
        check_extents(shape)?;
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| S::from_f64(lo + (hi - lo) * self.uniform()))
            .collect();
        Tensor::new(shape, data)
    }

    /// Normal with the given std, resampled until within two std.
    pub fn truncated_normal(&mut self, std: f64) -> f64 {
        loop {
            let v = self.normal();
            if v.abs() <= 2.0 {
                return v * std;
            }
        }
    }
}

fn check_extents(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(shape_err!("sample shape {:?} must have positive extents", shape));
    }
    Ok(())
}

/// Free-function form of [`Rng::randn`].
pub fn randn<S: Scalar>(rng: &mut Rng, shape: &[usize]) -> Result<Tensor<S>> {
    rng.randn(shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn same_seed_same_stream() {
        let a: Tensor<f64> = Rng::new(42).randn(&[4, 5]).unwrap();
        let b: Tensor<f64> = Rng::new(42).randn(&[4, 5]).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let c: Tensor<f64> = Rng::new(43).randn(&[4, 5]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_extent_is_rejected() {
        assert!(matches!(
            Rng::new(0).randn::<f64>(&[0]),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            Rng::new(0).randn::<f64>(&[3, 0]),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn derived_streams_differ() {
        let root = Rng::new(5);
        let mut a = root.derive(0);
        let mut b = root.derive(1);
        assert_ne!(a.next_u64(), b.next_u64());
        let mut a2 = root.derive(0);
        let mut a3 = root.derive(0);
        assert_eq!(a2.next_u64(), a3.next_u64());
    }
}
