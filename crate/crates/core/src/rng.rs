//! Seeded random streams.
//!
//! Built on ChaCha8, whose output is specified independently of platform and word
//! size, so a seed reproduces the same samples everywhere.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `(seed, stream)`; does not advance `self`.
    pub fn derive(&self, stream: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn sign(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..n`, in random order.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, amount).into_vec()
    }

    pub fn gaussian_vec<T: Real>(&mut self, len: usize) -> Vec<T> {
        (0..len).map(|_| T::lit(self.normal())).collect()
    }

    /// Matrix of i.i.d. standard normal entries, filled row-major.
    pub fn gaussian_matrix<T: Real>(&mut self, rows: usize, cols: usize) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |_, _| T::lit(self.normal()))
    }

    /// Haar-random orthogonal matrix (QR of a Gaussian matrix with sign fix).
    pub fn orthogonal_matrix(&mut self, n: usize) -> Matrix<f64> {
        let g: Matrix<f64> = self.gaussian_matrix(n, n);
        orthonormalize_columns(&g)
    }

    /// `n × k` matrix with orthonormal columns spanning a uniformly random subspace.
    pub fn orthonormal_frame(&mut self, n: usize, k: usize) -> Matrix<f64> {
        let g: Matrix<f64> = self.gaussian_matrix(n, k);
        orthonormalize_columns(&g)
    }
}

/// Modified Gram-Schmidt with re-orthogonalization, keeping column signs.
pub(crate) fn orthonormalize_columns(a: &Matrix<f64>) -> Matrix<f64> {
    let mut cols = a.columns();
    for j in 0..cols.len() {
        for _ in 0..2 {
            for i in 0..j {
                let proj = crate::linalg::dot(&cols[j], &cols[i]);
                let (head, tail) = cols.split_at_mut(j);
                for (x, &q) in tail[0].iter_mut().zip(&head[i]) {
                    *x -= proj * q;
                }
            }
        }
        let nrm = crate::linalg::norm(&cols[j]);
        cols[j].iter_mut().for_each(|x| *x /= nrm);
    }
    Matrix::from_columns(&cols).expect("gram-schmidt output is finite for full-rank gaussian input")
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a: Matrix<f64> = RngStream::new(0).gaussian_matrix(2, 2);
        let b: Matrix<f64> = RngStream::new(0).gaussian_matrix(2, 2);
        let c: Matrix<f64> = RngStream::new(1).gaussian_matrix(2, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn moments() {
        let x: Matrix<f64> = RngStream::new(0).gaussian_matrix(10_000, 1);
        let n = 10_000.0;
        let mean = x.as_slice().iter().sum::<f64>() / n;
        let var = x.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn derived_streams_differ_and_repeat() {
        let root = RngStream::new(42);
        assert_eq!(root.derive(3).normal(), root.derive(3).normal());
        assert_ne!(root.derive(3).normal(), root.derive(4).normal());
    }

    #[test]
    fn orthogonal_frames() {
        let mut rng = RngStream::new(9);
        assert!(rng.orthogonal_matrix(7).orthonormality_defect() < 1e-12);
        assert!(rng.orthonormal_frame(10, 3).orthonormality_defect() < 1e-12);
    }
}
