//! The manifold-capacity objective and its gradient.
//!
//! A batch holds `B` manifolds, each sampled by `K` views of dimension `d`. Views are
//! projected onto the unit sphere, averaged into centroids, and the loss is
//!
//! ```text
//! L = −‖C‖_* + λ · (1/B) Σ_b ‖Z_b‖_*
//! ```
//!
//! where `C` is the `d × B` centroid matrix and `Z_b` the views of manifold `b`.
//! With `λ = 0` only the centroid term remains; it still compresses manifolds
//! because a centroid of unit vectors is long only when its views agree.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::matrix::{read_f64s, read_u64, write_f64s};
use crate::linalg::{dot, norm, nuclear_norm, nuclear_norm_subgradient, Matrix};
use crate::scalar::Real;

/// Views below this norm cannot be projected onto the sphere.
pub const MIN_VIEW_NORM: f64 = 1e-12;

/// `B × K × d` array of view features, stored manifold-major then view-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldBatch<T> {
    b: usize,
    k: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Real> ManifoldBatch<T> {
    pub fn new(b: usize, k: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if b == 0 || k == 0 || d < 2 {
            return Err(Error::contract(format!("batch needs b ≥ 1, k ≥ 1, d ≥ 2; got ({b}, {k}, {d})")));
        }
        if data.len() != b * k * d {
            return Err(Error::contract(format!("batch data length {} != {b}·{k}·{d}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("batch contains non-finite values"));
        }
        Ok(Self { b, k, d, data })
    }

    pub fn zeros(b: usize, k: usize, d: usize) -> Self {
        Self { b, k, d, data: vec![T::zero(); b * k * d] }
    }

    /// Stacks per-manifold `K × d` view matrices.
    pub fn from_manifolds(manifolds: &[Matrix<T>]) -> Result<Self> {
        let first = manifolds.first().ok_or_else(|| Error::contract("no manifolds"))?;
        let (k, d) = first.shape();
        if manifolds.iter().any(|m| m.shape() != (k, d)) {
            return Err(Error::contract("manifold view matrices differ in shape"));
        }
        let data = manifolds.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
        Self::new(manifolds.len(), k, d, data)
    }

    /// Rows of `views` grouped as consecutive runs of `k` views per manifold.
    pub fn from_view_rows(views: &Matrix<T>, k: usize) -> Result<Self> {
        if k == 0 || !views.rows().is_multiple_of(k) {
            return Err(Error::contract(format!("{} rows do not split into groups of {k}", views.rows())));
        }
        Self::new(views.rows() / k, k, views.cols(), views.as_slice().to_vec())
    }

    #[inline]
    pub fn b(&self) -> usize {
        self.b
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn view(&self, b: usize, k: usize) -> &[T] {
        let start = (b * self.k + k) * self.d;
        &self.data[start..start + self.d]
    }

    #[inline]
    pub fn view_mut(&mut self, b: usize, k: usize) -> &mut [T] {
        let start = (b * self.k + k) * self.d;
        &mut self.data[start..start + self.d]
    }

    /// `K × d` matrix of the views of manifold `b`.
    pub fn manifold(&self, b: usize) -> Matrix<T> {
        let start = b * self.k * self.d;
        Matrix::new(self.k, self.d, self.data[start..start + self.k * self.d].to_vec())
            .expect("slice of a validated batch")
    }

    /// All views as rows of a `(B·K) × d` matrix.
    pub fn view_rows(&self) -> Matrix<T> {
        Matrix::new(self.b * self.k, self.d, self.data.clone()).expect("validated batch")
    }

    pub fn is_normalized(&self, tol: T) -> bool {
        self.data.chunks(self.d).all(|v| (norm(v) - T::one()).abs() <= tol)
    }

    /// Binary layout: `B`, `K`, `d` as little-endian u64, then little-endian f64 values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for dim in [self.b, self.k, self.d] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        write_f64s(&mut w, &self.data)
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let b = read_u64(&mut r)? as usize;
        let k = read_u64(&mut r)? as usize;
        let d = read_u64(&mut r)? as usize;
        let n = b
            .checked_mul(k)
            .and_then(|x| x.checked_mul(d))
            .ok_or_else(|| Error::Parse("batch dimension overflow".into()))?;
        let data = read_f64s(&mut r, n)?;
        Self::new(b, k, d, data)
    }
}

/// `d × B` matrix whose column `b` is the mean of manifold `b`'s views.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidMatrix<T> {
    pub c: Matrix<T>,
}

impl<T: Real> CentroidMatrix<T> {
    pub fn column_norms(&self) -> Vec<T> {
        self.c.columns().iter().map(|c| norm(c)).collect()
    }

    /// Mean cosine similarity over distinct centroid pairs; zero-length centroids
    /// are skipped.
    pub fn mean_pairwise_cosine(&self) -> Option<T> {
        mean_pairwise_cosine(&self.c.columns())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub total: T,
    /// `−‖C‖_*`
    pub centroid_term: T,
    /// `(1/B) Σ_b ‖Z_b‖_*`
    pub compression_term: T,
    pub lambda: T,
}

/// Projects every view onto the unit sphere.
pub fn sphere_normalize<T: Real>(raw: &ManifoldBatch<T>) -> Result<ManifoldBatch<T>> {
    let mut out = raw.clone();
    for b in 0..raw.b {
        for k in 0..raw.k {
            let v = out.view_mut(b, k);
            let n = norm(v);
            if n <= T::lit(MIN_VIEW_NORM) {
                return Err(Error::degenerate(format!("view (b={b}, k={k}) has norm {n:e}")));
            }
            v.iter_mut().for_each(|x| *x /= n);
        }
    }
    Ok(out)
}

pub fn centroids<T: Real>(batch: &ManifoldBatch<T>) -> CentroidMatrix<T> {
    let inv_k = T::one() / T::lit(batch.k as f64);
    let mut c = Matrix::zeros(batch.d, batch.b);
    for b in 0..batch.b {
        for k in 0..batch.k {
            for (i, &x) in batch.view(b, k).iter().enumerate() {
                c[(i, b)] += x;
            }
        }
        for i in 0..batch.d {
            c[(i, b)] *= inv_k;
        }
    }
    CentroidMatrix { c }
}

/// `‖c_b‖²` expressed through pairwise view similarities:
/// `1/K + (2/K²) Σ_{k>l} z_kᵀ z_l`. Exact for unit-norm views.
pub fn centroid_norm_sq_from_similarities<T: Real>(batch: &ManifoldBatch<T>, b: usize) -> T {
    let kf = T::lit(batch.k as f64);
    let mut pair_sum = T::zero();
    for k in 0..batch.k {
        for l in 0..k {
            pair_sum += dot(batch.view(b, k), batch.view(b, l));
        }
    }
    T::one() / kf + T::lit(2.0) / (kf * kf) * pair_sum
}

fn check_normalized<T: Real>(batch: &ManifoldBatch<T>, lambda: T) -> Result<()> {
    if !(lambda >= T::zero()) {
        return Err(Error::contract(format!("lambda must be ≥ 0, got {lambda}")));
    }
    if !batch.is_normalized(T::lit(1e-8)) {
        return Err(Error::contract("loss expects sphere-normalized views"));
    }
    Ok(())
}

/// Full loss breakdown on a normalized batch. Both terms are always evaluated.
pub fn mmcr_loss<T: Real>(batch: &ManifoldBatch<T>, lambda: T) -> Result<LossBreakdown<T>> {
    check_normalized(batch, lambda)?;
    let centroid_term = -nuclear_norm(&centroids(batch).c)?;
    let compression_term = compression_term(batch)?;
    Ok(LossBreakdown { total: centroid_term + lambda * compression_term, centroid_term, compression_term, lambda })
}

/// Scalar loss on a normalized batch, skipping the per-manifold decompositions
/// when `lambda` is zero. This is the evaluation path whose cost is independent
/// of the number of views.
pub fn mmcr_objective<T: Real>(batch: &ManifoldBatch<T>, lambda: T) -> Result<T> {
    check_normalized(batch, lambda)?;
    let centroid_term = -nuclear_norm(&centroids(batch).c)?;
    if lambda == T::zero() {
        return Ok(centroid_term);
    }
    Ok(centroid_term + lambda * compression_term(batch)?)
}

fn compression_term<T: Real>(batch: &ManifoldBatch<T>) -> Result<T> {
    let mut total = T::zero();
    for b in 0..batch.b {
        total += nuclear_norm(&batch.manifold(b))?;
    }
    Ok(total / T::lit(batch.b as f64))
}

/// Loss of `sphere_normalize(raw)` and its gradient with respect to the raw,
/// pre-normalization features.
pub fn mmcr_loss_and_grad<T: Real>(raw: &ManifoldBatch<T>, lambda: T) -> Result<(LossBreakdown<T>, ManifoldBatch<T>)> {
    let z = sphere_normalize(raw)?;
    let loss = mmcr_loss(&z, lambda)?;
    let (b_count, k_count, d) = (raw.b, raw.k, raw.d);

    // dL/dz
    let mut grad = ManifoldBatch::zeros(b_count, k_count, d);
    let g_c = nuclear_norm_subgradient(&centroids(&z).c)?;
    let inv_k = T::one() / T::lit(k_count as f64);
    for b in 0..b_count {
        for k in 0..k_count {
            for (i, g) in grad.view_mut(b, k).iter_mut().enumerate() {
                *g = -g_c[(i, b)] * inv_k;
            }
        }
    }
    if lambda != T::zero() {
        let weight = lambda / T::lit(b_count as f64);
        for b in 0..b_count {
            let g_z = nuclear_norm_subgradient(&z.manifold(b))?;
            for k in 0..k_count {
                for (g, &gz) in grad.view_mut(b, k).iter_mut().zip(g_z.row(k)) {
                    *g += weight * gz;
                }
            }
        }
    }

    // chain through r ↦ r/‖r‖: (I − z zᵀ) g / ‖r‖
    for b in 0..b_count {
        for k in 0..k_count {
            let r_norm = norm(raw.view(b, k));
            let zv = z.view(b, k);
            let g = grad.view_mut(b, k);
            let radial = dot(zv, g);
            for (gi, &zi) in g.iter_mut().zip(zv) {
                *gi = (*gi - radial * zi) / r_norm;
            }
        }
    }
    Ok((loss, grad))
}

pub fn mmcr_loss_grad<T: Real>(raw: &ManifoldBatch<T>, lambda: T) -> Result<ManifoldBatch<T>> {
    mmcr_loss_and_grad(raw, lambda).map(|(_, g)| g)
}

/// Geometry of a normalized batch tracked during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchGeometry {
    pub centroid_norm_mean: f64,
    /// Mean cosine over centroid pairs.
    pub centroid_similarity_mean: f64,
    /// Mean cosine over view pairs within a manifold; `None` when `K = 1`.
    pub within_manifold_similarity: Option<f64>,
}

pub fn batch_geometry<T: Real>(batch: &ManifoldBatch<T>) -> BatchGeometry {
    let c = centroids(batch);
    let norms = c.column_norms();
    let centroid_norm_mean = norms.iter().map(|n| n.as_f64()).sum::<f64>() / norms.len() as f64;
    let centroid_similarity_mean = c.mean_pairwise_cosine().map_or(f64::NAN, |v| v.as_f64());
    let within_manifold_similarity = (batch.k > 1).then(|| {
        let mut acc = 0.0;
        let mut n = 0usize;
        for b in 0..batch.b {
            let views: Vec<Vec<T>> = (0..batch.k).map(|k| batch.view(b, k).to_vec()).collect();
            if let Some(m) = mean_pairwise_cosine(&views) {
                acc += m.as_f64();
                n += 1;
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            acc / n as f64
        }
    });
    BatchGeometry { centroid_norm_mean, centroid_similarity_mean, within_manifold_similarity }
}

pub(crate) fn mean_pairwise_cosine<T: Real>(vectors: &[Vec<T>]) -> Option<T> {
    let norms: Vec<T> = vectors.iter().map(|v| norm(v)).collect();
    let mut acc = T::zero();
    let mut n = 0usize;
    for i in 0..vectors.len() {
        for j in 0..i {
            if norms[i] > T::zero() && norms[j] > T::zero() {
                acc += dot(&vectors[i], &vectors[j]) / (norms[i] * norms[j]);
                n += 1;
            }
        }
    }
    (n > 0).then(|| acc / T::lit(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_batch(seed: u64, b: usize, k: usize, d: usize) -> ManifoldBatch<f64> {
        let mut rng = RngStream::new(seed);
        ManifoldBatch::new(b, k, d, rng.gaussian_vec(b * k * d)).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let raw = ManifoldBatch::<f64>::new(1, 1, 2, vec![3.0, 4.0]).unwrap();
        let z = sphere_normalize(&raw).unwrap();
        assert!((z.view(0, 0)[0] - 0.6).abs() < 1e-15 && (z.view(0, 0)[1] - 0.8).abs() < 1e-15);
        let again = sphere_normalize(&z).unwrap();
        assert!(again.as_slice().iter().zip(z.as_slice()).all(|(a, b)| (a - b).abs() <= 1e-15));

        let z = sphere_normalize(&random_batch(1, 5, 3, 7)).unwrap();
        assert!(z.is_normalized(1e-12));
    }

    #[test]
    fn degenerate_view_is_named() {
        let mut raw = random_batch(2, 3, 2, 4);
        raw.view_mut(2, 1).iter_mut().for_each(|x| *x = 0.0);
        match sphere_normalize(&raw) {
            Err(Error::Degenerate(msg)) => assert!(msg.contains("b=2, k=1"), "{msg}"),
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }

    #[test]
    fn centroid_examples() {
        let u = [0.0, 1.0, 0.0];
        let same = ManifoldBatch::new(1, 4, 3, u.repeat(4)).unwrap();
        let c = centroids(&same);
        assert_eq!(c.c.column(0), u.to_vec());
        let anti = ManifoldBatch::new(1, 2, 3, vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        assert!(centroids(&anti).c.max_abs() == 0.0);

        let z = sphere_normalize(&random_batch(3, 4, 6, 5)).unwrap();
        let c = centroids(&z);
        for (b, n) in c.column_norms().iter().enumerate() {
            assert!((n * n - centroid_norm_sq_from_similarities(&z, b)).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        // K = 1, orthonormal columns
        let d = 4;
        let data: Vec<f64> = (0..d).flat_map(|b| (0..d).map(move |i| if i == b { 1.0 } else { 0.0 })).collect();
        let batch = ManifoldBatch::new(d, 1, d, data).unwrap();
        let l = mmcr_loss(&batch, 0.0).unwrap();
        assert!((l.centroid_term + d as f64).abs() < 1e-14);

        // single manifold of two views with inner product rho
        let rho: f64 = 0.3;
        let z = ManifoldBatch::new(1, 2, 2, vec![1.0, 0.0, rho, (1.0 - rho * rho).sqrt()]).unwrap();
        let l = mmcr_loss(&z, 1.0).unwrap();
        let expected = (1.0 + rho).sqrt() + (1.0 - rho).sqrt();
        assert!((l.compression_term - expected).abs() < 1e-14);
        assert!((l.total - (l.centroid_term + l.compression_term)).abs() < 1e-14);

        assert!(mmcr_loss(&random_batch(1, 2, 2, 3), 0.0).is_err());
        assert!(mmcr_loss(&z, -1.0).is_err());
    }

    #[test]
    fn objective_matches_breakdown() {
        let z = sphere_normalize(&random_batch(4, 5, 3, 6)).unwrap();
        for lambda in [0.0, 0.2] {
            let l = mmcr_loss(&z, lambda).unwrap();
            assert!((mmcr_objective(&z, lambda).unwrap() - l.total).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_is_tangent_for_identical_views() {
        let v = [0.3, -1.2, 0.5, 2.0];
        let mut data = v.repeat(3);
        data.extend([1.0, 0.0, 0.0, 0.0].repeat(3));
        let raw = ManifoldBatch::<f64>::new(2, 3, 4, data).unwrap();
        let g = mmcr_loss_grad(&raw, 0.0).unwrap();
        for b in 0..2 {
            for k in 0..3 {
                assert!(dot(g.view(b, k), raw.view(b, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let raw = random_batch(8, 6, 4, 16);
        for lambda in [0.0, 0.05] {
            let g = mmcr_loss_grad(&raw, lambda).unwrap();
            let f = |x: &ManifoldBatch<f64>| mmcr_loss(&sphere_normalize(x).unwrap(), lambda).unwrap().total;
            let h = 1e-6;
            for idx in (0..raw.as_slice().len()).step_by(7) {
                let mut p = raw.clone();
                p.data[idx] += h;
                let mut m = raw.clone();
                m.data[idx] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                let an = g.data[idx];
                assert!((fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-2), "idx {idx}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn binary_layout() {
        let batch = random_batch(5, 2, 3, 4);
        let mut buf = Vec::new();
        batch.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 24 * 8);
        assert_eq!(&buf[8..16], &3u64.to_le_bytes());
        assert_eq!(ManifoldBatch::<f64>::read_binary(&buf[..]).unwrap(), batch);
    }
}
