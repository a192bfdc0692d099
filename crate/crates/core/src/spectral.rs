//! Augmentation-graph view of the objective.
//!
//! For `N` datapoints with `k` views each, the normalized augmentation graph `G`
//! is block diagonal with `k × k` blocks of `1/k` (views grouped by datapoint).
//! For an embedding `Z ∈ R^{Nk×d}`, `GZ` repeats every centroid `k` times, so
//! `−‖GZ‖_* = −√k ‖C‖_*`. The optimum over the Frobenius sphere `‖Z‖_F² = Nk`
//! aligns the left singular vectors of `Z` with the top eigenvectors of `G` and
//! makes its singular values proportional to the matching eigenvalues.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{norm, nuclear_norm, svd, symmetric_eig, Matrix};
use crate::objective::ManifoldBatch;
use crate::rng::RngStream;
use crate::scalar::Real;

/// Tolerance by which a trial may beat the constructed optimum before it counts as
/// a violation.
pub const OPTIMALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct AugmentationGraph<T> {
    pub n: usize,
    pub k: usize,
    pub g: Matrix<T>,
}

impl<T: Real> AugmentationGraph<T> {
    pub fn size(&self) -> usize {
        self.n * self.k
    }
}

/// Which constraint an embedding satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingConstraint {
    /// Every row on the unit sphere (hence `‖Z‖_F² = Nk`).
    UnitRows,
    /// Only `‖Z‖_F² = Nk`; rows may have any length.
    Frobenius,
}

#[derive(Debug, Clone)]
pub struct EmbeddingMatrix<T> {
    pub z: Matrix<T>,
    pub constraint: EmbeddingConstraint,
}

impl<T: Real> EmbeddingMatrix<T> {
    /// Validates unit-norm rows to `1e-9`.
    pub fn unit_rows(z: Matrix<T>) -> Result<Self> {
        for i in 0..z.rows() {
            let n = norm(z.row(i));
            if (n - T::one()).abs() > T::lit(1e-9) {
                return Err(Error::contract(format!("embedding row {i} has norm {n}")));
            }
        }
        Ok(Self { z, constraint: EmbeddingConstraint::UnitRows })
    }

    /// Validates `‖Z‖_F² = rows` to `1e-9` relative.
    pub fn frobenius(z: Matrix<T>) -> Result<Self> {
        let target = T::lit(z.rows() as f64);
        let f2 = z.frobenius_norm().powi(2);
        if (f2 - target).abs() > T::lit(1e-9) * target {
            return Err(Error::contract(format!("embedding has ‖Z‖_F² = {f2}, expected {target}")));
        }
        Ok(Self { z, constraint: EmbeddingConstraint::Frobenius })
    }

    /// Rows of a normalized batch in view-grouped order.
    pub fn from_batch(batch: &ManifoldBatch<T>) -> Result<Self> {
        Self::unit_rows(batch.view_rows())
    }
}

pub fn build_graph<T: Real>(n: usize, k: usize) -> Result<AugmentationGraph<T>> {
    if n == 0 || k == 0 {
        return Err(Error::contract(format!("graph needs n, k ≥ 1; got ({n}, {k})")));
    }
    let w = T::one() / T::lit(k as f64);
    let g = Matrix::from_fn(n * k, n * k, |i, j| if i / k == j / k { w } else { T::zero() });
    Ok(AugmentationGraph { n, k, g })
}

/// `−‖G Z‖_*`.
pub fn graph_loss<T: Real>(graph: &AugmentationGraph<T>, z: &EmbeddingMatrix<T>) -> Result<T> {
    graph_loss_raw(graph, &z.z)
}

fn graph_loss_raw<T: Real>(graph: &AugmentationGraph<T>, z: &Matrix<T>) -> Result<T> {
    if z.rows() != graph.size() {
        return Err(Error::contract(format!("embedding has {} rows, graph has {}", z.rows(), graph.size())));
    }
    Ok(-nuclear_norm(&graph.g.matmul(z)?)?)
}

/// `(‖A B‖_*, ‖A [B, 0]‖_*)` for square `A` (`N × N`) and `B` (`N × d`, `d < N`).
pub fn zero_pad_nuclear_invariance<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<(T, T)> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n || b.cols() >= n {
        return Err(Error::contract(format!(
            "zero padding needs A N×N and B N×d with d < N; got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let padded = b.hstack(&Matrix::zeros(n, n - b.cols()))?;
    Ok((nuclear_norm(&a.matmul(b)?)?, nuclear_norm(&a.matmul(&padded)?)?))
}

/// `Z* = Q_d · diag(σ) · Rᵀ` with `Q_d` the top-`d` eigenvectors of `G`, `σ ∝ λ_{1..d}(G)`
/// scaled to `Σσ² = Nk`, and `R` a `d × d` orthogonal matrix (identity when `None`).
///
/// Only the Frobenius constraint is guaranteed; rows of `Z*` are generally not unit.
pub fn optimal_embedding<T: Real>(
    graph: &AugmentationGraph<T>,
    d: usize,
    rotation: Option<&Matrix<T>>,
) -> Result<EmbeddingMatrix<T>> {
    if d == 0 || d > graph.n {
        return Err(Error::contract(format!("optimal embedding needs 1 ≤ d ≤ n = {}; got d = {d}", graph.n)));
    }
    let (evals, q) = symmetric_eig(&graph.g)?;
    let top: Vec<T> = evals[..d].to_vec();
    let scale = (T::lit(graph.size() as f64) / top.iter().map(|&l| l * l).sum::<T>()).sqrt();
    let sigma: Vec<T> = top.iter().map(|&l| l * scale).collect();
    let qs = Matrix::from_fn(graph.size(), d, |i, j| q[(i, j)] * sigma[j]);
    let z = match rotation {
        Some(r) => {
            if r.shape() != (d, d) || r.orthonormality_defect() > T::lit(1e-9) {
                return Err(Error::contract("rotation must be a d × d orthogonal matrix"));
            }
            qs.matmul_t(r)?
        }
        None => qs,
    };
    Ok(EmbeddingMatrix { z, constraint: EmbeddingConstraint::Frobenius })
}

/// Losses along the path `Z → Q_d S Vᵀ → Q_d σ* Vᵀ`: first the left singular vectors
/// are replaced by the graph's top eigenvectors, then the spectrum by the optimal one.
/// Each step can only lower (or keep) the loss.
pub fn alignment_path<T: Real>(graph: &AugmentationGraph<T>, z: &Matrix<T>) -> Result<Vec<T>> {
    let d = z.cols();
    if d > graph.n {
        return Err(Error::contract("alignment path needs d ≤ n"));
    }
    let start = graph_loss_raw(graph, z)?;
    let decomposition = svd(z)?;
    let (_, q) = symmetric_eig(&graph.g)?;
    let aligned = Matrix::from_fn(z.rows(), d, |i, j| q[(i, j)] * decomposition.s[j]).matmul_t(&decomposition.v)?;
    let step1 = graph_loss_raw(graph, &aligned)?;
    let star = optimal_embedding(graph, d, None)?;
    let reoriented = star.z.matmul_t(&decomposition.v)?;
    let step2 = graph_loss_raw(graph, &reoriented)?;
    Ok(vec![start, step1, step2])
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalityReport {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    pub trials: usize,
    pub optimum_loss: f64,
    /// `graph_loss(Z*)` closed form `−√(Nk·d)` when every top eigenvalue is 1.
    pub predicted_optimum: f64,
    /// Frobenius-sphere trials: `loss(trial) − loss(Z*)`.
    pub frobenius_margins: Vec<f64>,
    pub frobenius_violations: usize,
    /// Unit-row trials: `loss(trial) − loss(Z*)`.
    pub unit_row_margins: Vec<f64>,
    pub unit_row_violations: usize,
    /// Smallest gap between a unit-row trial and the optimum.
    pub best_unit_row_gap: f64,
}

impl OptimalityReport {
    pub fn violations(&self) -> usize {
        self.frobenius_violations + self.unit_row_violations
    }
}

/// Samples `trials` random embeddings from the Frobenius sphere and `trials` with
/// unit rows, recording how far each lands above the constructed optimum.
pub fn verify_optimality(
    graph: &AugmentationGraph<f64>,
    d: usize,
    trials: usize,
    rng: &RngStream,
) -> Result<OptimalityReport> {
    if trials == 0 {
        return Err(Error::contract("verify_optimality needs at least one trial"));
    }
    let star = optimal_embedding(graph, d, None)?;
    let optimum = graph_loss(graph, &star)?;
    let rows = graph.size();

    let margins: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let mut trial_rng = rng.derive(t as u64);
            let g: Matrix<f64> = trial_rng.gaussian_matrix(rows, d);
            let frob = g.scale((rows as f64).sqrt() / g.frobenius_norm());
            let unit = Matrix::from_fn(rows, d, |i, j| g[(i, j)] / norm(g.row(i)));
            Ok((graph_loss_raw(graph, &frob)? - optimum, graph_loss_raw(graph, &unit)? - optimum))
        })
        .collect::<Result<Vec<_>>>()?;

    let frobenius_margins: Vec<f64> = margins.iter().map(|m| m.0).collect();
    let unit_row_margins: Vec<f64> = margins.iter().map(|m| m.1).collect();
    let count = |v: &[f64]| v.iter().filter(|&&m| m < -OPTIMALITY_TOL).count();
    Ok(OptimalityReport {
        n: graph.n,
        k: graph.k,
        d,
        seed: rng.seed(),
        trials,
        optimum_loss: optimum,
        predicted_optimum: -((rows * d) as f64).sqrt(),
        frobenius_violations: count(&frobenius_margins),
        unit_row_violations: count(&unit_row_margins),
        best_unit_row_gap: unit_row_margins.iter().copied().fold(f64::INFINITY, f64::min),
        frobenius_margins,
        unit_row_margins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_examples() {
        let g = build_graph::<f64>(1, 2).unwrap();
        assert_eq!(g.g, Matrix::from_fn(2, 2, |_, _| 0.5));
        let g = build_graph::<f64>(3, 1).unwrap();
        assert_eq!(g.g, Matrix::identity(3));
        let g = build_graph::<f64>(4, 3).unwrap();
        let (l, _) = symmetric_eig(&g.g).unwrap();
        for (i, v) in l.iter().enumerate() {
            let expected = if i < 4 { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-10);
        }
        for i in 0..12 {
            assert_eq!(g.g.row(i).iter().filter(|&&x| x != 0.0).count(), 3);
            assert!((g.g.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!(g.g.is_symmetric(0.0));
    }

    #[test]
    fn identity_graph_loss_is_negative_nuclear_norm() {
        let mut rng = RngStream::new(1);
        let raw: Matrix<f64> = rng.gaussian_matrix(4, 3);
        let z = Matrix::from_fn(4, 3, |i, j| raw[(i, j)] / norm(raw.row(i)));
        let emb = EmbeddingMatrix::unit_rows(z.clone()).unwrap();
        let g = build_graph::<f64>(4, 1).unwrap();
        assert!((graph_loss(&g, &emb).unwrap() + nuclear_norm(&z).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ideal_embedding_reaches_minus_n() {
        // identical rows per group, orthonormal group directions
        let (n, k, d) = (3, 2, 4);
        let z = Matrix::from_fn(n * k, d, |i, j| if i / k == j { 1.0 } else { 0.0 });
        let g = build_graph::<f64>(n, k).unwrap();
        let loss = graph_loss(&g, &EmbeddingMatrix::unit_rows(z).unwrap()).unwrap();
        // ‖GZ‖_* = √k · ‖C‖_* = √k · n
        assert!((loss + (k as f64).sqrt() * n as f64).abs() < 1e-12);
    }

    #[test]
    fn zero_padding() {
        let mut rng = RngStream::new(2);
        let b: Matrix<f64> = rng.gaussian_matrix(4, 2);
        let (x, y) = zero_pad_nuclear_invariance(&Matrix::identity(4), &b).unwrap();
        let nb = nuclear_norm(&b).unwrap();
        assert!((x - nb).abs() < 1e-12 && (y - nb).abs() < 1e-12);
        let (x, y) = zero_pad_nuclear_invariance(&Matrix::identity(4), &Matrix::zeros(4, 2)).unwrap();
        assert_eq!((x, y), (0.0, 0.0));
        assert!(zero_pad_nuclear_invariance(&Matrix::identity(4), &Matrix::<f64>::zeros(4, 4)).is_err());
        assert!(zero_pad_nuclear_invariance(&Matrix::<f64>::zeros(4, 3), &b).is_err());
    }

    #[test]
    fn optimal_embedding_values() {
        let (n, k) = (4, 3);
        let g = build_graph::<f64>(n, k).unwrap();
        let nk = (n * k) as f64;
        let full = optimal_embedding(&g, n, None).unwrap();
        assert!((graph_loss(&g, &full).unwrap() + (nk * n as f64).sqrt()).abs() < 1e-9);
        let one = optimal_embedding(&g, 1, None).unwrap();
        assert!((graph_loss(&g, &one).unwrap() + nk.sqrt()).abs() < 1e-9);
        assert!(EmbeddingMatrix::frobenius(one.z).is_ok());

        let r = RngStream::new(3).orthogonal_matrix(2);
        let a = graph_loss(&g, &optimal_embedding(&g, 2, None).unwrap()).unwrap();
        let b = graph_loss(&g, &optimal_embedding(&g, 2, Some(&r)).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert!(optimal_embedding(&g, n + 1, None).is_err());
    }

    #[test]
    fn optimality_small() {
        let g = build_graph::<f64>(5, 2).unwrap();
        let report = verify_optimality(&g, 3, 200, &RngStream::new(4)).unwrap();
        assert_eq!(report.violations(), 0);
        assert!((report.optimum_loss - report.predicted_optimum).abs() < 1e-9);
        assert!(report.best_unit_row_gap >= -OPTIMALITY_TOL);
    }

    #[test]
    fn alignment_path_descends() {
        let g = build_graph::<f64>(6, 2).unwrap();
        let mut rng = RngStream::new(6);
        let raw: Matrix<f64> = rng.gaussian_matrix(12, 3);
        let z = raw.scale(12f64.sqrt() / raw.frobenius_norm());
        let path = alignment_path(&g, &z).unwrap();
        assert!(path.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{path:?}");
    }
}
