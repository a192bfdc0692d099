use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, Matrix};
use crate::linalg::svd::svd;
use crate::scalar::Real;

/// Sum of singular values.
pub fn nuclear_norm<T: Real>(a: &Matrix<T>) -> Result<T> {
    Ok(svd(a)?.s.into_iter().sum())
}

/// Numerical-rank cutoff `1e-10 · max(rows, cols) · s_max` below which singular
/// directions are dropped from the subgradient.
pub fn rank_threshold<T: Real>(rows: usize, cols: usize, s_max: T) -> T {
    T::lit(1e-10) * T::lit(rows.max(cols) as f64) * s_max
}

/// `u · vᵀ` over the singular triplets above [`rank_threshold`].
///
/// This is the gradient of the nuclear norm wherever `a` has full rank and distinct
/// singular values. At repeated singular values the result depends on which
/// orthonormal basis the SVD returns, and is one valid subgradient.
pub fn nuclear_norm_subgradient<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let (m, n) = a.shape();
    let r = svd(a)?;
    let tau = rank_threshold(m, n, r.s.first().copied().unwrap_or_else(T::zero));
    let keep: Vec<usize> = (0..r.s.len()).filter(|&k| r.s[k] > tau).collect();
    Ok(Matrix::from_fn(m, n, |i, j| {
        keep.iter().fold(T::zero(), |acc, &k| acc + r.u[(i, k)] * r.v[(j, k)])
    }))
}

/// Closed-form singular values of the two-column matrix `[c1 c2]`, descending:
/// `σ± = (1/√2) · (‖c1‖² + ‖c2‖² ± sqrt((‖c1‖² − ‖c2‖²)² + 4 (c1·c2)²))^{1/2}`.
///
/// The smaller value is recovered from the Gram determinant (computed with the
/// Lagrange identity) so that it keeps full relative accuracy near collinearity.
pub fn two_column_singular_values<T: Real>(c1: &[T], c2: &[T]) -> Result<(T, T)> {
    if c1.len() != c2.len() {
        return Err(Error::contract(format!(
            "two_column_singular_values: lengths {} and {} differ",
            c1.len(),
            c2.len()
        )));
    }
    if c1.iter().chain(c2).any(|v| !v.is_finite()) {
        return Err(Error::contract("two_column_singular_values: non-finite input"));
    }
    let two = T::lit(2.0);
    let n1 = dot(c1, c1);
    let n2 = dot(c2, c2);
    let rho = dot(c1, c2);
    let disc = ((n1 - n2) * (n1 - n2) + T::lit(4.0) * rho * rho).sqrt();
    let big = (n1 + n2 + disc) / two;
    // Gram determinant n1·n2 − ρ² = ½ Σ_{i,j} (c1_i c2_j − c1_j c2_i)²
    let mut det = T::zero();
    for i in 0..c1.len() {
        for j in i + 1..c1.len() {
            let m = c1[i] * c2[j] - c1[j] * c2[i];
            det += m * m;
        }
    }
    let small = if big > T::zero() { det / big } else { T::zero() };
    Ok((big.sqrt(), small.max(T::zero()).sqrt()))
}
