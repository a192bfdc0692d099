//! Cyclic two-sided Jacobi eigensolver for real symmetric matrices.

use crate::error::{Error, Result};
use crate::linalg::matrix::Matrix;
use crate::scalar::Real;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition `a = q · diag(λ) · qᵀ`, eigenvalues descending, eigenvectors
/// as orthonormal columns of `q`.
///
/// Rejects inputs whose off-diagonal asymmetry exceeds `1e-9` relative to the
/// largest entry.
pub fn symmetric_eig<T: Real>(a: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let n = a.rows();
    if a.cols() != n || n == 0 {
        return Err(Error::contract(format!("symmetric_eig needs a square matrix, got {:?}", a.shape())));
    }
    let scale = a.max_abs().max(T::one());
    if !a.is_symmetric(T::lit(1e-9) * scale) {
        return Err(Error::contract("symmetric_eig input is not symmetric to 1e-9"));
    }
    let mut w = Matrix::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)]) / T::lit(2.0));
    let mut q = Matrix::<T>::identity(n);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: T = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|ij| w[ij] * w[ij]).sum();
        let diag: T = (0..n).map(|i| w[(i, i)] * w[(i, i)]).sum();
        if off <= T::epsilon() * T::epsilon() * (diag + off) {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for r in p + 1..n {
                let apr = w[(p, r)];
                if apr == T::zero() {
                    continue;
                }
                let theta = (w[(r, r)] - w[(p, p)]) / (T::lit(2.0) * apr);
                let t = theta.signum() / (theta.abs() + (T::one() + theta * theta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (wkp, wkr) = (w[(k, p)], w[(k, r)]);
                    w[(k, p)] = c * wkp - s * wkr;
                    w[(k, r)] = s * wkp + c * wkr;
                }
                for k in 0..n {
                    let (wpk, wrk) = (w[(p, k)], w[(r, k)]);
                    w[(p, k)] = c * wpk - s * wrk;
                    w[(r, k)] = s * wpk + c * wrk;
                }
                for k in 0..n {
                    let (qkp, qkr) = (q[(k, p)], q[(k, r)]);
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NumericalFailure { op: "symmetric_eig", rows: n, cols: n });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(j, j)].partial_cmp(&w[(i, i)]).expect("finite eigenvalues").then(i.cmp(&j)));
    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| q[(i, order[j])]);
    Ok((values, vectors))
}
