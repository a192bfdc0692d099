//! One-sided (Hestenes) Jacobi SVD.
//!
//! Column pairs of a working copy are rotated until mutually orthogonal; the
//! column norms are then the singular values and the accumulated rotations the
//! right singular vectors. The method is slow for large matrices but accurate to
//! high relative precision, which the finite-difference gradient checks rely on.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, Matrix};
use crate::scalar::Real;

const MAX_SWEEPS: usize = 80;

/// Thin decomposition `a = u · diag(s) · vᵀ` with `p = min(rows, cols)` columns in
/// `u` and `v`.
#[derive(Debug, Clone)]
pub struct SvdResult<T> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Real> SvdResult<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        let (m, n) = (self.u.rows(), self.v.rows());
        Matrix::from_fn(m, n, |i, j| {
            (0..self.s.len()).fold(T::zero(), |acc, k| acc + self.u[(i, k)] * self.s[k] * self.v[(j, k)])
        })
    }
}

pub fn svd<T: Real>(a: &Matrix<T>) -> Result<SvdResult<T>> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::contract(format!("svd of empty {m}x{n} matrix")));
    }
    if m >= n {
        jacobi_tall(a.columns(), m, n)
    } else {
        let t = jacobi_tall(a.transpose().columns(), n, m)?;
        Ok(SvdResult { u: t.v, s: t.s, v: t.u })
    }
}

/// Singular values only, descending.
pub fn singular_values<T: Real>(a: &Matrix<T>) -> Result<Vec<T>> {
    Ok(svd(a)?.s)
}

fn jacobi_tall<T: Real>(mut cols: Vec<Vec<T>>, m: usize, n: usize) -> Result<SvdResult<T>> {
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let tol = T::epsilon() * T::lit(m as f64).sqrt();
    let tiny = T::min_positive_value().sqrt();

    let mut converged = n == 1;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..n - 1 {
            for j in i + 1..n {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                if alpha <= tiny || beta <= tiny {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure { op: "svd", rows: m, cols: n });
    }

    let mut order: Vec<(T, usize)> = cols.iter().enumerate().map(|(j, c)| (dot(c, c).sqrt(), j)).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite norms").then(a.1.cmp(&b.1)));
    let s_max = order[0].0;
    let cutoff = s_max * T::epsilon();

    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for &(sigma, j) in &order {
        s.push(sigma);
        v_cols.push(v[j].clone());
        if sigma > cutoff && sigma > T::zero() {
            u_cols.push(cols[j].iter().map(|&x| x / sigma).collect());
        } else {
            pending.push(u_cols.len());
            u_cols.push(Vec::new());
        }
    }
    complete_basis(&mut u_cols, &pending, m);

    Ok(SvdResult {
        u: Matrix::from_columns(&u_cols)?,
        s,
        v: Matrix::from_columns(&v_cols)?,
    })
}

fn rotate<T: Real>(cols: &mut [Vec<T>], i: usize, j: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(j);
    for (x, y) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the `pending` slots with unit vectors orthogonal to every other column,
/// using Gram-Schmidt against the standard basis.
fn complete_basis<T: Real>(cols: &mut [Vec<T>], pending: &[usize], m: usize) {
    let mut candidate = 0;
    for &slot in pending {
        while candidate < m {
            let mut e: Vec<T> = (0..m).map(|i| if i == candidate { T::one() } else { T::zero() }).collect();
            candidate += 1;
            for _ in 0..2 {
                for (k, col) in cols.iter().enumerate() {
                    if k == slot || col.is_empty() {
                        continue;
                    }
                    let proj = dot(&e, col);
                    for (x, &c) in e.iter_mut().zip(col) {
                        *x -= proj * c;
                    }
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm > T::lit(1e-3) {
                cols[slot] = e.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}
