//! Dense Cholesky factorization for small symmetric positive definite systems.

use crate::linalg::matrix::Matrix;
use crate::scalar::Real;

/// Lower-triangular `L` with `a = L·Lᵀ`, or `None` when a pivot is not
/// positive beyond `rel_tol · max diag`.
pub fn cholesky<T: Real>(a: &Matrix<T>, rel_tol: T) -> Option<Matrix<T>> {
    let n = a.rows();
    if a.cols() != n {
        return None;
    }
    let scale = (0..n).map(|i| a[(i, i)]).fold(T::zero(), T::max);
    let mut l = Matrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > rel_tol * scale) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `a·x = b` for symmetric positive definite `a`.
pub fn cholesky_solve<T: Real>(a: &Matrix<T>, b: &[T], rel_tol: T) -> Option<Vec<T>> {
    let l = cholesky(a, rel_tol)?;
    let n = b.len();
    if n != a.rows() {
        return None;
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn solves_random_spd_system() {
        let mut rng = RngStream::new(0);
        let g: Matrix<f64> = rng.gaussian_matrix(6, 6);
        let a = g.t_matmul(&g).unwrap().add(&Matrix::identity(6)).unwrap();
        let x_true = rng.gaussian_vec::<f64>(6);
        let b = a.matvec(&x_true).unwrap();
        let x = cholesky_solve(&a, &b, 1e-14).unwrap();
        assert!(x.iter().zip(&x_true).all(|(p, q)| (p - q).abs() < 1e-10));
    }

    #[test]
    fn rejects_singular_and_indefinite() {
        let singular = Matrix::<f64>::from_fn(2, 2, |_, _| 1.0);
        assert!(cholesky(&singular, 1e-12).is_none());
        let indefinite = Matrix::<f64>::from_diag(&[1.0, -1.0]);
        assert!(cholesky(&indefinite, 1e-12).is_none());
    }
}
