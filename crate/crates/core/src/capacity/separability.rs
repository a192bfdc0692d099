//! Brute-force capacity: random dichotomies of randomly oriented manifolds.
//!
//! A labelled point set `{(x_i, y_i)}` admits `w` with `y_i w·x_i > 0` for all `i`
//! exactly when the origin lies outside the convex hull of `{y_i x_i}` (Gordan's
//! alternative). The hull's minimum-norm point, found with Wolfe's algorithm,
//! decides which case holds and, when positive, is itself a separating `w`.

use serde::Serialize;

use crate::capacity::{manifold_frame, PointManifold};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, dot};
use crate::Matrix;
use crate::rng::RngStream;

/// Relative size below which the minimum-norm point counts as the origin.
const ORIGIN_TOL: f64 = 1e-9;
const OPTIMALITY_TOL: f64 = 1e-12;

/// Minimum-norm point of the convex hull of the rows of `points`.
pub fn min_norm_point(points: &Matrix) -> Result<Vec<f64>> {
    let (n, dim) = points.shape();
    if n == 0 {
        return Err(Error::contract("empty point set"));
    }
    let norms2: Vec<f64> = (0..n).map(|i| dot(points.row(i), points.row(i))).collect();
    let scale = norms2.iter().copied().fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let start = (0..n).min_by(|&a, &b| norms2[a].total_cmp(&norms2[b])).expect("non-empty");
    let mut corral = vec![start];
    let mut weights = vec![1.0];
    let mut x = points.row(start).to_vec();
    let max_major = 50 * n + 1000;

    for _ in 0..max_major {
        let xx = dot(&x, &x);
        if xx <= (ORIGIN_TOL * ORIGIN_TOL) * scale {
            return Ok(x);
        }
        let (best, j) = (0..n).map(|i| (dot(&x, points.row(i)), i)).min_by(|a, b| a.0.total_cmp(&b.0)).expect("non-empty");
        if xx - best <= OPTIMALITY_TOL * scale || corral.contains(&j) {
            return Ok(x);
        }
        corral.push(j);
        weights.push(0.0);
        loop {
            let Some(v) = affine_minimizer(points, &corral) else {
                // affinely dependent corral: the origin is in its affine hull
                return Ok(vec![0.0; dim]);
            };
            if v.iter().all(|&a| a > 1e-14) {
                weights = v;
                x = combine(points, &corral, &weights);
                break;
            }
            let theta = weights
                .iter()
                .zip(&v)
                .filter(|(_, &vi)| vi <= 1e-14)
                .map(|(&w, &vi)| w / (w - vi))
                .fold(1.0, f64::min);
            for (w, vi) in weights.iter_mut().zip(&v) {
                *w = (1.0 - theta) * *w + theta * vi;
            }
            let keep: Vec<bool> = weights.iter().map(|&w| w > 1e-14).collect();
            corral = corral.iter().zip(&keep).filter(|(_, &k)| k).map(|(&c, _)| c).collect();
            weights = weights.iter().zip(&keep).filter(|(_, &k)| k).map(|(&w, _)| w).collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
        }
    }
    Err(Error::Convergence { solver: "min-norm point", iterations: max_major, residual: dot(&x, &x).sqrt() })
}

fn combine(points: &Matrix, idx: &[usize], w: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; points.cols()];
    for (&i, &wi) in idx.iter().zip(w) {
        x.iter_mut().zip(points.row(i)).for_each(|(a, p)| *a += wi * p);
    }
    x
}

/// Weights `v` with `Σv = 1` minimizing `‖Σ v_i p_i‖` over the affine hull.
fn affine_minimizer(points: &Matrix, idx: &[usize]) -> Option<Vec<f64>> {
    let m = idx.len();
    let gram = Matrix::from_fn(m, m, |a, b| dot(points.row(idx[a]), points.row(idx[b])));
    let shift = (0..m).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    // vᵀ(G + c·11ᵀ)v = vᵀGv + c on the constraint set
    let shifted = gram.map(|g| g + shift);
    let u = cholesky_solve(&shifted, &vec![1.0; m], 1e-13)?;
    let total: f64 = u.iter().sum();
    Some(u.iter().map(|a| a / total).collect())
}

/// True when some `w` achieves `y_i w·x_i > 0` for every labelled row.
pub fn is_separable(points: &Matrix, labels: &[f64]) -> Result<bool> {
    let signed = Matrix::from_fn(points.rows(), points.cols(), |i, j| labels[i] * points[(i, j)]);
    let scale = (0..signed.rows()).map(|i| dot(signed.row(i), signed.row(i))).fold(0.0, f64::max).sqrt();
    let x = min_norm_point(&signed)?;
    Ok(dot(&x, &x).sqrt() > ORIGIN_TOL * scale)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceReport {
    pub alpha: f64,
    pub critical_dim: f64,
    pub n_manifolds: usize,
    pub trials: usize,
    /// `(D, separable fraction)` for every probed dimension, ascending in `D`.
    pub probes: Vec<(usize, f64)>,
    pub seed: u64,
}

/// Fraction of `trials` random dichotomies that are linearly separable after
/// embedding every manifold's frame with its own random orthonormal map into
/// `R^dim`.
pub fn separability_fraction(frames: &[Matrix], dim: usize, trials: usize, rng: &mut RngStream) -> Result<f64> {
    let total: usize = frames.iter().map(Matrix::rows).sum();
    let mut separable = 0usize;
    for _ in 0..trials {
        let mut data = Vec::with_capacity(total * dim);
        let mut labels = Vec::with_capacity(total);
        for frame in frames {
            let basis = rng.orthonormal_frame(dim, frame.cols());
            let embedded = frame.matmul_t(&basis)?;
            let y = rng.sign();
            data.extend_from_slice(embedded.as_slice());
            labels.extend(std::iter::repeat_n(y, frame.rows()));
        }
        if is_separable(&Matrix::new(total, dim, data)?, &labels)? {
            separable += 1;
        }
    }
    Ok(separable as f64 / trials as f64)
}

/// Bisects on the embedding dimension for the 50% separability crossing and
/// returns `P / D_crit`, with `D_crit` linearly interpolated between the
/// bracketing integer dimensions.
pub fn bruteforce_capacity(manifolds: &[PointManifold], trials: usize, rng: &RngStream) -> Result<BruteForceReport> {
    if manifolds.is_empty() || trials == 0 {
        return Err(Error::contract("brute-force capacity needs manifolds and trials"));
    }
    let frames: Vec<Matrix> = manifolds.iter().map(|m| manifold_frame(m).map(|f| f.points)).collect::<Result<_>>()?;
    let min_dim = frames.iter().map(Matrix::cols).max().expect("non-empty");
    let p = manifolds.len();
    let mut probes: Vec<(usize, f64)> = Vec::new();
    let probe = |d: usize, probes: &mut Vec<(usize, f64)>| -> Result<f64> {
        if let Some(&(_, f)) = probes.iter().find(|(pd, _)| *pd == d) {
            return Ok(f);
        }
        let f = separability_fraction(&frames, d, trials, &mut rng.derive(d as u64))?;
        probes.push((d, f));
        Ok(f)
    };

    let cap = 64 * p.max(min_dim);
    let mut hi = min_dim.max(1);
    while probe(hi, &mut probes)? < 0.5 {
        if hi >= cap {
            return Err(Error::Convergence { solver: "capacity bisection", iterations: probes.len(), residual: hi as f64 });
        }
        hi = (2 * hi).min(cap);
    }
    let mut lo = if hi == min_dim.max(1) { hi } else { hi / 2 };
    if probe(lo, &mut probes)? >= 0.5 {
        // crossing sits at or below the smallest admissible dimension
        probes.sort_by_key(|&(d, _)| d);
        return Ok(BruteForceReport { alpha: p as f64 / lo as f64, critical_dim: lo as f64, n_manifolds: p, trials, probes, seed: rng.seed() });
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if probe(mid, &mut probes)? >= 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let f_lo = probe(lo, &mut probes)?;
    let f_hi = probe(hi, &mut probes)?;
    let critical_dim = lo as f64 + (0.5 - f_lo) / (f_hi - f_lo);
    probes.sort_by_key(|&(d, _)| d);
    Ok(BruteForceReport { alpha: p as f64 / critical_dim, critical_dim, n_manifolds: p, trials, probes, seed: rng.seed() })
}
