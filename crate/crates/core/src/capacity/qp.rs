//! Per-sample anchor problem: project `t` onto `{v : v·s ≥ κ for every point s}`.
//!
//! The dual lives on non-negative weights `λ_j`, one per manifold point, with
//! `v = t + Σ_j λ_j s_j`. A Lawson-Hanson active-set pass solves it exactly: a
//! constraint joins only while it is violated by the current `v`, so each
//! equality system stays nonsingular. If that pass stalls numerically, Hildreth's
//! coordinate ascent takes over and its settled active set is solved exactly.

use serde::Serialize;

use crate::capacity::PointManifold;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, dot};
use crate::Matrix;

const MAX_SWEEPS: usize = 100_000;
const OBJECTIVE_TOL: f64 = 1e-8;
pub const KKT_TOL: f64 = 1e-6;

/// Largest violation of each KKT condition, measured in the units of `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    /// `‖v − t − λ·anchor‖`
    pub stationarity: f64,
    /// `max(0, −min λ_j)`
    pub dual_feasibility: f64,
    /// `max(0, κ − g(v))`
    pub primal_feasibility: f64,
    /// `max_j |λ_j (v·s_j − κ)|`
    pub complementary_slackness: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.dual_feasibility).max(self.primal_feasibility).max(self.complementary_slackness)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnchorSample {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    /// Convex combination of the active points; `None` when the constraint is slack.
    pub anchor: Option<Vec<f64>>,
    /// Total multiplier `Σ λ_j`.
    pub lambda: f64,
    pub f_value: f64,
    pub active: bool,
    pub kkt: KktResiduals,
}

/// `g(v) = min_j v·s_j` over the sample points, with the first minimizing index.
pub fn support_function(v: &[f64], m: &PointManifold) -> Result<(f64, usize)> {
    if v.len() != m.dim() {
        return Err(Error::contract(format!("vector of length {} against {}-dimensional manifold", v.len(), m.dim())));
    }
    let points = m.points();
    let mut best = (f64::INFINITY, 0);
    for j in 0..points.rows() {
        let val = dot(v, points.row(j));
        if val < best.0 {
            best = (val, j);
        }
    }
    Ok(best)
}

pub fn solve_anchor_qp(t: &[f64], m: &PointManifold, kappa: f64) -> Result<AnchorSample> {
    if t.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("anchor problem needs a finite t"));
    }
    let (g_t, _) = support_function(t, m)?;
    if g_t >= kappa {
        let zero = KktResiduals { stationarity: 0.0, dual_feasibility: 0.0, primal_feasibility: 0.0, complementary_slackness: 0.0 };
        return Ok(AnchorSample { t: t.to_vec(), v: t.to_vec(), anchor: None, lambda: 0.0, f_value: 0.0, active: false, kkt: zero });
    }
    let points = m.points();
    let n_pts = points.rows();
    let norms2: Vec<f64> = (0..n_pts).map(|j| dot(points.row(j), points.row(j))).collect();
    if kappa > 0.0 && norms2.contains(&0.0) {
        return Err(Error::degenerate("a zero point can never reach a positive margin"));
    }

    if let Some(exact) = lawson_hanson(points, t, kappa) {
        let sample = finish(t, points, kappa, exact)?;
        if sample.kkt.max() <= KKT_TOL {
            return Ok(sample);
        }
    }

    let mut lambda = vec![0.0; n_pts];
    let mut v = t.to_vec();
    let mut prev = 0.0;
    for sweep in 0..MAX_SWEEPS {
        for j in 0..n_pts {
            if norms2[j] == 0.0 {
                continue;
            }
            let s = points.row(j);
            let step = (kappa - dot(&v, s)) / norms2[j];
            let new = (lambda[j] + step).max(0.0);
            let delta = new - lambda[j];
            if delta != 0.0 {
                v.iter_mut().zip(s).for_each(|(vi, si)| *vi += delta * si);
                lambda[j] = new;
            }
        }
        let f = sq_dist(&v, t);
        if (f - prev).abs() <= OBJECTIVE_TOL * f.max(1.0) {
            if let Some(exact) = polish(points, t, kappa, &lambda) {
                lambda = exact;
            }
            let sample = finish(t, points, kappa, lambda.clone())?;
            if sample.kkt.max() <= KKT_TOL {
                return Ok(sample);
            }
        }
        prev = f;
        if sweep + 1 == MAX_SWEEPS {
            let residual = finish(t, points, kappa, lambda.clone())?.kkt.max();
            return Err(Error::Convergence { solver: "anchor qp", iterations: MAX_SWEEPS, residual });
        }
    }
    unreachable!("loop returns on its last sweep")
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Active-set solve of `min ½‖t + Σ λ_j s_j‖²  − κ Σ λ_j` over `λ ≥ 0`. `None`
/// when a passive-set system turns singular or the iteration cap is reached.
fn lawson_hanson(points: &Matrix, t: &[f64], kappa: f64) -> Option<Vec<f64>> {
    let n_pts = points.rows();
    let s_max = (0..n_pts).map(|j| dot(points.row(j), points.row(j))).fold(0.0, f64::max).sqrt();
    let tol = 1e-12 * s_max * (dot(t, t).sqrt() + kappa.abs() / s_max.max(1e-300)).max(1.0);
    let mut lambda = vec![0.0; n_pts];
    let mut passive: Vec<usize> = Vec::new();
    let violation = |lambda: &[f64], j: usize| -> f64 {
        let mut v = t.to_vec();
        for (i, &w) in lambda.iter().enumerate().filter(|(_, &w)| w > 0.0) {
            v.iter_mut().zip(points.row(i)).for_each(|(a, s)| *a += w * s);
        }
        kappa - dot(&v, points.row(j))
    };
    for _ in 0..3 * n_pts + 10 {
        let (worst, j) = (0..n_pts)
            .filter(|j| !passive.contains(j))
            .map(|j| (violation(&lambda, j), j))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap_or((0.0, 0));
        if worst <= tol {
            return Some(lambda);
        }
        passive.push(j);
        loop {
            let gram = Matrix::from_fn(passive.len(), passive.len(), |a, b| dot(points.row(passive[a]), points.row(passive[b])));
            let rhs: Vec<f64> = passive.iter().map(|&i| kappa - dot(points.row(i), t)).collect();
            let z = cholesky_solve(&gram, &rhs, 1e-12)?;
            if z.iter().all(|&w| w > 0.0) {
                passive.iter().zip(&z).for_each(|(&i, &w)| lambda[i] = w);
                break;
            }
            // step from the current weights toward z until one weight reaches zero
            let alpha = passive
                .iter()
                .zip(&z)
                .filter(|(_, &w)| w <= 0.0)
                .map(|(&i, &w)| lambda[i] / (lambda[i] - w))
                .fold(1.0, f64::min);
            passive.iter().zip(&z).for_each(|(&i, &w)| lambda[i] += alpha * (w - lambda[i]));
            passive.retain(|&i| lambda[i] > 1e-15 * s_max);
            (0..n_pts).filter(|i| !passive.contains(i)).for_each(|i| lambda[i] = 0.0);
            if passive.is_empty() {
                break;
            }
        }
    }
    None
}

/// Solves the equality system of the current active set, adding violated
/// constraints as it goes. `None` if the system turns singular or a weight
/// comes out negative.
fn polish(points: &Matrix, t: &[f64], kappa: f64, lambda: &[f64]) -> Option<Vec<f64>> {
    let mut active: Vec<usize> = (0..lambda.len()).filter(|&j| lambda[j] > 0.0).collect();
    let scale = (0..points.rows()).map(|j| dot(points.row(j), points.row(j))).fold(0.0, f64::max).max(1e-300);
    for _ in 0..points.cols() + 2 {
        if active.is_empty() {
            return None;
        }
        let gram = Matrix::from_fn(active.len(), active.len(), |a, b| dot(points.row(active[a]), points.row(active[b])));
        let rhs: Vec<f64> = active.iter().map(|&j| kappa - dot(points.row(j), t)).collect();
        let x = cholesky_solve(&gram, &rhs, 1e-12)?;
        if x.iter().any(|&w| w < 0.0) {
            return None;
        }
        let mut full = vec![0.0; lambda.len()];
        active.iter().zip(&x).for_each(|(&j, &w)| full[j] = w);
        let mut v = t.to_vec();
        for (&j, &w) in active.iter().zip(&x) {
            v.iter_mut().zip(points.row(j)).for_each(|(vi, si)| *vi += w * si);
        }
        let worst = (0..points.rows())
            .filter(|j| !active.contains(j))
            .map(|j| (kappa - dot(&v, points.row(j)), j))
            .filter(|&(gap, _)| gap > 1e-12 * scale.sqrt())
            .max_by(|a, b| a.0.total_cmp(&b.0));
        match worst {
            None => return Some(full),
            Some((_, j)) => active.push(j),
        }
    }
    None
}

fn finish(t: &[f64], points: &Matrix, kappa: f64, lambda: Vec<f64>) -> Result<AnchorSample> {
    let dim = t.len();
    let mut v = t.to_vec();
    let mut weighted = vec![0.0; dim];
    for (j, &w) in lambda.iter().enumerate() {
        if w > 0.0 {
            weighted.iter_mut().zip(points.row(j)).for_each(|(a, s)| *a += w * s);
        }
    }
    v.iter_mut().zip(&weighted).for_each(|(vi, a)| *vi += a);
    let total: f64 = lambda.iter().sum();
    let anchor: Vec<f64> = weighted.iter().map(|a| a / total).collect();
    let g_v = (0..points.rows()).map(|j| dot(&v, points.row(j))).fold(f64::INFINITY, f64::min);
    let stationarity = v
        .iter()
        .zip(t)
        .zip(&anchor)
        .map(|((vi, ti), ai)| (vi - ti - total * ai).powi(2))
        .sum::<f64>()
        .sqrt();
    let slack = lambda
        .iter()
        .enumerate()
        .map(|(j, &w)| (w * (dot(&v, points.row(j)) - kappa)).abs())
        .fold(0.0, f64::max);
    let kkt = KktResiduals {
        stationarity,
        dual_feasibility: lambda.iter().fold(0.0_f64, |m, &w| m.max(-w)),
        primal_feasibility: (kappa - g_v).max(0.0),
        complementary_slackness: slack,
    };
    Ok(AnchorSample { t: t.to_vec(), f_value: sq_dist(&v, t), v, anchor: Some(anchor), lambda: total, active: true, kkt })
}
