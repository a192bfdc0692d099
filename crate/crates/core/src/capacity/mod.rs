//! Manifold capacity.
//!
//! [`mftma_capacity`] is the sampled mean-field estimator: for each manifold it
//! draws Gaussian fields `t`, solves the anchor problem with [`solve_anchor_qp`],
//! and averages the squared distance moved. [`bruteforce_capacity`] answers the same question by
//! direct simulation of random dichotomies and serves as its cross-check.
//!
//! Every manifold is analysed in its own frame: the centered sample coordinates in
//! an orthonormal basis of their span, followed by one axis holding the centroid
//! norm. The field `t` is drawn in that `(rank + 1)`-dimensional frame.

mod qp;
mod separability;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, rank_threshold, svd, symmetric_eig};
use crate::Matrix;
use crate::rng::RngStream;
use crate::stats;

pub use qp::{solve_anchor_qp, support_function, AnchorSample, KktResiduals, KKT_TOL};
pub use separability::{bruteforce_capacity, is_separable, min_norm_point, separability_fraction, BruteForceReport};

pub const DEFAULT_N_SAMPLES: usize = 500;
pub const MIN_N_SAMPLES: usize = 100;

/// Recorded verbatim in every report so readers know how `t` was sampled.
pub const FRAME_DESCRIPTION: &str =
    "per-manifold frame: centered coordinates in an orthonormal basis of their span, plus one axis carrying the centroid norm; t ~ N(0, I) in that frame";

/// Samples from one manifold, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointManifold {
    points: Matrix,
    label: Option<usize>,
}

impl PointManifold {
    pub fn new(points: Matrix, label: Option<usize>) -> Result<Self> {
        if points.rows() == 0 || points.cols() == 0 {
            return Err(Error::contract("a manifold needs at least one point of positive dimension"));
        }
        Ok(Self { points, label })
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn centroid(&self) -> Vec<f64> {
        let m = self.points.rows() as f64;
        (0..self.dim()).map(|j| (0..self.points.rows()).map(|i| self.points[(i, j)]).sum::<f64>() / m).collect()
    }

    /// Same manifold with every point mapped through `f`.
    pub fn map_points(&self, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self { points: Matrix::from_fn(self.points.rows(), self.points.cols(), f), label: self.label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometryMeasures {
    pub radius: f64,
    pub dimension: f64,
    /// `radius · √dimension`
    pub effective_size: f64,
}

impl GeometryMeasures {
    fn new(radius: f64, dimension: f64) -> Self {
        Self { radius, dimension, effective_size: radius * dimension.sqrt() }
    }

    /// Radius and participation-ratio dimension of a second-moment spectrum.
    pub fn from_spectrum(eigenvalues: &[f64]) -> Result<Self> {
        let roots: Vec<f64> = eigenvalues.iter().map(|&e| e.max(0.0).sqrt()).collect();
        let total: f64 = eigenvalues.iter().map(|&e| e.max(0.0)).sum();
        if total <= 0.0 {
            return Err(Error::degenerate("zero variance spectrum"));
        }
        let sum_roots: f64 = roots.iter().sum();
        Ok(Self::new(total.sqrt(), sum_roots * sum_roots / total))
    }
}

/// Closed-form radius and dimension from the population covariance of the points.
pub fn elliptical_measures(m: &PointManifold) -> Result<GeometryMeasures> {
    if m.len() < 2 {
        return Err(Error::contract("elliptical measures need at least two points"));
    }
    let c = m.centroid();
    let centered = m.map_points(|i, j| m.points[(i, j)] - c[j]);
    let cov = centered.points.t_matmul(&centered.points)?.scale(1.0 / m.len() as f64);
    let (eigs, _) = symmetric_eig(&cov)?;
    GeometryMeasures::from_spectrum(&eigs)
        .map_err(|_| Error::degenerate("all points identical: zero variance manifold"))
}

/// A manifold expressed in its analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldFrame {
    /// `M × (rank + 1)`: span coordinates of each centered point, then the centroid norm.
    pub points: Matrix,
    pub rank: usize,
    pub center_norm: f64,
}

pub fn manifold_frame(m: &PointManifold) -> Result<ManifoldFrame> {
    let c = m.centroid();
    let center_norm = norm(&c);
    let n = m.len();
    let centered = Matrix::from_fn(n, m.dim(), |i, j| m.points[(i, j)] - c[j]);
    let dec = svd(&centered)?;
    let s_max = dec.s.first().copied().unwrap_or(0.0);
    let rank = if s_max > 0.0 {
        let tau = rank_threshold(n, m.dim(), s_max);
        dec.s.iter().take_while(|&&s| s > tau).count()
    } else {
        0
    };
    let points = Matrix::from_fn(n, rank + 1, |i, k| if k < rank { dec.u[(i, k)] * dec.s[k] } else { center_norm });
    Ok(ManifoldFrame { points, rank, center_norm })
}

/// Capacity and anchor statistics of one manifold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifoldCapacity {
    pub label: Option<usize>,
    pub n_points: usize,
    pub rank: usize,
    pub center_norm: f64,
    /// Mean of `F` over the samples.
    pub alpha_inverse: f64,
    pub f_variance: f64,
    pub active_fraction: f64,
    /// `R² = E‖ũ‖²` and `D = E[(t_u·û)²]` over active samples, where `ũ` is the
    /// anchor's span component divided by the centroid norm.
    pub mean_field: Option<GeometryMeasures>,
    /// Closed-form measures applied to the second moment `E[ũ ũᵀ]` of the same anchors.
    pub anchor_spectral: Option<GeometryMeasures>,
    /// Closed-form measures of the raw points.
    pub elliptical: Option<GeometryMeasures>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityReport {
    pub alpha: f64,
    pub alpha_inverse: f64,
    pub std_error: f64,
    pub alpha_inverse_std_error: f64,
    pub per_manifold: Vec<ManifoldCapacity>,
    pub n_samples: usize,
    pub kappa: f64,
    pub seed: u64,
    pub frame: String,
    /// Mean pairwise cosine between manifold centroids; reported, not folded into `alpha`.
    pub centroid_similarity_mean: Option<f64>,
}

impl CapacityReport {
    pub fn mean_field_measures(&self) -> Vec<Option<GeometryMeasures>> {
        self.per_manifold.iter().map(|m| m.mean_field).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn manifold_capacity(m: &PointManifold, n_samples: usize, kappa: f64, rng: &mut RngStream) -> Result<ManifoldCapacity> {
    let frame = manifold_frame(m)?;
    let framed = PointManifold::new(frame.points.clone(), m.label)?;
    let r = frame.rank;
    let mut fs = Vec::with_capacity(n_samples);
    let mut second_moment = Matrix::zeros(r, r);
    let (mut radius2, mut dim_sum, mut n_active) = (0.0, 0.0, 0usize);
    for _ in 0..n_samples {
        let t: Vec<f64> = rng.gaussian_vec(r + 1);
        let sample = solve_anchor_qp(&t, &framed, kappa)?;
        fs.push(sample.f_value);
        let Some(anchor) = sample.anchor.as_ref() else { continue };
        n_active += 1;
        if r == 0 || frame.center_norm == 0.0 {
            continue;
        }
        let u: Vec<f64> = anchor[..r].iter().map(|a| a / frame.center_norm).collect();
        let uu = dot(&u, &u);
        radius2 += uu;
        if uu > 0.0 {
            dim_sum += dot(&t[..r], &u).powi(2) / uu;
        }
        for a in 0..r {
            for b in 0..r {
                second_moment[(a, b)] += u[a] * u[b];
            }
        }
    }
    let (mean_field, anchor_spectral) = if n_active > 0 && radius2 > 0.0 {
        let na = n_active as f64;
        let (eigs, _) = symmetric_eig(&second_moment.scale(1.0 / na))?;
        (Some(GeometryMeasures::new((radius2 / na).sqrt(), dim_sum / na)), GeometryMeasures::from_spectrum(&eigs).ok())
    } else {
        (None, None)
    };
    Ok(ManifoldCapacity {
        label: m.label,
        n_points: m.len(),
        rank: r,
        center_norm: frame.center_norm,
        alpha_inverse: stats::mean(&fs),
        f_variance: stats::sample_variance(&fs),
        active_fraction: n_active as f64 / n_samples as f64,
        mean_field,
        anchor_spectral,
        elliptical: if m.len() >= 2 { elliptical_measures(m).ok() } else { None },
    })
}

/// Mean-field capacity of a set of manifolds. Manifold `p` samples from
/// `rng.derive(p)`, so the result does not depend on thread scheduling.
pub fn mftma_capacity(manifolds: &[PointManifold], n_samples: usize, kappa: f64, rng: &RngStream) -> Result<CapacityReport> {
    if manifolds.is_empty() {
        return Err(Error::contract("capacity needs at least one manifold"));
    }
    if n_samples < MIN_N_SAMPLES {
        return Err(Error::contract(format!("n_samples {n_samples} below the minimum {MIN_N_SAMPLES}")));
    }
    let per_manifold: Vec<ManifoldCapacity> = manifolds
        .par_iter()
        .enumerate()
        .map(|(p, m)| manifold_capacity(m, n_samples, kappa, &mut rng.derive(p as u64)))
        .collect::<Result<_>>()?;
    let p = per_manifold.len() as f64;
    let alpha_inverse = per_manifold.iter().map(|m| m.alpha_inverse).sum::<f64>() / p;
    let var_sum: f64 = per_manifold.iter().map(|m| m.f_variance / n_samples as f64).sum();
    let alpha_inverse_std_error = var_sum.sqrt() / p;
    let alpha = 1.0 / alpha_inverse;
    Ok(CapacityReport {
        alpha,
        alpha_inverse,
        std_error: alpha * alpha * alpha_inverse_std_error,
        alpha_inverse_std_error,
        per_manifold,
        n_samples,
        kappa,
        seed: rng.seed(),
        frame: FRAME_DESCRIPTION.to_string(),
        centroid_similarity_mean: centroid_similarity_mean(manifolds),
    })
}

fn centroid_similarity_mean(manifolds: &[PointManifold]) -> Option<f64> {
    let centroids: Vec<Vec<f64>> = manifolds.iter().map(PointManifold::centroid).collect();
    let mut sims = Vec::new();
    for a in 0..centroids.len() {
        for b in a + 1..centroids.len() {
            let denom = norm(&centroids[a]) * norm(&centroids[b]);
            if denom > 0.0 {
                sims.push(dot(&centroids[a], &centroids[b]) / denom);
            }
        }
    }
    (!sims.is_empty()).then(|| stats::mean(&sims))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerwiseConfig {
    pub n_samples: usize,
    pub kappa: f64,
    /// Layers wider than this are randomly projected down to it.
    pub max_dim: usize,
}

impl Default for LayerwiseConfig {
    fn default() -> Self {
        Self { n_samples: DEFAULT_N_SAMPLES, kappa: 0.0, max_dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCapacity {
    pub layer: String,
    pub input_dim: usize,
    pub analysis_dim: usize,
    pub projection_seed: Option<u64>,
    pub report: CapacityReport,
}

const PROJECTION_STREAM: u64 = 0x5052_4f4a;

/// Capacity of each layer's manifolds, processed identically: subtract the
/// layer's global mean, project to `max_dim` with a Gaussian map when wider, then
/// run [`mftma_capacity`].
pub fn layerwise_capacity(
    snapshots: &[(String, Vec<PointManifold>)],
    config: &LayerwiseConfig,
    rng: &RngStream,
) -> Result<Vec<LayerCapacity>> {
    snapshots
        .iter()
        .enumerate()
        .map(|(l, (name, manifolds))| {
            let dim = manifolds.first().map(PointManifold::dim).ok_or_else(|| Error::contract(format!("layer {name} has no manifolds")))?;
            if manifolds.iter().any(|m| m.dim() != dim) {
                return Err(Error::contract(format!("layer {name} mixes manifold dimensions")));
            }
            let total: usize = manifolds.iter().map(PointManifold::len).sum();
            let mut mean = vec![0.0; dim];
            for m in manifolds {
                for i in 0..m.len() {
                    mean.iter_mut().zip(m.points.row(i)).for_each(|(a, x)| *a += x / total as f64);
                }
            }
            let (projection, projection_seed) = if dim > config.max_dim {
                let mut prng = rng.derive(PROJECTION_STREAM).derive(l as u64);
                let seed = prng.seed();
                let g: Matrix = rng_projection(&mut prng, dim, config.max_dim);
                (Some(g), Some(seed))
            } else {
                (None, None)
            };
            let prepared: Vec<PointManifold> = manifolds
                .iter()
                .map(|m| {
                    let centered = m.map_points(|i, j| m.points[(i, j)] - mean[j]);
                    match &projection {
                        Some(g) => PointManifold::new(centered.points.matmul(g)?, m.label),
                        None => Ok(centered),
                    }
                })
                .collect::<Result<_>>()?;
            let report = mftma_capacity(&prepared, config.n_samples, config.kappa, &rng.derive(l as u64))?;
            Ok(LayerCapacity {
                layer: name.clone(),
                input_dim: dim,
                analysis_dim: projection.as_ref().map_or(dim, Matrix::cols),
                projection_seed,
                report,
            })
        })
        .collect()
}

fn rng_projection(rng: &mut RngStream, from: usize, to: usize) -> Matrix {
    rng.gaussian_matrix::<f64>(from, to).scale(1.0 / (to as f64).sqrt())
}
