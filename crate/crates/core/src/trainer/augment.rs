//! Stochastic views of a scene.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::trainer::dataset::ClassFrame;
use crate::Matrix;

/// Augmentation magnitudes. All-zero magnitudes (with `scale_range = (1, 1)`)
/// leave the input untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub jitter_sigma: f64,
    pub scale_range: (f64, f64),
    /// Fraction of coordinates zeroed per view, rounded to the nearest count.
    pub mask_fraction: f64,
    /// Largest rotation angle, in radians, applied inside the class subspace.
    pub rotation_angle_max: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self { jitter_sigma: 0.1, scale_range: (0.8, 1.2), mask_fraction: 0.1, rotation_angle_max: std::f64::consts::PI }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self { jitter_sigma: 0.0, scale_range: (1.0, 1.0), mask_fraction: 0.0, rotation_angle_max: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(self.jitter_sigma >= 0.0) || !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("invalid augmentation magnitudes {self:?}")));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) || !(self.rotation_angle_max >= 0.0) {
            return Err(Error::Config(format!("invalid augmentation magnitudes {self:?}")));
        }
        Ok(())
    }
}

/// `k` views of `x`, one per row.
///
/// Each view applies, in order: a random rotation of the coordinates inside the
/// class subspace (when a frame is given), a global scale, additive Gaussian
/// jitter, and zeroing of a random coordinate subset. The rotation composes
/// independent planar rotations with angles uniform in `±rotation_angle_max`
/// on the planes of a Haar-random basis of the subspace.
pub fn augment(x: &[f64], k: usize, spec: &AugmentationSpec, frame: Option<&ClassFrame>, rng: &mut RngStream) -> Matrix {
    let dim = x.len();
    let n_mask = (spec.mask_fraction * dim as f64).round() as usize;
    let mut out = Matrix::zeros(k, dim);
    for view in 0..k {
        let row = out.row_mut(view);
        row.copy_from_slice(x);
        if let Some(frame) = frame.filter(|_| spec.rotation_angle_max > 0.0) {
            rotate_in_subspace(row, frame, spec.rotation_angle_max, rng);
        }
        let (lo, hi) = spec.scale_range;
        if hi > lo {
            let s = rng.uniform_range(lo, hi);
            row.iter_mut().for_each(|v| *v *= s);
        } else if lo != 1.0 {
            row.iter_mut().for_each(|v| *v *= lo);
        }
        if spec.jitter_sigma > 0.0 {
            for v in row.iter_mut() {
                *v += spec.jitter_sigma * rng.normal();
            }
        }
        if n_mask > 0 {
            for i in rng.sample_indices(dim, n_mask) {
                row[i] = 0.0;
            }
        }
    }
    out
}

fn rotate_in_subspace(row: &mut [f64], frame: &ClassFrame, max_angle: f64, rng: &mut RngStream) {
    let r = frame.basis.cols();
    let (coords, residual) = frame.decompose(row);
    let q = rng.orthogonal_matrix(r);
    let mut p = q.transpose().matvec(&coords).expect("square rotation");
    for pair in 0..r / 2 {
        let theta = rng.uniform_range(-max_angle, max_angle);
        let (c, s) = (theta.cos(), theta.sin());
        let (a, b) = (p[2 * pair], p[2 * pair + 1]);
        p[2 * pair] = c * a - s * b;
        p[2 * pair + 1] = s * a + c * b;
    }
    let rotated = q.matvec(&p).expect("square rotation");
    let inside = frame.basis.matvec(&rotated).expect("basis width matches coordinates");
    for (i, v) in row.iter_mut().enumerate() {
        *v = frame.offset[i] + inside[i] + residual[i];
    }
}
