//! Synthetic class-conditional scenes.
//!
//! Each class owns an affine frame `offset + span(basis)` with an
//! `intrinsic_dim`-dimensional orthonormal basis in `R^ambient_dim`. A scene is
//! `offset + basis·a + σ·n` with `a` and `n` standard normal. After generation
//! everything is divided by one global scalar so that the average per-coordinate
//! variance of the scenes is one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::rng::RngStream;
use crate::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    /// Isotropic noise scale before standardization.
    pub noise_sigma: f64,
    /// Norm of each class offset before standardization; the offset lies inside
    /// the class subspace.
    pub offset_scale: f64,
    /// Draw the class subspaces as mutually orthogonal blocks of one random frame.
    pub orthogonal_classes: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_per_class: 64,
            ambient_dim: 40,
            intrinsic_dim: 10,
            noise_sigma: 0.3,
            offset_scale: 0.3,
            orthogonal_classes: false,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be at least 2, got {}", self.n_classes)));
        }
        if self.intrinsic_dim == 0 || self.intrinsic_dim >= self.ambient_dim {
            return Err(Error::Config(format!(
                "intrinsic_dim must lie in 1..ambient_dim, got {} with ambient_dim {}",
                self.intrinsic_dim, self.ambient_dim
            )));
        }
        if self.n_per_class == 0 {
            return Err(Error::Config("n_per_class must be positive".into()));
        }
        if self.orthogonal_classes && self.n_classes * self.intrinsic_dim > self.ambient_dim {
            return Err(Error::Config(format!(
                "{} orthogonal {}-dimensional class subspaces do not fit in R^{}",
                self.n_classes, self.intrinsic_dim, self.ambient_dim
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.offset_scale >= 0.0) {
            return Err(Error::Config("noise_sigma and offset_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Affine frame of one class, in standardized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFrame {
    pub offset: Vec<f64>,
    /// `ambient_dim × intrinsic_dim`, orthonormal columns.
    pub basis: Matrix,
}

impl ClassFrame {
    /// Splits `x` into subspace coordinates and the out-of-subspace residual.
    pub fn decompose(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let centered: Vec<f64> = x.iter().zip(&self.offset).map(|(a, b)| a - b).collect();
        let coords: Vec<f64> = self.basis.columns().iter().map(|u| dot(u, &centered)).collect();
        let inside = self.basis.matvec(&coords).expect("basis width matches coordinates");
        let residual = centered.iter().zip(&inside).map(|(c, p)| c - p).collect();
        (coords, residual)
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        crate::linalg::norm(&self.decompose(x).1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub config: DatasetConfig,
    /// One scene per row.
    pub scenes: Matrix,
    pub labels: Vec<usize>,
    pub frames: Vec<ClassFrame>,
    /// Global divisor applied to raw scenes.
    pub input_scale: f64,
}

impl SceneDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.frames.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.scenes.cols()
    }

    pub fn scene(&self, i: usize) -> &[f64] {
        self.scenes.row(i)
    }

    /// Noise scale in standardized units.
    pub fn noise_sigma(&self) -> f64 {
        self.config.noise_sigma / self.input_scale
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect()
    }

    /// Fresh scenes from the same class frames and standardization, e.g. a test split.
    pub fn resample(&self, n_per_class: usize, rng: &mut RngStream) -> SceneDataset {
        let latent = 1.0 / self.input_scale;
        let (scenes, labels) = draw_scenes(&self.frames, n_per_class, latent, self.noise_sigma(), rng);
        SceneDataset {
            config: DatasetConfig { n_per_class, ..self.config.clone() },
            scenes,
            labels,
            frames: self.frames.clone(),
            input_scale: self.input_scale,
        }
    }
}

pub fn make_dataset(config: &DatasetConfig, rng: &mut RngStream) -> Result<SceneDataset> {
    config.validate()?;
    let (d, r) = (config.ambient_dim, config.intrinsic_dim);
    let bases: Vec<Matrix> = if config.orthogonal_classes {
        let all = rng.orthonormal_frame(d, config.n_classes * r);
        (0..config.n_classes).map(|c| Matrix::from_fn(d, r, |i, j| all[(i, c * r + j)])).collect()
    } else {
        (0..config.n_classes).map(|_| rng.orthonormal_frame(d, r)).collect()
    };
    let frames: Vec<ClassFrame> = bases
        .into_iter()
        .map(|basis| {
            let dir = rng.gaussian_vec::<f64>(r);
            let len = crate::linalg::norm(&dir);
            let coords: Vec<f64> = dir.iter().map(|v| v * config.offset_scale / len).collect();
            let offset = basis.matvec(&coords).expect("basis width matches coordinates");
            ClassFrame { offset, basis }
        })
        .collect();
    let (raw, labels) = draw_scenes(&frames, config.n_per_class, 1.0, config.noise_sigma, rng);

    let n = raw.rows() as f64;
    let mut var = 0.0;
    for j in 0..d {
        let col = raw.column(j);
        let mean = col.iter().sum::<f64>() / n;
        var += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    }
    let input_scale = (var / d as f64).sqrt();
    if !(input_scale > 0.0) {
        return Err(Error::degenerate("generated scenes have zero variance"));
    }
    let scenes = raw.scale(1.0 / input_scale);
    let frames = frames
        .into_iter()
        .map(|f| ClassFrame { offset: f.offset.iter().map(|v| v / input_scale).collect(), basis: f.basis })
        .collect();
    Ok(SceneDataset { config: config.clone(), scenes, labels, frames, input_scale })
}

fn draw_scenes(
    frames: &[ClassFrame],
    n_per_class: usize,
    latent_sigma: f64,
    sigma: f64,
    rng: &mut RngStream,
) -> (Matrix, Vec<usize>) {
    let d = frames[0].offset.len();
    let mut data = Vec::with_capacity(frames.len() * n_per_class * d);
    let mut labels = Vec::with_capacity(frames.len() * n_per_class);
    for (class, frame) in frames.iter().enumerate() {
        for _ in 0..n_per_class {
            let a: Vec<f64> = (0..frame.basis.cols()).map(|_| latent_sigma * rng.normal()).collect();
            let inside = frame.basis.matvec(&a).expect("basis width matches coordinates");
            data.extend(frame.offset.iter().zip(&inside).map(|(o, x)| o + x + sigma * rng.normal()));
            labels.push(class);
        }
    }
    (Matrix::new(labels.len(), d, data).expect("finite scenes"), labels)
}
