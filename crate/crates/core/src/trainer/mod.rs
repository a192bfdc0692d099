//! Self-supervised training of an MLP encoder on synthetic scenes.

mod augment;
mod dataset;
mod mlp;

pub use augment::{augment, AugmentationSpec};
pub use dataset::{make_dataset, ClassFrame, DatasetConfig, SceneDataset};
pub use mlp::{ForwardCache, Gradients, Layer, MlpEncoder, ParamGroup};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::nuclear_norm;
use crate::objective::{batch_geometry, centroids, mmcr_loss, mmcr_loss_and_grad, sphere_normalize};
use crate::rng::RngStream;
use crate::{LossBreakdown, ManifoldBatch, Matrix};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-6;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MONITOR_STREAM: u64 = 0x6d6f_6e69;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_b: usize,
    pub views_k: usize,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub augmentation: AugmentationSpec,
    /// Scenes in the fixed monitor set evaluated after every epoch.
    pub monitor_manifolds: usize,
    pub monitor_views: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_b: 32,
            views_k: 8,
            lambda: 0.0,
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            augmentation: AugmentationSpec::default(),
            monitor_manifolds: 64,
            monitor_views: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_b < 2 {
            return Err(Error::Config(format!("batch_b must be at least 2, got {}", self.batch_b)));
        }
        if self.views_k == 0 || self.monitor_views == 0 {
            return Err(Error::Config("views_k and monitor_views must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lr > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("lambda, lr and weight_decay must be non-negative (lr positive)".into()));
        }
        self.augmentation.validate()
    }
}

/// Metrics of the fixed monitor set, computed on sphere-normalized outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub centroid_norm_mean: f64,
    pub centroid_similarity_mean: f64,
    pub within_manifold_similarity: Option<f64>,
    pub manifold_nuclear_norm_mean: f64,
    pub centroid_nuclear_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's training batches.
    pub loss: LossBreakdown,
    pub centroid_norm_mean: f64,
    pub centroid_similarity_mean: f64,
    pub monitor: MonitorRecord,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub encoder: MlpEncoder,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub rng: RngStream,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(encoder: MlpEncoder, rng: RngStream) -> Self {
        let n = encoder.parameter_count();
        Self { encoder, first_moment: vec![0.0; n], second_moment: vec![0.0; n], step: 0, rng, history: Vec::new() }
    }

    /// One Adam step with bias correction; weight decay enters as `wd·θ` added to
    /// the gradient.
    pub fn optimizer_step(&mut self, grads: &Gradients, lr: f64, weight_decay: f64) -> Result<()> {
        let g = grads.flatten();
        let mut theta = self.encoder.parameters();
        if g.len() != theta.len() || self.first_moment.len() != theta.len() {
            return Err(Error::contract(format!("gradient has {} entries, encoder has {}", g.len(), theta.len())));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for i in 0..theta.len() {
            let gi = g[i] + weight_decay * theta[i];
            self.first_moment[i] = BETA1 * self.first_moment[i] + (1.0 - BETA1) * gi;
            self.second_moment[i] = BETA2 * self.second_moment[i] + (1.0 - BETA2) * gi * gi;
            let m_hat = self.first_moment[i] / c1;
            let v_hat = self.second_moment[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        self.encoder.set_parameters(&theta)
    }
}

/// Stacks `k` augmented views of each listed scene, manifold-major.
pub fn augmented_views(
    dataset: &SceneDataset,
    indices: &[usize],
    k: usize,
    spec: &AugmentationSpec,
    rng: &mut RngStream,
) -> Matrix {
    let dim = dataset.ambient_dim();
    let mut data = Vec::with_capacity(indices.len() * k * dim);
    for &i in indices {
        let frame = &dataset.frames[dataset.labels[i]];
        data.extend_from_slice(augment(dataset.scene(i), k, spec, Some(frame), rng).as_slice());
    }
    Matrix::new(indices.len() * k, dim, data).expect("augmented views are finite")
}

/// Loss and parameter gradient of one batch of manifolds, given its stacked views.
pub fn batch_gradient(encoder: &MlpEncoder, views: &Matrix, k: usize, lambda: f64) -> Result<(LossBreakdown, Gradients)> {
    let (out, cache) = encoder.forward(views)?;
    let raw = ManifoldBatch::from_view_rows(&out, k)?;
    let (loss, grad) = mmcr_loss_and_grad(&raw, lambda)?;
    let d_out = Matrix::new(out.rows(), out.cols(), grad.as_slice().to_vec())?;
    Ok((loss, encoder.backward(&cache, &d_out)?))
}

/// Runs `config.epochs` epochs of minibatch training, appending one history record
/// per epoch. Each epoch visits a fresh permutation in `len / batch_b` full batches.
pub fn train(state: &mut TrainState, dataset: &SceneDataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if dataset.len() < config.batch_b {
        return Err(Error::Config(format!("dataset has {} scenes, fewer than batch_b {}", dataset.len(), config.batch_b)));
    }
    if dataset.ambient_dim() != state.encoder.input_dim() {
        return Err(Error::contract("encoder input width does not match the dataset"));
    }
    let monitor = monitor_views(dataset, config, &state.rng);
    let n_batches = dataset.len() / config.batch_b;
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for _ in 0..config.epochs {
        let epoch = state.history.len();
        state.rng.shuffle(&mut order);
        let mut sums = [0.0; 5];
        for batch in 0..n_batches {
            let idx = &order[batch * config.batch_b..(batch + 1) * config.batch_b];
            let views = augmented_views(dataset, idx, config.views_k, &config.augmentation, &mut state.rng);
            let (out, cache) = state.encoder.forward(&views)?;
            let raw = ManifoldBatch::from_view_rows(&out, config.views_k)?;
            let (loss, grad) = mmcr_loss_and_grad(&raw, config.lambda).map_err(|e| at_batch(e, epoch, batch))?;
            let d_out = Matrix::new(out.rows(), out.cols(), grad.as_slice().to_vec())?;
            let grads = state.encoder.backward(&cache, &d_out)?;
            state.optimizer_step(&grads, config.lr, config.weight_decay)?;

            let geo = batch_geometry(&sphere_normalize(&raw)?);
            for (s, v) in sums.iter_mut().zip([
                loss.total,
                loss.centroid_term,
                loss.compression_term,
                geo.centroid_norm_mean,
                geo.centroid_similarity_mean,
            ]) {
                *s += v;
            }
        }
        let nb = n_batches as f64;
        let record = EpochRecord {
            epoch,
            loss: LossBreakdown {
                total: sums[0] / nb,
                centroid_term: sums[1] / nb,
                compression_term: sums[2] / nb,
                lambda: config.lambda,
            },
            centroid_norm_mean: sums[3] / nb,
            centroid_similarity_mean: sums[4] / nb,
            monitor: monitor_record(&state.encoder, &monitor, config.monitor_views)
                .map_err(|e| at_batch(e, epoch, usize::MAX))?,
        };
        state.history.push(record);
    }
    Ok(())
}

fn at_batch(err: Error, epoch: usize, batch: usize) -> Error {
    let place = if batch == usize::MAX { format!("epoch {epoch}, monitor set") } else { format!("epoch {epoch}, batch {batch}") };
    match err {
        Error::Degenerate(msg) => Error::Degenerate(format!("{place}: {msg}")),
        other => other,
    }
}

fn monitor_views(dataset: &SceneDataset, config: &TrainConfig, rng: &RngStream) -> Matrix {
    let mut mrng = rng.derive(MONITOR_STREAM);
    let n = config.monitor_manifolds.clamp(2, dataset.len());
    let idx = mrng.sample_indices(dataset.len(), n);
    augmented_views(dataset, &idx, config.monitor_views, &config.augmentation, &mut mrng)
}

/// Geometry of an encoder's normalized responses to stacked manifold views.
pub fn monitor_record(encoder: &MlpEncoder, views: &Matrix, k: usize) -> Result<MonitorRecord> {
    let z = sphere_normalize(&ManifoldBatch::from_view_rows(&encoder.encode(views)?, k)?)?;
    let geo = batch_geometry(&z);
    let loss = mmcr_loss(&z, 1.0)?;
    Ok(MonitorRecord {
        centroid_norm_mean: geo.centroid_norm_mean,
        centroid_similarity_mean: geo.centroid_similarity_mean,
        within_manifold_similarity: geo.within_manifold_similarity,
        manifold_nuclear_norm_mean: loss.compression_term,
        centroid_nuclear_norm: nuclear_norm(&centroids(&z).c)?,
    })
}
