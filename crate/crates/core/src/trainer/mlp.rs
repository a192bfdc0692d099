//! Fully connected ReLU encoder with hand-written reverse mode.
//!
//! Batches are row-major: one sample per row. Layer `l` computes
//! `pre = x·Wᵀ + b`; hidden layers apply ReLU and the last layer is linear.
//! The last layer is the projector group and everything before it the backbone.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg::matrix::read_u64;
use crate::rng::RngStream;
use crate::Matrix;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Layer {
    fn fan_in(&self) -> usize {
        self.w.cols()
    }

    fn fan_out(&self) -> usize {
        self.w.rows()
    }
}

#[derive(Debug, Clone)]
pub struct MlpEncoder {
    layers: Vec<Layer>,
    /// Changes on every parameter mutation; caches remember the value they saw.
    version: u64,
}

impl PartialEq for MlpEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by [`MlpEncoder::forward`]: the input to every layer
/// followed by the final output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Matrix>,
    version: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds the output")
    }

    /// Input to layer `l` (`l = 0` is the raw batch).
    pub fn layer_input(&self, l: usize) -> &Matrix {
        &self.activations[l]
    }

    pub fn activations(&self) -> &[Matrix] {
        &self.activations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Parameter subsets used for restricted gradient statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    All,
    FirstLayer,
    LastLayer,
    Backbone,
    Projector,
}

impl ParamGroup {
    fn layer_range(self, n_layers: usize) -> std::ops::Range<usize> {
        match self {
            ParamGroup::All => 0..n_layers,
            ParamGroup::FirstLayer => 0..1,
            ParamGroup::LastLayer | ParamGroup::Projector => n_layers - 1..n_layers,
            ParamGroup::Backbone => 0..n_layers.saturating_sub(1).max(1),
        }
    }
}

impl Gradients {
    pub fn zeros_like(enc: &MlpEncoder) -> Self {
        let layers = enc
            .layers
            .iter()
            .map(|l| Layer { w: Matrix::zeros(l.fan_out(), l.fan_in()), b: vec![0.0; l.fan_out()] })
            .collect();
        Self { layers }
    }

    /// Layer by layer, `W` row-major then `b`; the same order as
    /// [`MlpEncoder::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.flatten_group(ParamGroup::All)
    }

    pub fn flatten_group(&self, group: ParamGroup) -> Vec<f64> {
        self.layers[group.layer_range(self.layers.len())]
            .iter()
            .flat_map(|l| l.w.as_slice().iter().chain(&l.b).copied())
            .collect()
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::contract("gradient layer counts differ"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w = a.w.add(&b.w)?;
            a.b.iter_mut().zip(&b.b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }
}

impl MlpEncoder {
    /// Random encoder with dims `[input, hidden…, output]`. Weights and biases are
    /// uniform in `±1/√fan_in`.
    pub fn new(dims: &[usize], rng: &mut RngStream) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("encoder dims need at least two positive entries, got {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = Matrix::from_fn(fan_out, fan_in, |_, _| rng.uniform_range(-bound, bound));
                let b = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
                Layer { w: weights, b }
            })
            .collect();
        Ok(Self { layers, version: fresh_version() })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("encoder needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.fan_out() {
                return Err(Error::contract(format!("layer {i}: bias length {} vs {} outputs", l.b.len(), l.fan_out())));
            }
            if i > 0 && layers[i - 1].fan_out() != l.fan_in() {
                return Err(Error::contract(format!("layer {i} input width does not match previous output")));
            }
        }
        Ok(Self { layers, version: fresh_version() })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].fan_in()).chain(self.layers.iter().map(Layer::fan_out)).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.as_slice().len() + l.b.len()).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.as_slice().iter().chain(&l.b).copied()).collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::contract(format!(
                "parameter vector has {} entries, encoder has {}",
                params.len(),
                self.parameter_count()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::degenerate("non-finite parameter update"));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.w.as_slice().len();
            l.w.as_mut_slice().copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        self.version = fresh_version();
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::contract(format!("input width {} but encoder expects {}", x.cols(), self.input_dim())));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = activations[i].matmul_t(&layer.w)?;
            for r in 0..pre.rows() {
                for (v, b) in pre.row_mut(r).iter_mut().zip(&layer.b) {
                    *v += b;
                    if i < last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(pre);
        }
        let cache = ForwardCache { activations, version: self.version };
        Ok((cache.output().clone(), cache))
    }

    /// Output only.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Parameter gradients of a scalar loss given `d_out = ∂loss/∂output`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<Gradients> {
        self.backprop(cache, d_out, true).map(|(g, _)| g.expect("requested"))
    }

    /// Gradient with respect to the input batch.
    pub fn input_gradient(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<Matrix> {
        self.backprop(cache, d_out, false).map(|(_, dx)| dx)
    }

    fn backprop(&self, cache: &ForwardCache, d_out: &Matrix, want_params: bool) -> Result<(Option<Gradients>, Matrix)> {
        if cache.version != self.version || cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::contract("forward cache is stale: parameters changed since it was recorded"));
        }
        if d_out.shape() != cache.output().shape() {
            return Err(Error::contract(format!(
                "upstream gradient shape {:?} vs output {:?}",
                d_out.shape(),
                cache.output().shape()
            )));
        }
        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut delta = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.activations[l];
            if let Some(g) = grads.as_mut() {
                g.layers[l].w = delta.t_matmul(input)?;
                for r in 0..delta.rows() {
                    g.layers[l].b.iter_mut().zip(delta.row(r)).for_each(|(b, d)| *b += d);
                }
            }
            let mut upstream = delta.matmul(&self.layers[l].w)?;
            if l > 0 {
                // input to layer l is ReLU output of layer l-1
                for (u, &a) in upstream.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if a <= 0.0 {
                        *u = 0.0;
                    }
                }
            }
            delta = upstream;
        }
        Ok((grads, delta))
    }

    /// Binary checkpoint: `u64` count of dims, the dims, then per layer `W` and
    /// `b` (as a `1 × out` matrix) in the matrix binary layout.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let dims = self.dims();
        w.write_all(&(dims.len() as u64).to_le_bytes())?;
        for d in &dims {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for l in &self.layers {
            l.w.write_binary(&mut w)?;
            Matrix::new(1, l.b.len(), l.b.clone())?.write_binary(&mut w)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let n = read_u64(&mut r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Parse(format!("checkpoint declares {n} layer dims")));
        }
        let dims = (0..n).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(n - 1);
        for (i, w) in dims.windows(2).enumerate() {
            let weights = Matrix::read_binary(&mut r)?;
            let bias = Matrix::read_binary(&mut r)?;
            if weights.shape() != (w[1], w[0]) || bias.shape() != (1, w[1]) {
                return Err(Error::Parse(format!("checkpoint layer {i} does not match header dims {dims:?}")));
            }
            layers.push(Layer { w: weights, b: bias.into_vec() });
        }
        Self::from_layers(layers)
    }
}
