//! Run configuration, stored as TOML.
//!
//! A config names one preset and carries every knob the preset reads. Missing
//! sections fall back to the preset's defaults and unknown keys are rejected, so
//! a typo never silently turns into a default.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use mmcr::evaluation::ProbeConfig;
use mmcr::trainer::{DatasetConfig, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    TrainBasic,
    LambdaSweep,
    CapacityLayers,
    GradientCoherence,
    SubspaceAlignment,
    Robustness,
    TheoremVerify,
    BatchSweep,
    Bench,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::TrainBasic,
        Preset::LambdaSweep,
        Preset::CapacityLayers,
        Preset::GradientCoherence,
        Preset::SubspaceAlignment,
        Preset::Robustness,
        Preset::TheoremVerify,
        Preset::BatchSweep,
        Preset::Bench,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::TrainBasic => "train-basic",
            Preset::LambdaSweep => "lambda-sweep",
            Preset::CapacityLayers => "capacity-layers",
            Preset::GradientCoherence => "gradient-coherence",
            Preset::SubspaceAlignment => "subspace-alignment",
            Preset::Robustness => "robustness",
            Preset::TheoremVerify => "theorem-verify",
            Preset::BatchSweep => "batch-sweep",
            Preset::Bench => "bench",
        }
    }

    /// Whether two runs with the same config write byte-identical metric files.
    pub fn deterministic(self) -> bool {
        self != Preset::Bench
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            CliError::Config { path: "experiment".into(), message: format!("unknown preset `{s}`; available: {}", names.join(", ")) }
        })
    }
}

/// Widths of the hidden layers and the output; the input width comes from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], output_dim: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub test_per_class: usize,
    pub probe: ProbeConfig,
    pub knn_k: usize,
    pub capacity_samples: usize,
    pub kappa: f64,
    /// Layers wider than this are randomly projected before capacity analysis.
    pub max_analysis_dim: usize,
    /// Scenes per class turned into augmentation manifolds for geometry and capacity.
    pub scenes_per_class: usize,
    pub manifold_views: usize,
    pub coherence_batches_per_class: usize,
    pub coherence_batch_b: usize,
    pub coherence_views_k: usize,
    pub epsilons: Vec<f64>,
    pub attack_iterations: usize,
    pub iteration_grid: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            test_per_class: 64,
            probe: ProbeConfig::default(),
            knn_k: mmcr::evaluation::DEFAULT_KNN_K,
            capacity_samples: mmcr::capacity::DEFAULT_N_SAMPLES,
            kappa: 0.0,
            max_analysis_dim: 64,
            scenes_per_class: 16,
            manifold_views: 16,
            coherence_batches_per_class: 10,
            coherence_batch_b: 8,
            coherence_views_k: 8,
            epsilons: vec![0.0, 0.05, 0.1, 0.2, 0.4],
            attack_iterations: mmcr::evaluation::DEFAULT_ATTACK_ITERATIONS,
            iteration_grid: vec![1, 5, 10, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { lambdas: vec![0.0, 0.001, 0.01, 0.1], batch_sizes: vec![8, 16, 32, 64] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConfig {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub trials: usize,
    pub lemma_instances: usize,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self { n: 8, k: 3, d: 4, trials: 10_000, lemma_instances: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub b_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { b_grid: vec![8, 16, 32, 64], d_grid: vec![128], k_grid: vec![2, 4, 8, 16], repeats: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Preset,
    #[serde(default)]
    pub seed: u64,
    /// Relative paths resolve against the working directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub theorem: TheoremConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = Self {
            experiment: preset,
            seed: 0,
            output_dir: default_output_dir(),
            dataset: DatasetConfig::default(),
            encoder: EncoderConfig::default(),
            training: TrainConfig::default(),
            analysis: AnalysisConfig::default(),
            sweep: SweepConfig::default(),
            theorem: TheoremConfig::default(),
            bench: BenchConfig::default(),
        };
        match preset {
            Preset::GradientCoherence => cfg.training.epochs = 30,
            Preset::LambdaSweep | Preset::BatchSweep => cfg.training.epochs = 50,
            _ => {}
        }
        cfg
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config {
            path: e.span().map(|s| format!("byte {}..{}", s.start, s.end)).unwrap_or_else(|| "<document>".into()),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config { path: "<serialize>".into(), message: e.to_string() })
    }

    /// Encoder layer widths, input first.
    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.dataset.ambient_dim];
        dims.extend(&self.encoder.hidden);
        dims.push(self.encoder.output_dim);
        dims
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |path: &str, e: mmcr::Error| CliError::Config { path: path.into(), message: e.to_string() };
        self.dataset.validate().map_err(|e| field("dataset", e))?;
        self.training.validate().map_err(|e| field("training", e))?;
        let bad = |path: &str, message: &str| Err(CliError::Config { path: path.into(), message: message.into() });
        if self.encoder.output_dim == 0 || self.encoder.hidden.contains(&0) {
            return bad("encoder", "layer widths must be positive");
        }
        let a = &self.analysis;
        if a.test_per_class == 0 || a.scenes_per_class < 2 || a.manifold_views < 2 {
            return bad("analysis", "test_per_class must be positive and manifolds need at least two scenes and two views");
        }
        if a.capacity_samples < mmcr::capacity::MIN_N_SAMPLES {
            return bad("analysis.capacity_samples", "below the estimator minimum of 100");
        }
        if a.epsilons.first() != Some(&0.0) || a.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return bad("analysis.epsilons", "must start at 0 and increase strictly");
        }
        if a.iteration_grid.is_empty() || a.iteration_grid.contains(&0) || a.attack_iterations == 0 {
            return bad("analysis.iteration_grid", "attack iteration counts must be positive");
        }
        if self.sweep.lambdas.iter().any(|l| !(*l >= 0.0)) || self.sweep.batch_sizes.iter().any(|&b| b < 2) {
            return bad("sweep", "lambdas must be non-negative and batch sizes at least 2");
        }
        let b = &self.bench;
        if b.b_grid.is_empty() || b.d_grid.is_empty() || b.k_grid.is_empty() || b.repeats == 0 {
            return bad("bench", "grids and repeats must be non-empty");
        }
        if self.theorem.k == 0 || self.theorem.n == 0 || self.theorem.d == 0 || self.theorem.d > self.theorem.n * self.theorem.k {
            return bad("theorem", "need positive n, k and 1 ≤ d ≤ n·k");
        }
        Ok(())
    }
}
