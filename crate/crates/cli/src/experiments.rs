//! Preset runners.
//!
//! Every preset starts from [`prepare`], which fixes how the config seed fans out
//! into derived streams, so two presets with the same seed see the same dataset,
//! test split and initial encoder.

use std::collections::BTreeMap;

use serde::Serialize;

use mmcr::capacity::{layerwise_capacity, LayerwiseConfig};
use mmcr::evaluation::{fit_probe, iteration_sweep, knn_monitor, robustness_curve, write_robustness_csv, LinearProbe};
use mmcr::geometry::{
    augmentation_manifolds, centroid_similarity_stats, gradient_coherence, layer_manifolds, shared_variance_stats,
    subspace_angle_stats, Centering, CoherenceConfig, SimilarityDistributions,
};
use mmcr::linalg::nuclear_norm;
use mmcr::objective::{centroids, sphere_normalize};
use mmcr::spectral::{build_graph, graph_loss, verify_optimality, zero_pad_nuclear_invariance, EmbeddingMatrix};
use mmcr::trainer::{augmented_views, make_dataset, train, MlpEncoder, ParamGroup, SceneDataset, TrainConfig, TrainState};
use mmcr::{ManifoldBatch, Matrix, RngStream};

use crate::bench::bench_loss_scaling;
use crate::config::{ExperimentConfig, Preset};
use crate::error::{CliResult, Context};
use crate::manifest::{RunDir, RunManifest, METRICS_FILE};

pub const TEST_STREAM: u64 = 1;
pub const INIT_STREAM: u64 = 2;
pub const TRAIN_STREAM: u64 = 3;
pub const MANIFOLD_STREAM: u64 = 4;
pub const COHERENCE_STREAM: u64 = 5;
pub const LAYER_VIEW_STREAM: u64 = 6;
pub const CAPACITY_STREAM: u64 = 7;
pub const ATTACK_STREAM: u64 = 8;
pub const THEOREM_STREAM: u64 = 9;
pub const BENCH_STREAM: u64 = 10;

pub type Metrics = BTreeMap<String, f64>;

/// Dataset, held-out split and untrained encoder for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: SceneDataset,
    pub test: SceneDataset,
    pub encoder: MlpEncoder,
    pub rng: RngStream,
}

pub fn prepare(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    let mut rng = RngStream::new(cfg.seed);
    let dataset = make_dataset(&cfg.dataset, &mut rng).context(|| "dataset".into())?;
    let test = dataset.resample(cfg.analysis.test_per_class, &mut rng.derive(TEST_STREAM));
    let encoder = MlpEncoder::new(&cfg.encoder_dims(), &mut rng.derive(INIT_STREAM)).context(|| "encoder".into())?;
    Ok(Prepared { dataset, test, encoder, rng })
}

impl Prepared {
    /// Trains a copy of the initial encoder. The training stream does not depend
    /// on `training`, so sweeps compare runs from the same starting point.
    pub fn train(&self, training: &TrainConfig) -> CliResult<TrainState> {
        let mut state = TrainState::new(self.encoder.clone(), self.rng.derive(TRAIN_STREAM));
        train(&mut state, &self.dataset, training).context(|| "training".into())?;
        Ok(state)
    }

    /// Linear probe fitted on training-scene features, with its held-out accuracy.
    pub fn probe(&self, encoder: &MlpEncoder, cfg: &ExperimentConfig) -> CliResult<(LinearProbe, f64)> {
        let train_f = encoder.encode(&self.dataset.scenes).context(|| "probe features".into())?;
        let probe = fit_probe(&train_f, &self.dataset.labels, &cfg.analysis.probe).context(|| "probe fit".into())?;
        let test_f = encoder.encode(&self.test.scenes).context(|| "probe features".into())?;
        let acc = probe.accuracy(&test_f, &self.test.labels).context(|| "probe accuracy".into())?;
        Ok((probe, acc))
    }

    pub fn knn(&self, encoder: &MlpEncoder, k: usize) -> CliResult<f64> {
        let train_f = encoder.encode(&self.dataset.scenes).context(|| "knn features".into())?;
        let test_f = encoder.encode(&self.test.scenes).context(|| "knn features".into())?;
        knn_monitor(&train_f, &self.dataset.labels, &test_f, &self.test.labels, k).context(|| "knn".into())
    }

    /// The first `per_class` training scenes of every class.
    pub fn analysis_indices(&self, per_class: usize) -> Vec<usize> {
        (0..self.dataset.n_classes()).flat_map(|c| self.dataset.indices_of_class(c).into_iter().take(per_class)).collect()
    }
}

/// Runs the configured preset and writes its outputs into `dir`.
pub fn run(cfg: &ExperimentConfig, mut dir: RunDir) -> CliResult<RunManifest> {
    cfg.validate()?;
    let metrics = match cfg.experiment {
        Preset::TrainBasic => train_basic(cfg, &mut dir)?,
        Preset::LambdaSweep => lambda_sweep(cfg, &mut dir)?,
        Preset::CapacityLayers => capacity_layers(cfg, &mut dir)?,
        Preset::GradientCoherence => coherence(cfg, &mut dir)?,
        Preset::SubspaceAlignment => subspace_alignment(cfg, &mut dir)?,
        Preset::Robustness => robustness(cfg, &mut dir)?,
        Preset::TheoremVerify => theorem_verify(cfg, &mut dir)?,
        Preset::BatchSweep => batch_sweep(cfg, &mut dir)?,
        Preset::Bench => bench(cfg, &mut dir)?,
    };
    dir.write_json(METRICS_FILE, &metrics)?;
    dir.finish(cfg)
}

fn train_basic(cfg: &ExperimentConfig, dir: &mut RunDir) -> CliResult<Metrics> {
    let prep = prepare(cfg)?;
    let mut m = Metrics::new();
    m.insert("probe_acc_untrained".into(), prep.probe(&prep.encoder, cfg)?.1);
    m.insert("knn_acc_untrained".into(), prep.knn(&prep.encoder, cfg.analysis.knn_k)?);
    let state = prep.train(&cfg.training)?;
    m.insert("probe_acc_trained".into(), prep.probe(&state.encoder, cfg)?.1);
    m.insert("knn_acc_trained".into(), prep.knn(&state.encoder, cfg.analysis.knn_k)?);
    if let (Some(first), Some(last)) = (state.history.first(), state.history.last()) {
        m.insert("loss_first".into(), first.loss.total);
        m.insert("loss_last".into(), last.loss.total);
        m.insert("centroid_similarity_first".into(), first.monitor.centroid_similarity_mean);
        m.insert("centroid_similarity_last".into(), last.monitor.centroid_similarity_mean);
        m.insert("centroid_norm_first".into(), first.monitor.centroid_norm_mean);
        m.insert("centroid_norm_last".into(), last.monitor.centroid_norm_mean);
        m.insert("centroid_nuclear_norm_first".into(), first.monitor.centroid_nuclear_norm);
        m.insert("centroid_nuclear_norm_last".into(), last.monitor.centroid_nuclear_norm);
    }
    dir.write_jsonl("history.jsonl", &state.history)?;
    let mut ckpt = Vec::new();
    state.encoder.write_checkpoint(&mut ckpt).context(|| "checkpoint".into())?;
    dir.write("encoder.bin", &ckpt)?;
    Ok(m)
}

#[derive(Serialize)]
struct SweepRow {
    lambda: f64,
    batch_b: usize,
    epoch: usize,
    total: f64,
    centroid_term: f64,
    compression_term: f64,
    monitor_manifold_nuclear_norm: f64,
    monitor_centroid_similarity: f64,
}

fn sweep_rows(state: &TrainState, training: &TrainConfig) -> Vec<SweepRow> {
    state
        .history
        .iter()
        .map(|h| SweepRow {
            lambda: training.lambda,
            batch_b: training.batch_b,
            epoch: h.epoch,
            total: h.loss.total,
            centroid_term: h.loss.centroid_term,
            compression_term: h.loss.compression_term,
            monitor_manifold_nuclear_norm: h.monitor.manifold_nuclear_norm_mean,
            monitor_centroid_similarity: h.monitor.centroid_similarity_mean,
        })
        .collect()
}

fn lambda_sweep(cfg: &ExperimentConfig, dir: &mut RunDir) -> CliResult<Metrics> {
    let prep = prepare(cfg)?;
    let mut m = Metrics::new();
    let mut rows = Vec::new();
    for &lambda in &cfg.sweep.lambdas {
        let training = TrainConfig { lambda, ..cfg.training.clone() };
        let state = prep.train(&training)?;
        m.insert(format!("probe_acc_lambda_{lambda}"), prep.probe(&state.encoder, cfg)?.1);
        if let Some(last) = state.history.last() {
            m.insert(format!("compression_term_last_lambda_{lambda}"), last.loss.compression_term);
            m.insert(format!("manifold_nuclear_norm_last_lambda_{lambda}"), last.monitor.manifold_nuclear_norm_mean);
        }
        rows.extend(sweep_rows(&state, &training));
    }
    dir.write_jsonl("lambda_sweep.jsonl", &rows)?;
    Ok(m)
}

fn batch_sweep(cfg: &ExperimentConfig, dir: &mut RunDir) -> CliResult<Metrics> {
    let prep = prepare(cfg)?;
    let mut m = Metrics::new();
    let mut rows = Vec::new();
    for &batch_b in &cfg.sweep.batch_sizes {
        let training = TrainConfig { batch_b, ..cfg.training.clone() };
        let state = prep.train(&training)?;
        m.insert(format!("probe_acc_b_{batch_b}"), prep.probe(&state.encoder, cfg)?.1);
        m.insert(format!("knn_acc_b_{batch_b}"), prep.knn(&state.encoder, cfg.analysis.knn_k)?);
        rows.extend(sweep_rows(&state, &training));
    }
    dir.write_jsonl("batch_sweep.jsonl", &rows)?;
    Ok(m)
}

fn capacity_layers(cfg: &ExperimentConfig, dir: &mut RunDir) -> CliResult<Metrics> {
    let prep = prepare(cfg)?;
    let state = prep.train(&cfg.training)?;
    let idx = prep.analysis_indices(cfg.analysis.scenes_per_class);
    let k = cfg.analysis.manifold_views;
    let views = augmented_views(&prep.dataset, &idx, k, &cfg.training.augmentation, &mut prep.rng.derive(LAYER_VIEW_STREAM));
    let labels: Vec<usize> = idx.iter().map(|&i| prep.dataset.labels[i]).collect();
    let lcfg = LayerwiseConfig { n_samples: cfg.analysis.capacity_samples, kappa: cfg.analysis.kappa, max_dim: cfg.analysis.max_analysis_dim };
    let mut m = Metrics::new();
    for (tag, enc) in [("untrained", &prep.encoder), ("trained", &state.encoder)] {
        let layers = layer_manifolds(enc, &views, k, &labels).context(|| format!("{tag} layer manifolds"))?;
        let reports = layerwise_capacity(&layers, &lcfg, &prep.rng.derive(CAPACITY_STREAM)).context(|| format!("{tag} capacity"))?;
        for r in &reports {
            m.insert(format!("alpha_{tag}_{}", r.layer), r.report.alpha);
            m.insert(format!("alpha_std_error_{tag}_{}", r.layer), r.report.std_error);
            let mean_field: Vec<_> = r.report.per_manifold.iter().filter_map(|p| p.mean_field).collect();
            if !mean_field.is_empty() {
                let n = mean_field.len() as f64;
                m.insert(format!("radius_{tag}_{}", r.layer), mean_field.iter().map(|g| g.radius).sum::<f64>() / n);
                m.insert(format!("dimension_{tag}_{}", r.layer), mean_field.iter().map(|g| g.dimension).sum::<f64>() / n);
            }
        }
        dir.write_json(&format!("capacity_{tag}.json"), &reports)?;
    }
    Ok(m)
}

fn coherence(cfg: &ExperimentConfig, dir: &mut RunDir) -> CliResult<Metrics> {
    let prep = prepare(cfg)?;
    let state = prep.train(&cfg.training)?;
    let ccfg = CoherenceConfig {
        classes: (0..prep.dataset.n_classes()).collect(),
        batches_per_class: cfg.analysis.coherence_batches_per_class,
        batch_b: cfg.analysis.coherence_batch_b,
        views_k: cfg.analysis.coherence_views_k,
        lambda: cfg.training.lambda,
        augmentation: cfg.training.augmentation.clone(),
    };
    let groups = [ParamGroup::All, ParamGroup::FirstLayer, ParamGroup::LastLayer];
    let mut m = Metrics::new();
    for (tag, enc) in [("untrained", &prep.encoder), ("trained", &state.encoder)] {
        let dists = gradient_coherence(enc, &prep.dataset, &ccfg, &groups, &mut prep.rng.derive(COHERENCE_STREAM))
            .context(|| format!("{tag} gradient coherence"))?;
        summarize(&mut m, tag, &dists);
        dir.write_json(&format!("coherence_{tag}.json"), &dists)?;
    }
    Ok(m)
}

fn summarize(m: &mut Metrics, tag: &str, dists: &[SimilarityDistributions]) {
    for d in dists {
        m.insert(format!("{}_within_{tag}", d.metric), d.mean_within());
        m.insert(format!("{}_across_{tag}", d.metric), d.mean_across());
        m.insert(format!("{}_excluded_{tag}", d.metric), d.excluded as f64);
    }
}

fn subspace_alignment(cfg: &ExperimentConfig, dir: &mut RunDir) -> CliResult<Metrics> {
    let prep = prepare(cfg)?;
    let state = prep.train(&cfg.training)?;
    let idx = prep.analysis_indices(cfg.analysis.scenes_per_class);
    let (k, aug) = (cfg.analysis.manifold_views, &cfg.training.augmentation);
    let raw = augmentation_manifolds(None, &prep.dataset, &idx, k, aug, &mut prep.rng.derive(MANIFOLD_STREAM))
        .context(|| "input manifolds".into())?;
    let feats = augmentation_manifolds(Some(&state.encoder), &prep.dataset, &idx, k, aug, &mut prep.rng.derive(MANIFOLD_STREAM))
        .context(|| "feature manifolds".into())?;
    let input = vec![
        centroid_similarity_stats(&raw, Centering::GlobalMean).context(|| "input centroid similarity".into())?,
        subspace_angle_stats(&raw, None).context(|| "input subspace angles".into())?,
        shared_variance_stats(&raw, None).context(|| "input shared variance".into())?,
    ];
    let trained = vec![
        centroid_similarity_stats(&feats, Centering::None).context(|| "feature centroid similarity".into())?,
        subspace_angle_stats(&feats, None).context(|| "feature subspace angles".into())?,
        shared_variance_stats(&feats, None).context(|| "feature shared variance".into())?,
    ];
    let mut m = Metrics::new();
    summarize(&mut m, "input", &input);
    summarize(&mut m, "trained", &trained);
    dir.write_json("similarity_input.json", &input)?;
    dir.write_json("similarity_trained.json", &trained)?;
    Ok(m)
}

fn robustness(cfg: &ExperimentConfig, dir: &mut RunDir) -> CliResult<Metrics> {
    let prep = prepare(cfg)?;
    let state = prep.train(&cfg.training)?;
    let (probe, clean) = prep.probe(&state.encoder, cfg)?;
    let a = &cfg.analysis;
    let stream = prep.rng.derive(ATTACK_STREAM);
    let (x, y) = (&prep.test.scenes, &prep.test.labels);
    let curve = robustness_curve(&state.encoder, &probe, x, y, &a.epsilons, a.attack_iterations, &stream.derive(0))
        .context(|| "robustness curve".into())?;
    let eps = *a.epsilons.last().expect("validated non-empty");
    let sweep = iteration_sweep(&state.encoder, &probe, x, y, eps, &a.iteration_grid, &stream.derive(1))
        .context(|| "iteration sweep".into())?;
    let mut m = Metrics::new();
    m.insert("clean_acc".into(), clean);
    for p in &curve {
        m.insert(format!("robust_acc_eps_{}", p.epsilon), p.robust_acc);
    }
    for p in &sweep {
        m.insert(format!("robust_acc_iters_{}", p.iterations), p.robust_acc);
    }
    for (name, points) in [("robustness.csv", &curve), ("iterations.csv", &sweep)] {
        let mut buf = Vec::new();
        write_robustness_csv(points, &mut buf).context(|| name.into())?;
        dir.write(name, &buf)?;
    }
    Ok(m)
}

#[derive(Serialize)]
struct TheoremReport {
    lemma_instances: usize,
    lemma_max_gap: f64,
    identity_instances: usize,
    identity_max_gap: f64,
    optimality: mmcr::spectral::OptimalityReport,
}

fn theorem_verify(cfg: &ExperimentConfig, dir: &mut RunDir) -> CliResult<Metrics> {
    let t = &cfg.theorem;
    let root = RngStream::new(cfg.seed).derive(THEOREM_STREAM);
    let mut rng = root.derive(0);
    let size = t.n * t.k;
    // the padded width must stay strictly below N
    let lemma_d = t.d.min(size.saturating_sub(1)).max(1);
    let mut lemma_max_gap = 0.0_f64;
    for _ in 0..t.lemma_instances {
        let a: Matrix = rng.gaussian_matrix(size, size);
        let b: Matrix = rng.gaussian_matrix(size, lemma_d);
        let (plain, padded) = zero_pad_nuclear_invariance(&a, &b).context(|| "zero padding".into())?;
        lemma_max_gap = lemma_max_gap.max((plain - padded).abs());
    }
    let graph = build_graph::<f64>(t.n, t.k).context(|| "graph".into())?;
    let mut identity_max_gap = 0.0_f64;
    for _ in 0..t.lemma_instances {
        let raw = ManifoldBatch::new(t.n, t.k, t.d, rng.gaussian_vec(size * t.d)).context(|| "batch".into())?;
        let batch = sphere_normalize(&raw).context(|| "normalize".into())?;
        let z = EmbeddingMatrix::from_batch(&batch).context(|| "embedding".into())?;
        let lhs = graph_loss(&graph, &z).context(|| "graph loss".into())?;
        let rhs = -(t.k as f64).sqrt() * nuclear_norm(&centroids(&batch).c).context(|| "centroid norm".into())?;
        identity_max_gap = identity_max_gap.max((lhs - rhs).abs());
    }
    let optimality = verify_optimality(&graph, t.d, t.trials, &root.derive(1)).context(|| "optimality".into())?;
    let mut m = Metrics::new();
    m.insert("lemma_max_gap".into(), lemma_max_gap);
    m.insert("identity_max_gap".into(), identity_max_gap);
    m.insert("optimality_violations".into(), optimality.violations() as f64);
    m.insert("best_unit_row_gap".into(), optimality.best_unit_row_gap);
    let report = TheoremReport { lemma_instances: t.lemma_instances, lemma_max_gap, identity_instances: t.lemma_instances, identity_max_gap, optimality };
    dir.write_json("theorem.json", &report)?;
    Ok(m)
}

fn bench(cfg: &ExperimentConfig, dir: &mut RunDir) -> CliResult<Metrics> {
    let report = bench_loss_scaling(&cfg.bench, &RngStream::new(cfg.seed).derive(BENCH_STREAM))?;
    let mut m = Metrics::new();
    if let Some(e) = report.b_exponent {
        m.insert("b_exponent".into(), e);
    }
    if let Some(e) = report.d_exponent {
        m.insert("d_exponent".into(), e);
    }
    m.insert("k_spread_max".into(), report.k_spread.iter().map(|s| s.ratio).fold(1.0, f64::max));
    dir.write_json("bench.json", &report)?;
    Ok(m)
}
