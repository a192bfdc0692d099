//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. Every tolerance and time budget is a named constant below.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mmcr::capacity::{bruteforce_capacity, elliptical_measures, manifold_capacity, mftma_capacity, GeometryMeasures, PointManifold};
use mmcr::evaluation::{fit_probe, pgd_attack, robustness_curve, AttackConfig, ProbeConfig};
use mmcr::geometry::{
    augmentation_manifolds, centroid_similarity_stats, gradient_coherence, shared_variance_stats, subspace_angle_stats,
    Centering, CoherenceConfig,
};
use mmcr::linalg::{singular_values, two_column_singular_values};
use mmcr::objective::{centroid_norm_sq_from_similarities, centroids, sphere_normalize};
use mmcr::trainer::{batch_gradient, Layer, MlpEncoder, ParamGroup, TrainState};
use mmcr::{ManifoldBatch, Matrix, RngStream};
use mmcr_cli::bench::bench_loss_scaling;
use mmcr_cli::config::BenchConfig;
use mmcr_cli::experiments::{prepare, run, Metrics, Prepared, COHERENCE_STREAM, MANIFOLD_STREAM};
use mmcr_cli::manifest::{RunDir, METRICS_FILE};
use mmcr_cli::{ExperimentConfig, Preset};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

// 1: gradient check
const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so exactly-zero gradients compare absolutely.
const GRAD_FLOOR: f64 = 1e-6;
const GRAD_STEP: f64 = 1e-6;
const GRAD_PARAMS: usize = 50;
const GRAD_BUDGET: Duration = Duration::from_secs(10);

// 2: closed forms
const CENTROID_IDENTITY_TOL: f64 = 1e-12;
const TWO_COLUMN_TOL: f64 = 1e-10;
const CLOSED_FORM_INSTANCES: usize = 1000;
const CLOSED_FORM_BUDGET: Duration = Duration::from_secs(5);

// 3: spectral theory
const LEMMA_TOL: f64 = 1e-10;
const GRAPH_IDENTITY_TOL: f64 = 1e-9;
const SPECTRAL_BUDGET: Duration = Duration::from_secs(60);

// 4: capacity
const POINT_CAPACITY: f64 = 2.0;
const POINT_REL_TOL: f64 = 0.10;
const SPHERE_REL_TOL: f64 = 0.15;
const CAPACITY_SAMPLES: usize = 500;
const BRUTE_FORCE_TRIALS: usize = 200;
const CAPACITY_BUDGET: Duration = Duration::from_secs(300);

// 5: elliptical geometry
const ELLIPSE_REL_TOL: f64 = 0.15;
const ISOTROPIC_REL_TOL: f64 = 0.05;
const ELLIPSE_BUDGET: Duration = Duration::from_secs(120);

// 6: learning
const TRAINED_PROBE_MIN: f64 = 0.9;
const UNTRAINED_PROBE_MAX: f64 = 0.35;
const LEARNING_BUDGET: Duration = Duration::from_secs(300);

// 7: geometry analogues
const GEOMETRY_BUDGET: Duration = Duration::from_secs(300);

// 8: attacks
const FGSM_TOL: f64 = 1e-9;
const CURVE_SLACK: f64 = 0.02;
const ATTACK_BUDGET: Duration = Duration::from_secs(120);

// 9: complexity
const K_SPREAD_TARGET: f64 = 1.5;
const B_EXPONENT_TARGET: (f64, f64) = (1.5, 2.5);
const SOFT_FACTOR: f64 = 2.0;
const BENCH_BUDGET: Duration = Duration::from_secs(120);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for (i, lambda) in [0.0, 0.05].into_iter().enumerate() {
        let mut rng = RngStream::new(100 + i as u64);
        let (b, k, d) = (6, 4, 16);
        let mut enc = MlpEncoder::new(&[12, 20, d], &mut rng).unwrap();
        let views: Matrix = rng.gaussian_matrix(b * k, 12);
        let (_, grads) = batch_gradient(&enc, &views, k, lambda).unwrap();
        let analytic = grads.flatten();
        let theta = enc.parameters();
        for p in rng.sample_indices(theta.len(), GRAD_PARAMS) {
            let mut shifted = theta.clone();
            let mut eval = |delta: f64| {
                shifted[p] = theta[p] + delta;
                enc.set_parameters(&shifted).unwrap();
                batch_gradient(&enc, &views, k, lambda).unwrap().0.total
            };
            let fd = (eval(GRAD_STEP) - eval(-GRAD_STEP)) / (2.0 * GRAD_STEP);
            let err = (fd - analytic[p]).abs() / fd.abs().max(analytic[p].abs()).max(GRAD_FLOOR);
            worst = worst.max(err);
            checks += 1;
        }
        enc.set_parameters(&theta).unwrap();
    }
    outcome(worst <= GRAD_REL_TOL, format!("max relative error {worst:.2e} over {checks} parameters (tol {GRAD_REL_TOL:e})"))
}

fn closed_forms() -> Outcome {
    let mut rng = RngStream::new(200);
    let (mut centroid_gap, mut two_col_gap): (f64, f64) = (0.0, 0.0);
    for _ in 0..CLOSED_FORM_INSTANCES {
        let (b, k, d) = (2 + rng.below(6), 1 + rng.below(8), 2 + rng.below(14));
        let batch = sphere_normalize(&ManifoldBatch::new(b, k, d, rng.gaussian_vec(b * k * d)).unwrap()).unwrap();
        let c = centroids(&batch).c;
        for j in 0..b {
            let direct: f64 = c.column(j).iter().map(|v| v * v).sum();
            centroid_gap = centroid_gap.max((direct - centroid_norm_sq_from_similarities(&batch, j)).abs());
        }
        let (c1, c2): (Vec<f64>, Vec<f64>) = (rng.gaussian_vec(d), rng.gaussian_vec(d));
        let (s1, s2) = two_column_singular_values(&c1, &c2).unwrap();
        let svd = singular_values(&Matrix::from_columns(&[c1, c2]).unwrap()).unwrap();
        two_col_gap = two_col_gap.max((s1 - svd[0]).abs()).max((s2 - svd[1]).abs());
    }
    outcome(
        centroid_gap <= CENTROID_IDENTITY_TOL && two_col_gap <= TWO_COLUMN_TOL,
        format!(
            "centroid identity gap {centroid_gap:.1e} (tol {CENTROID_IDENTITY_TOL:e}), two-column gap {two_col_gap:.1e} (tol {TWO_COLUMN_TOL:e}) over {CLOSED_FORM_INSTANCES} instances"
        ),
    )
}

fn run_preset(cfg: &ExperimentConfig) -> Metrics {
    let dir = tempfile::tempdir().unwrap();
    run(cfg, RunDir::create(dir.path()).unwrap()).unwrap();
    serde_json::from_slice(&std::fs::read(dir.path().join(METRICS_FILE)).unwrap()).unwrap()
}

fn spectral_theory() -> Outcome {
    let cfg = ExperimentConfig::preset(Preset::TheoremVerify);
    let t = &cfg.theorem;
    let m = run_preset(&cfg);
    let (lemma, identity, violations) = (m["lemma_max_gap"], m["identity_max_gap"], m["optimality_violations"]);
    outcome(
        lemma <= LEMMA_TOL && identity <= GRAPH_IDENTITY_TOL && violations == 0.0,
        format!(
            "lemma gap {lemma:.1e} over {} instances, graph identity gap {identity:.1e}, {violations} optimality violations in {} trials at n={} k={} d={}",
            t.lemma_instances, t.trials, t.n, t.k, t.d
        ),
    )
}

/// `p` spheres of intrinsic dimension `r`, centered at unit distance from the origin.
fn sphere_manifolds(p: usize, dim: usize, r: usize, m: usize, radius: f64, rng: &mut RngStream) -> Vec<PointManifold> {
    (0..p)
        .map(|_| {
            let basis = rng.orthonormal_frame(dim, r + 1);
            let mut pts = Matrix::zeros(m, dim);
            for i in 0..m {
                let u: Vec<f64> = rng.gaussian_vec(r);
                let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                for j in 0..dim {
                    pts[(i, j)] = basis[(j, r)] + (0..r).map(|k| basis[(j, k)] * u[k] * radius / n).sum::<f64>();
                }
            }
            PointManifold::new(pts, None).unwrap()
        })
        .collect()
}

fn capacity_cross_validation() -> Outcome {
    let mut rng = RngStream::new(300);
    let points: Vec<PointManifold> = (0..40).map(|_| PointManifold::new(rng.gaussian_matrix(1, 20), None).unwrap()).collect();
    let point_alpha = mftma_capacity(&points, CAPACITY_SAMPLES, 0.0, &rng.derive(1)).unwrap().alpha;
    let mut pass = rel(point_alpha, POINT_CAPACITY) <= POINT_REL_TOL;
    let mut ratios = Vec::new();
    for seed in SEEDS {
        let ms = sphere_manifolds(20, 30, 3, 16, 0.5, &mut RngStream::new(310 + seed));
        let mf = mftma_capacity(&ms, CAPACITY_SAMPLES, 0.0, &RngStream::new(320 + seed)).unwrap().alpha;
        let bf = bruteforce_capacity(&ms, BRUTE_FORCE_TRIALS, &RngStream::new(330 + seed)).unwrap().alpha;
        pass &= rel(mf, bf) <= SPHERE_REL_TOL;
        ratios.push(mf / bf);
    }
    let ratios: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    outcome(
        pass,
        format!(
            "point manifolds alpha {point_alpha:.3} vs {POINT_CAPACITY} (tol {POINT_REL_TOL}); spheres mean-field/brute-force [{}] (tol {SPHERE_REL_TOL})",
            ratios.join(", ")
        ),
    )
}

fn elliptical_consistency() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, sd) in [vec![0.2, 0.1, 0.05], vec![0.5, 0.3, 0.2, 0.1]].iter().enumerate() {
        let mut rng = RngStream::new(400 + i as u64);
        let r = sd.len();
        // cloud along the first r axes, centre one unit along axis r
        let pts = Matrix::from_fn(200, r + 5, |_, j| if j < r { sd[j] * rng.normal() } else if j == r { 1.0 } else { 0.0 });
        let cap = manifold_capacity(&PointManifold::new(pts, None).unwrap(), CAPACITY_SAMPLES, 0.0, &mut rng.derive(1)).unwrap();
        let (mf, closed, raw): (GeometryMeasures, GeometryMeasures, GeometryMeasures) =
            (cap.mean_field.unwrap(), cap.anchor_spectral.unwrap(), cap.elliptical.unwrap());
        let (r_err, d_err) = (rel(mf.radius, closed.radius), rel(mf.dimension, closed.dimension));
        pass &= r_err <= ELLIPSE_REL_TOL && d_err <= ELLIPSE_REL_TOL;
        parts.push(format!(
            "sd {sd:?}: anchor R {:.3}/{:.3} D {:.3}/{:.3} (point-cloud R {:.3} D {:.3})",
            mf.radius, closed.radius, mf.dimension, closed.dimension, raw.radius, raw.dimension
        ));
    }
    let mut rng = RngStream::new(410);
    let iso = PointManifold::new(rng.gaussian_matrix(10_000, 8), None).unwrap();
    let d_iso = elliptical_measures(&iso).unwrap().dimension;
    pass &= rel(d_iso, 8.0) <= ISOTROPIC_REL_TOL;
    parts.push(format!("isotropic R^8 D {d_iso:.3} (tol {ISOTROPIC_REL_TOL})"));
    outcome(pass, format!("{}; anchor tol {ELLIPSE_REL_TOL}", parts.join("; ")))
}

struct TrainedSeed {
    cfg: ExperimentConfig,
    prep: Prepared,
    state: TrainState,
}

fn desk_scale_learning(trained: &mut Vec<TrainedSeed>) -> Outcome {
    let (mut untrained, mut after) = (Vec::new(), Vec::new());
    let mut sim_dropped = true;
    for seed in SEEDS {
        let cfg = ExperimentConfig { seed, ..ExperimentConfig::preset(Preset::TrainBasic) };
        let prep = prepare(&cfg).unwrap();
        untrained.push(prep.probe(&prep.encoder, &cfg).unwrap().1);
        let state = prep.train(&cfg.training).unwrap();
        after.push(prep.probe(&state.encoder, &cfg).unwrap().1);
        let h = &state.history;
        sim_dropped &= h.last().unwrap().monitor.centroid_similarity_mean < h[0].monitor.centroid_similarity_mean;
        trained.push(TrainedSeed { cfg, prep, state });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mu_u, mu_t) = (mean(&untrained), mean(&after));
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        mu_t >= TRAINED_PROBE_MIN && mu_u <= UNTRAINED_PROBE_MAX && sim_dropped,
        format!(
            "mean probe accuracy trained {mu_t:.3} [{}] (min {TRAINED_PROBE_MIN}), untrained {mu_u:.3} [{}] (max {UNTRAINED_PROBE_MAX}); centroid similarity fell on every seed: {sim_dropped}",
            fmt(&after),
            fmt(&untrained)
        ),
    )
}

fn geometry_analogues(trained: &[TrainedSeed]) -> Outcome {
    let mut pass = !trained.is_empty();
    let mut tallies = [0usize; 4];
    for t in trained {
        let (cfg, prep, enc) = (&t.cfg, &t.prep, &t.state.encoder);
        let idx = prep.analysis_indices(cfg.analysis.scenes_per_class);
        let ms = augmentation_manifolds(
            Some(enc),
            &prep.dataset,
            &idx,
            cfg.analysis.manifold_views,
            &cfg.training.augmentation,
            &mut prep.rng.derive(MANIFOLD_STREAM),
        )
        .unwrap();
        let ccfg = CoherenceConfig {
            classes: (0..prep.dataset.n_classes()).collect(),
            batches_per_class: cfg.analysis.coherence_batches_per_class,
            batch_b: cfg.analysis.coherence_batch_b,
            views_k: cfg.analysis.coherence_views_k,
            lambda: cfg.training.lambda,
            augmentation: cfg.training.augmentation.clone(),
        };
        let grad = &gradient_coherence(enc, &prep.dataset, &ccfg, &[ParamGroup::All], &mut prep.rng.derive(COHERENCE_STREAM)).unwrap()[0];
        let cent = centroid_similarity_stats(&ms, Centering::None).unwrap();
        let angle = subspace_angle_stats(&ms, None).unwrap();
        let shared = shared_variance_stats(&ms, None).unwrap();
        let checks = [
            grad.mean_within() > grad.mean_across(),
            cent.mean_within() > cent.mean_across(),
            angle.mean_within() < angle.mean_across(),
            shared.mean_within() > shared.mean_across(),
        ];
        for (tally, ok) in tallies.iter_mut().zip(checks) {
            *tally += ok as usize;
            pass &= ok;
        }
    }
    let n = trained.len();
    outcome(
        pass,
        format!(
            "seeds in the expected direction: gradient coherence {}/{n}, centroid cosine {}/{n}, principal angle {}/{n}, shared variance {}/{n}",
            tallies[0], tallies[1], tallies[2], tallies[3]
        ),
    )
}

fn attack_validity(trained: &[TrainedSeed]) -> Outcome {
    let t = &trained[0];
    let (prep, enc) = (&t.prep, &t.state.encoder);
    let (probe, clean) = prep.probe(enc, &t.cfg).unwrap();
    let (x, y) = (&prep.test.scenes, &prep.test.labels);
    let mut in_ball = true;
    for (i, eps) in [0.05, 0.2, 0.4].into_iter().enumerate() {
        let adv = pgd_attack(enc, &probe, x, y, &AttackConfig::standard(eps, 10), &mut RngStream::new(500 + i as u64)).unwrap();
        in_ball &= adv.as_slice().iter().zip(x.as_slice()).all(|(a, b)| (a - b).abs() <= eps);
    }
    let eps_grid = &t.cfg.analysis.epsilons;
    let curve = robustness_curve(enc, &probe, x, y, eps_grid, t.cfg.analysis.attack_iterations, &RngStream::new(510)).unwrap();
    let zero_matches = curve[0].robust_acc == clean;
    let monotone = curve.windows(2).all(|w| w[1].robust_acc <= w[0].robust_acc + CURVE_SLACK);

    // linear pipeline: identity encoder, one unit step from the clean input is FGSM
    let mut rng = RngStream::new(520);
    let dim = 5;
    let xs = Matrix::from_fn(60, dim, |i, _| (i % 3) as f64 + 0.5 * rng.normal());
    let ys: Vec<usize> = (0..60).map(|i| i % 3).collect();
    let lin_probe = fit_probe(&xs, &ys, &ProbeConfig::default()).unwrap();
    let identity = MlpEncoder::from_layers(vec![Layer { w: Matrix::identity(dim), b: vec![0.0; dim] }]).unwrap();
    let eps = 0.25;
    let cfg = AttackConfig { epsilon: eps, step_size: eps, iterations: 1, random_start: false };
    let adv = pgd_attack(&identity, &lin_probe, &xs, &ys, &cfg, &mut rng).unwrap();
    let scores = lin_probe.scores(&xs).unwrap();
    let mut fgsm_gap: f64 = 0.0;
    for i in 0..xs.rows() {
        let row = scores.row(i);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        for j in 0..dim {
            let g: f64 = (0..row.len())
                .map(|c| (row[c].exp() / z - if c == ys[i] { 1.0 } else { 0.0 }) * lin_probe.weights[(c, j)])
                .sum();
            fgsm_gap = fgsm_gap.max((adv[(i, j)] - (xs[(i, j)] + eps * g.signum())).abs());
        }
    }
    let accs: Vec<String> = curve.iter().map(|p| format!("{:.3}", p.robust_acc)).collect();
    outcome(
        in_ball && zero_matches && monotone && fgsm_gap <= FGSM_TOL,
        format!(
            "inside the ball: {in_ball}; eps=0 equals clean {clean:.3}: {zero_matches}; curve [{}] non-increasing within {CURVE_SLACK}: {monotone}; FGSM gap {fgsm_gap:.1e} (tol {FGSM_TOL:e})",
            accs.join(" ")
        ),
    )
}

fn complexity() -> Outcome {
    let cfg = BenchConfig::default();
    let report = bench_loss_scaling(&cfg, &RngStream::new(900)).unwrap();
    let spread = report.k_spread.iter().map(|s| s.ratio).fold(1.0, f64::max);
    let Some(exp) = report.b_exponent else {
        return outcome(false, "no B < d cells in the benchmark grid".into());
    };
    let (lo, hi) = B_EXPONENT_TARGET;
    let strict = spread <= K_SPREAD_TARGET && (lo..=hi).contains(&exp);
    let soft = spread <= K_SPREAD_TARGET * SOFT_FACTOR && (lo / SOFT_FACTOR..=hi * SOFT_FACTOR).contains(&exp);
    outcome(
        soft,
        format!(
            "max time spread over K {:?}: {spread:.2}x (target {K_SPREAD_TARGET}x); B exponent {exp:.2} (target [{lo}, {hi}]); within target: {strict}, within {SOFT_FACTOR}x tolerance: {soft}",
            cfg.k_grid
        ),
    )
}

fn main() -> ExitCode {
    let mut trained = Vec::new();
    let mut all = true;
    let mut report = |n: usize, name: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let pass = o.pass && elapsed <= budget;
        all &= pass;
        println!(
            "[{}] {n} {name}: {} ({:.1} s, budget {} s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    };
    report(1, "gradient correctness", GRAD_BUDGET, &mut gradient_correctness);
    report(2, "closed-form agreement", CLOSED_FORM_BUDGET, &mut closed_forms);
    report(3, "spectral theory", SPECTRAL_BUDGET, &mut spectral_theory);
    report(4, "capacity cross-validation", CAPACITY_BUDGET, &mut capacity_cross_validation);
    report(5, "elliptical consistency", ELLIPSE_BUDGET, &mut elliptical_consistency);
    report(6, "desk-scale learning", LEARNING_BUDGET, &mut || desk_scale_learning(&mut trained));
    report(7, "geometry analogues", GEOMETRY_BUDGET, &mut || geometry_analogues(&trained));
    report(8, "attack validity", ATTACK_BUDGET, &mut || attack_validity(&trained));
    report(9, "loss complexity", BENCH_BUDGET, &mut complexity);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
