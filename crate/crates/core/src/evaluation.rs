//! Downstream evaluation of frozen features: linear probe, kNN monitor and
//! ℓ∞ PGD attacks through encoder and probe.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng::RngStream;
use crate::trainer::MlpEncoder;
use crate::Matrix;

pub const DEFAULT_PROBE_EPOCHS: usize = 200;
pub const DEFAULT_PROBE_LR: f64 = 0.5;
pub const DEFAULT_KNN_K: usize = 20;
pub const DEFAULT_ATTACK_ITERATIONS: usize = 20;
const STEP_FACTOR: f64 = 2.5;

/// Multinomial logistic regression on centered features divided by one global
/// scale. Scores are `W·(x − μ)/s + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// `n_classes × d`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: f64,
    /// Mean training cross-entropy before each epoch, then after the last one.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: DEFAULT_PROBE_EPOCHS, lr: DEFAULT_PROBE_LR }
    }
}

impl LinearProbe {
    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    fn standardize(&self, features: &Matrix) -> Matrix {
        Matrix::from_fn(features.rows(), features.cols(), |i, j| {
            (features[(i, j)] - self.feature_mean[j]) / self.feature_scale
        })
    }

    pub fn scores(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.weights.cols() {
            return Err(Error::contract(format!("probe expects width {}, got {}", self.weights.cols(), features.cols())));
        }
        let mut s = self.standardize(features).matmul_t(&self.weights)?;
        for i in 0..s.rows() {
            s.row_mut(i).iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        }
        Ok(s)
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let s = self.scores(features)?;
        Ok((0..s.rows()).map(|i| argmax(s.row(i))).collect())
    }

    pub fn accuracy(&self, features: &Matrix, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(features)?;
        Ok(accuracy_of(&pred, labels))
    }

    /// Mean cross-entropy and its gradient with respect to the features.
    pub fn loss_and_feature_grad(&self, features: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
        let scores = self.scores(features)?;
        let (loss, d_scores) = cross_entropy(&scores, labels)?;
        let d_feat = d_scores.matmul(&self.weights)?.scale(1.0 / self.feature_scale);
        Ok((loss, d_feat))
    }
}

fn argmax(row: &[f64]) -> usize {
    // first maximal index, so ties go to the smaller class
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

fn accuracy_of(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len().max(1) as f64
}

/// Mean cross-entropy of row-wise logits and `∂loss/∂scores`.
fn cross_entropy(scores: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = scores.rows();
    if labels.len() != n {
        return Err(Error::contract(format!("{} labels for {n} rows", labels.len())));
    }
    let mut grad = Matrix::zeros(n, scores.cols());
    let mut loss = 0.0;
    for i in 0..n {
        let row = scores.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        loss += z.ln() + m - row[labels[i]];
        for (g, v) in grad.row_mut(i).iter_mut().zip(row) {
            *g = (v - m).exp() / z / n as f64;
        }
        grad[(i, labels[i])] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Full-batch gradient descent from zero weights.
pub fn fit_probe(features: &Matrix, labels: &[usize], cfg: &ProbeConfig) -> Result<LinearProbe> {
    let (n, d) = features.shape();
    if labels.len() != n || n == 0 {
        return Err(Error::contract(format!("{} labels for {n} feature rows", labels.len())));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; n_classes];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::contract("probe needs at least two classes present"));
    }
    let feature_mean: Vec<f64> = (0..d).map(|j| features.column(j).iter().sum::<f64>() / n as f64).collect();
    let var: f64 = (0..n)
        .map(|i| features.row(i).iter().zip(&feature_mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / (n * d) as f64;
    let feature_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let mut probe = LinearProbe {
        weights: Matrix::zeros(n_classes, d),
        bias: vec![0.0; n_classes],
        feature_mean,
        feature_scale,
        loss_history: Vec::with_capacity(cfg.epochs + 1),
    };
    let x = probe.standardize(features);
    for _ in 0..cfg.epochs {
        let (loss, d_scores) = cross_entropy(&probe.scores(features)?, labels)?;
        probe.loss_history.push(loss);
        let gw = d_scores.t_matmul(&x)?;
        probe.weights = probe.weights.sub(&gw.scale(cfg.lr))?;
        for c in 0..n_classes {
            let gb: f64 = (0..n).map(|i| d_scores[(i, c)]).sum();
            probe.bias[c] -= cfg.lr * gb;
        }
    }
    let (final_loss, _) = cross_entropy(&probe.scores(features)?, labels)?;
    probe.loss_history.push(final_loss);
    Ok(probe)
}

/// Majority vote of the `k` nearest training points by cosine similarity.
/// Neighbour ties go to the lower training index, vote ties to the smaller class.
pub fn knn_monitor(
    train_features: &Matrix,
    train_labels: &[usize],
    test_features: &Matrix,
    test_labels: &[usize],
    k: usize,
) -> Result<f64> {
    if k == 0 || k > train_features.rows() {
        return Err(Error::contract(format!("k = {k} with {} training points", train_features.rows())));
    }
    if train_features.cols() != test_features.cols() || test_labels.len() != test_features.rows() {
        return Err(Error::contract("kNN train/test shapes disagree"));
    }
    let unit = |m: &Matrix| -> Vec<Vec<f64>> {
        (0..m.rows())
            .map(|i| {
                let r = m.row(i);
                let n = norm(r);
                r.iter().map(|v| if n > 0.0 { v / n } else { 0.0 }).collect()
            })
            .collect()
    };
    let train = unit(train_features);
    let n_classes = train_labels.iter().chain(test_labels).max().map_or(0, |m| m + 1);
    let pred: Vec<usize> = unit(test_features)
        .iter()
        .map(|q| {
            let mut sims: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, t)| (dot(q, t), i)).collect();
            sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![0usize; n_classes];
            sims[..k].iter().for_each(|&(_, i)| votes[train_labels[i]] += 1);
            votes.iter().enumerate().fold(0, |best, (c, &v)| if v > votes[best] { c } else { best })
        })
        .collect();
    Ok(accuracy_of(&pred, test_labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub random_start: bool,
}

impl AttackConfig {
    /// `iterations` steps of size `2.5·ε/iterations` from a random start.
    pub fn standard(epsilon: f64, iterations: usize) -> Self {
        Self { epsilon, step_size: STEP_FACTOR * epsilon / iterations.max(1) as f64, iterations, random_start: true }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || self.iterations == 0 || !(self.step_size >= 0.0) {
            return Err(Error::Config(format!("invalid attack settings {self:?}")));
        }
        Ok(())
    }
}

/// Cross-entropy of `probe ∘ encoder` and its gradient with respect to the inputs.
pub fn input_loss_gradient(encoder: &MlpEncoder, probe: &LinearProbe, x: &Matrix, y: &[usize]) -> Result<(f64, Matrix)> {
    let (features, cache) = encoder.forward(x)?;
    let (loss, d_feat) = probe.loss_and_feature_grad(&features, y)?;
    Ok((loss, encoder.input_gradient(&cache, &d_feat)?))
}

/// Projected sign-gradient ascent on the cross-entropy inside the ℓ∞ ball of
/// radius `ε` around every row of `x`.
pub fn pgd_attack(
    encoder: &MlpEncoder,
    probe: &LinearProbe,
    x: &Matrix,
    y: &[usize],
    cfg: &AttackConfig,
    rng: &mut RngStream,
) -> Result<Matrix> {
    cfg.validate()?;
    if cfg.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let eps = cfg.epsilon;
    let mut adv = x.clone();
    if cfg.random_start {
        for (a, &x0) in adv.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *a = project(x0 + rng.uniform_range(-eps, eps), x0, eps);
        }
    }
    for _ in 0..cfg.iterations {
        let (_, grad) = input_loss_gradient(encoder, probe, &adv, y)?;
        for ((a, &g), &x0) in adv.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(x.as_slice()) {
            let step = if g > 0.0 {
                cfg.step_size
            } else if g < 0.0 {
                -cfg.step_size
            } else {
                0.0
            };
            *a = project(*a + step, x0, eps);
        }
    }
    Ok(adv)
}

/// Nearest point of `[x0 − ε, x0 + ε]`, adjusted so that `|a − x0| ≤ ε` holds
/// after rounding as well.
fn project(a: f64, x0: f64, eps: f64) -> f64 {
    let mut p = a.clamp(x0 - eps, x0 + eps);
    while (p - x0).abs() > eps {
        p = if p > x0 { p.next_down() } else { p.next_up() };
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    pub epsilon: f64,
    pub iterations: usize,
    pub n: usize,
    pub clean_acc: f64,
    pub robust_acc: f64,
    pub seed: u64,
}

/// Robust accuracy along an ascending ε grid starting at 0. Each grid point uses
/// its own derived random stream.
pub fn robustness_curve(
    encoder: &MlpEncoder,
    probe: &LinearProbe,
    x: &Matrix,
    y: &[usize],
    epsilons: &[f64],
    iterations: usize,
    rng: &RngStream,
) -> Result<Vec<RobustnessPoint>> {
    if epsilons.first() != Some(&0.0) || epsilons.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config(format!("epsilon grid must ascend from 0, got {epsilons:?}")));
    }
    let clean_acc = probe.accuracy(&encoder.encode(x)?, y)?;
    epsilons
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let mut stream = rng.derive(i as u64);
            let adv = pgd_attack(encoder, probe, x, y, &AttackConfig::standard(eps, iterations), &mut stream)?;
            let robust_acc = probe.accuracy(&encoder.encode(&adv)?, y)?;
            Ok(RobustnessPoint { epsilon: eps, iterations, n: y.len(), clean_acc, robust_acc, seed: stream.seed() })
        })
        .collect()
}

/// Robust accuracy at fixed ε as the attack iteration count varies.
pub fn iteration_sweep(
    encoder: &MlpEncoder,
    probe: &LinearProbe,
    x: &Matrix,
    y: &[usize],
    epsilon: f64,
    iteration_grid: &[usize],
    rng: &RngStream,
) -> Result<Vec<RobustnessPoint>> {
    let clean_acc = probe.accuracy(&encoder.encode(x)?, y)?;
    iteration_grid
        .iter()
        .enumerate()
        .map(|(i, &iterations)| {
            let mut stream = rng.derive(i as u64);
            let adv = pgd_attack(encoder, probe, x, y, &AttackConfig::standard(epsilon, iterations), &mut stream)?;
            let robust_acc = probe.accuracy(&encoder.encode(&adv)?, y)?;
            Ok(RobustnessPoint { epsilon, iterations, n: y.len(), clean_acc, robust_acc, seed: stream.seed() })
        })
        .collect()
}

pub fn write_robustness_csv<W: Write>(points: &[RobustnessPoint], mut w: W) -> Result<()> {
    writeln!(w, "epsilon,iterations,n,clean_acc,robust_acc,seed")?;
    for p in points {
        writeln!(w, "{},{},{},{},{},{}", p.epsilon, p.iterations, p.n, p.clean_acc, p.robust_acc, p.seed)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Layer;

    fn blobs(seed: u64, n: usize, sep: f64) -> (Matrix, Vec<usize>) {
        let mut rng = RngStream::new(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let shift = if c == 0 { sep } else { -sep };
            rows.push(vec![shift + 0.3 * rng.normal(), 0.3 * rng.normal(), 0.3 * rng.normal()]);
            labels.push(c);
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_blobs_are_fit_exactly() {
        let (x, y) = blobs(0, 40, 2.0);
        let probe = fit_probe(&x, &y, &ProbeConfig::default()).unwrap();
        assert_eq!(probe.accuracy(&x, &y).unwrap(), 1.0);
        assert_eq!(knn_monitor(&x, &y, &x, &y, 5).unwrap(), 1.0);
    }

    #[test]
    fn small_lr_loss_is_monotone() {
        let (x, y) = blobs(1, 60, 0.3);
        let probe = fit_probe(&x, &y, &ProbeConfig { epochs: 100, lr: 0.1 }).unwrap();
        assert!(probe.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-6));
        assert_eq!(probe.loss_history.len(), 101);
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = blobs(2, 10, 1.0);
        assert!(matches!(fit_probe(&x, &[1; 10], &ProbeConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn knn_self_match_and_vote_ties() {
        let train = Matrix::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap();
        let labels = [2, 0, 1];
        let q = Matrix::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(knn_monitor(&train, &labels, &q, &[0], 1).unwrap(), 1.0);
        // query equidistant to labels 2 and 1 with k = 2 → tie → class 1
        let q = Matrix::new(1, 2, vec![0.0, -1.0]).unwrap();
        assert_eq!(knn_monitor(&train, &labels, &q, &[1], 2).unwrap(), 1.0);
    }

    fn linear_encoder(d: usize) -> MlpEncoder {
        MlpEncoder::from_layers(vec![Layer { w: Matrix::identity(d), b: vec![0.0; d] }]).unwrap()
    }

    #[test]
    fn zero_budget_returns_input() {
        let (x, y) = blobs(3, 20, 1.0);
        let probe = fit_probe(&x, &y, &ProbeConfig::default()).unwrap();
        let adv = pgd_attack(&linear_encoder(3), &probe, &x, &y, &AttackConfig::standard(0.0, 20), &mut RngStream::new(0))
            .unwrap();
        assert_eq!(adv, x);
    }

    #[test]
    fn one_step_equals_fgsm_on_linear_pipeline() {
        let (x, y) = blobs(4, 20, 1.0);
        let probe = fit_probe(&x, &y, &ProbeConfig::default()).unwrap();
        let enc = linear_encoder(3);
        let eps = 0.3;
        let cfg = AttackConfig { epsilon: eps, step_size: eps, iterations: 1, random_start: false };
        let adv = pgd_attack(&enc, &probe, &x, &y, &cfg, &mut RngStream::new(0)).unwrap();
        // FGSM: ∇ₓ CE = Wᵀ(p − e_y)/s; sign taken per coordinate
        let scores = probe.scores(&x).unwrap();
        for i in 0..x.rows() {
            let row = scores.row(i);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                let g: f64 = (0..2)
                    .map(|c| (row[c].exp() / z - if c == y[i] { 1.0 } else { 0.0 }) * probe.weights[(c, j)])
                    .sum();
                let expected = x[(i, j)] + eps * g.signum();
                assert!((adv[(i, j)] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projection_holds_after_rounding() {
        let mut rng = RngStream::new(9);
        for _ in 0..10_000 {
            let x0 = 10.0 * rng.normal();
            let eps = rng.uniform_range(1e-3, 1.0);
            let p = project(x0 + 3.0 * rng.normal(), x0, eps);
            assert!((p - x0).abs() <= eps);
        }
    }

    #[test]
    fn large_budget_breaks_linear_model() {
        let (x, y) = blobs(5, 40, 1.0);
        let probe = fit_probe(&x, &y, &ProbeConfig::default()).unwrap();
        let enc = linear_encoder(3);
        let adv = pgd_attack(&enc, &probe, &x, &y, &AttackConfig::standard(3.0, 20), &mut RngStream::new(1)).unwrap();
        assert!(probe.accuracy(&adv, &y).unwrap() <= 0.5);
        let dev = adv.sub(&x).unwrap().max_abs();
        assert!(dev <= 3.0);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(6);
        let enc = MlpEncoder::new(&[4, 6, 3], &mut rng).unwrap();
        let x: Matrix = rng.gaussian_matrix(5, 4);
        let y = vec![0, 1, 2, 1, 0];
        let probe = fit_probe(&enc.encode(&x).unwrap(), &y, &ProbeConfig { epochs: 20, lr: 0.5 }).unwrap();
        let (_, g) = input_loss_gradient(&enc, &probe, &x, &y).unwrap();
        let h = 1e-6;
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let up = input_loss_gradient(&enc, &probe, &xp, &y).unwrap().0;
            xp.as_mut_slice()[i] -= 2.0 * h;
            let down = input_loss_gradient(&enc, &probe, &xp, &y).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g.as_slice()[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "{i}: {fd} vs {}", g.as_slice()[i]);
        }
    }

    #[test]
    fn curve_starts_clean_and_is_reproducible() {
        let (x, y) = blobs(7, 30, 1.0);
        let probe = fit_probe(&x, &y, &ProbeConfig::default()).unwrap();
        let enc = linear_encoder(3);
        let rng = RngStream::new(8);
        let a = robustness_curve(&enc, &probe, &x, &y, &[0.0, 0.2, 0.5], 10, &rng).unwrap();
        let b = robustness_curve(&enc, &probe, &x, &y, &[0.0, 0.2, 0.5], 10, &rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].robust_acc, a[0].clean_acc);
        assert!(robustness_curve(&enc, &probe, &x, &y, &[0.1], 10, &rng).is_err());
        let mut csv = Vec::new();
        write_robustness_csv(&a, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
    }
}
