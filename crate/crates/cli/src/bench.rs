//! Wall-clock scaling of the loss evaluation.
//!
//! Only the objective on already-normalized views is timed; no encoder pass is
//! involved. Each timing sample repeats the evaluation until it covers at least
//! [`MIN_SAMPLE_SECS`] so that short calls are not dominated by timer resolution.

use std::time::Instant;

use serde::Serialize;

use mmcr::objective::{mmcr_objective, sphere_normalize};
use mmcr::{ManifoldBatch, RngStream};

use crate::config::BenchConfig;
use crate::error::{CliError, CliResult, Context};

pub const MIN_SAMPLE_SECS: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchCell {
    pub b: usize,
    pub d: usize,
    pub k: usize,
    /// Median seconds per loss evaluation.
    pub median_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSpread {
    pub b: usize,
    pub d: usize,
    /// Slowest over fastest median across the view counts.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub cells: Vec<BenchCell>,
    pub k_spread: Vec<KSpread>,
    /// Log-log slope of time against `B` over cells with `B < d`, averaged over `d`.
    pub b_exponent: Option<f64>,
    /// Log-log slope of time against `d` over cells with `d < B`, averaged over `B`.
    pub d_exponent: Option<f64>,
    pub repeats: usize,
}

impl BenchReport {
    pub fn k_spread_at(&self, b: usize, d: usize) -> Option<f64> {
        self.k_spread.iter().find(|s| s.b == b && s.d == d).map(|s| s.ratio)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn time_loss(b: usize, d: usize, k: usize, repeats: usize, rng: &mut RngStream) -> CliResult<f64> {
    let raw = ManifoldBatch::new(b, k, d, rng.gaussian_vec(b * k * d)).context(|| format!("bench batch {b}x{k}x{d}"))?;
    let batch = sphere_normalize(&raw).context(|| "bench normalization".into())?;
    let eval = || mmcr_objective(&batch, 0.0).context(|| format!("bench loss {b}x{k}x{d}"));
    eval()?;
    let start = Instant::now();
    eval()?;
    let single = start.elapsed().as_secs_f64().max(1e-9);
    let inner = ((MIN_SAMPLE_SECS / single).ceil() as usize).max(1);
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        for _ in 0..inner {
            std::hint::black_box(eval()?);
        }
        samples.push(start.elapsed().as_secs_f64() / inner as f64);
    }
    Ok(median(samples))
}

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().map(|&(a, t)| (a.ln(), t.ln())).unzip();
    Some(mmcr::stats::linear_fit(&x, &y).0)
}

pub fn bench_loss_scaling(cfg: &BenchConfig, rng: &RngStream) -> CliResult<BenchReport> {
    if cfg.b_grid.is_empty() || cfg.d_grid.is_empty() || cfg.k_grid.is_empty() || cfg.repeats == 0 {
        return Err(CliError::Config { path: "bench".into(), message: "grids and repeats must be non-empty".into() });
    }
    let mut cells = Vec::new();
    let mut stream = rng.derive(0);
    for &d in &cfg.d_grid {
        for &b in &cfg.b_grid {
            for &k in &cfg.k_grid {
                cells.push(BenchCell { b, d, k, median_secs: time_loss(b, d, k, cfg.repeats, &mut stream)? });
            }
        }
    }
    // geometric mean over K per (B, d)
    let per_bd = |b: usize, d: usize| -> f64 {
        let ts: Vec<f64> = cells.iter().filter(|c| c.b == b && c.d == d).map(|c| c.median_secs.ln()).collect();
        (ts.iter().sum::<f64>() / ts.len() as f64).exp()
    };
    let k_spread = cfg
        .d_grid
        .iter()
        .flat_map(|&d| cfg.b_grid.iter().map(move |&b| (b, d)))
        .map(|(b, d)| {
            let ts: Vec<f64> = cells.iter().filter(|c| c.b == b && c.d == d).map(|c| c.median_secs).collect();
            let max = ts.iter().copied().fold(f64::MIN, f64::max);
            let min = ts.iter().copied().fold(f64::MAX, f64::min);
            KSpread { b, d, ratio: max / min }
        })
        .collect();
    let mean_of = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let b_exponent = mean_of(
        cfg.d_grid
            .iter()
            .filter_map(|&d| slope(&cfg.b_grid.iter().filter(|&&b| b < d).map(|&b| (b as f64, per_bd(b, d))).collect::<Vec<_>>()))
            .collect(),
    );
    let d_exponent = mean_of(
        cfg.b_grid
            .iter()
            .filter_map(|&b| slope(&cfg.d_grid.iter().filter(|&&d| d < b).map(|&d| (d as f64, per_bd(b, d))).collect::<Vec<_>>()))
            .collect(),
    );
    Ok(BenchReport { cells, k_spread, b_exponent, d_exponent, repeats: cfg.repeats })
}
