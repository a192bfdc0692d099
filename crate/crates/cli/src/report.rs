//! Aggregation of finished runs.
//!
//! A run is any directory holding a `manifest.json`. Runs are grouped by preset
//! and each scalar in their `metrics.json` is summarized across runs with a
//! Student-t 95% interval.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use mmcr::stats::{mean, sample_variance};

use crate::error::{CliError, CliResult};
use crate::experiments::Metrics;
use crate::manifest::{sha256_hex, RunManifest, MANIFEST_FILE, METRICS_FILE};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub experiment: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Half-width of the two-sided 95% interval; `None` with a single run.
    pub ci95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub root: PathBuf,
    pub runs: usize,
    pub summaries: Vec<MetricSummary>,
    /// Runs that were skipped or whose files no longer match their manifest.
    pub problems: Vec<String>,
}

/// Half-width of the 95% interval for the mean of `values`.
pub fn ci95_half_width(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?.inverse_cdf(0.975);
    Some(t * (sample_variance(values) / n as f64).sqrt())
}

fn find_manifests(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_manifests(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

fn load_run(manifest_path: &Path, problems: &mut Vec<String>) -> Option<(RunManifest, Metrics)> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: RunManifest = match fs::read(manifest_path).map(|b| serde_json::from_slice(&b)) {
        Ok(Ok(m)) => m,
        Ok(Err(e)) => {
            problems.push(format!("{}: unreadable manifest: {e}", manifest_path.display()));
            return None;
        }
        Err(e) => {
            problems.push(format!("{}: {e}", manifest_path.display()));
            return None;
        }
    };
    for f in &manifest.files {
        match fs::read(dir.join(&f.path)) {
            Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
            Ok(_) => problems.push(format!("{}: {} does not match its recorded hash", dir.display(), f.path)),
            Err(e) => problems.push(format!("{}: {}: {e}", dir.display(), f.path)),
        }
    }
    let metrics = fs::read(dir.join(METRICS_FILE)).ok().and_then(|b| serde_json::from_slice::<Metrics>(&b).ok());
    match metrics {
        Some(m) => Some((manifest, m)),
        None => {
            problems.push(format!("{}: missing or malformed {METRICS_FILE}", dir.display()));
            None
        }
    }
}

/// Scans `root` recursively and summarizes every run found.
pub fn build_report(root: &Path) -> CliResult<Report> {
    let mut manifests = Vec::new();
    find_manifests(root, &mut manifests)?;
    if manifests.is_empty() {
        return Err(CliError::Report(format!("no runs (no {MANIFEST_FILE}) under {}", root.display())));
    }
    let mut problems = Vec::new();
    let mut grouped: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut runs = 0;
    for path in &manifests {
        let Some((manifest, metrics)) = load_run(path, &mut problems) else { continue };
        runs += 1;
        for (name, value) in metrics {
            if value.is_finite() {
                grouped.entry((manifest.experiment.clone(), name)).or_default().push(value);
            } else {
                problems.push(format!("{}: metric {name} is not finite", path.display()));
            }
        }
    }
    let summaries = grouped
        .into_iter()
        .map(|((experiment, metric), values)| MetricSummary {
            experiment,
            metric,
            n: values.len(),
            mean: mean(&values),
            std: if values.len() > 1 { sample_variance(&values).sqrt() } else { 0.0 },
            ci95: ci95_half_width(&values),
        })
        .collect();
    Ok(Report { root: root.to_path_buf(), runs, summaries, problems })
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,metric,n,mean,std,ci95\n");
        for s in &self.summaries {
            let ci = s.ci95.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{},{}\n", s.experiment, s.metric, s.n, s.mean, s.std, ci));
        }
        out
    }

    /// Writes `report.json` and `report.csv` next to the runs.
    pub fn write(&self) -> CliResult<()> {
        let json = self.root.join(REPORT_JSON);
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| CliError::io(&json, e))?;
        let csv = self.root.join(REPORT_CSV);
        fs::write(&csv, self.to_csv()).map_err(|e| CliError::io(&csv, e))
    }
}
