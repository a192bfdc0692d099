//! Config-driven experiment runner built on the `mmcr` crate.
//!
//! A TOML config picks one [`config::Preset`]; [`experiments::run`] executes it
//! into a run directory whose files are all hashed into `manifest.json`, and
//! [`report::build_report`] summarizes many such directories.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod report;

pub use config::{ExperimentConfig, Preset};
pub use error::{CliError, CliResult};

use std::path::{Path, PathBuf};

/// Run directory for `cfg` under `output_root`: `<preset>/seed-<seed>`.
pub fn run_dir_for(cfg: &ExperimentConfig, output_root: &Path) -> PathBuf {
    output_root.join(cfg.experiment.name()).join(format!("seed-{}", cfg.seed))
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        CliError::Config { path: field, message } => CliError::Config { path: format!("{}: {field}", path.display()), message },
        other => other,
    })
}
