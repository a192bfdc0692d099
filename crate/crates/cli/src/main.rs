use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmcr_cli::experiments::run;
use mmcr_cli::manifest::RunDir;
use mmcr_cli::report::build_report;
use mmcr_cli::{load_config, run_dir_for, CliError, CliResult, ExperimentConfig, Preset};

#[derive(Parser)]
#[command(name = "mmcr", version, about = "Train and analyse manifold-capacity encoders")]
struct Cli {
    /// Worker threads for parallel analysis (defaults to all cores).
    #[arg(long, global = true, env = "MMCR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the preset named in a TOML config.
    Run {
        config: PathBuf,
        /// Overrides the config's output_dir.
        #[arg(long, env = "MMCR_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a config as a loss-scaling benchmark regardless of its preset.
    Bench {
        config: PathBuf,
        #[arg(long, env = "MMCR_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
    /// Summarize every run found under a directory.
    Report { dir: PathBuf },
    /// Print a preset's default config as TOML.
    ShowPreset { preset: String },
}

fn execute(cfg: ExperimentConfig, output_dir: Option<PathBuf>) -> CliResult<()> {
    let root = output_dir.unwrap_or_else(|| cfg.output_dir.clone());
    let dir = run_dir_for(&cfg, &root);
    let manifest = run(&cfg, RunDir::create(&dir)?)?;
    println!("{} seed {} -> {} ({} files)", manifest.experiment, manifest.seed, dir.display(), manifest.files.len());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config { path: "MMCR_THREADS".into(), message: e.to_string() })?;
    }
    match cli.command {
        Command::Run { config, output_dir, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            execute(cfg, output_dir)
        }
        Command::Bench { config, output_dir } => {
            let mut cfg = load_config(&config)?;
            cfg.experiment = Preset::Bench;
            execute(cfg, output_dir)
        }
        Command::Report { dir } => {
            let report = build_report(&dir)?;
            report.write()?;
            println!("{} runs, {} metrics summarized into {}", report.runs, report.summaries.len(), dir.display());
            for p in &report.problems {
                eprintln!("warning: {p}");
            }
            Ok(())
        }
        Command::ShowPreset { preset } => {
            let p: Preset = preset.parse()?;
            print!("{}", ExperimentConfig::preset(p).to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
