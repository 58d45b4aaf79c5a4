use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use sedx::eval::ProbeConfig;
use sedx::model::load_checkpoint;
use sedx::synth::{generate_dataset, Dataset, DatasetSpec};
use sedx::train::{self, parse_config, EvalConfig};

/// Polyphonic sound event detection with disentangled per-class features.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a spec file.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Frame and event metrics of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Evaluate the student instead of the EMA teacher.
        #[arg(long)]
        use_student: bool,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 3)]
        median_window: usize,
        #[arg(long, default_value_t = 2)]
        collar: usize,
        /// Report directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leakage AUC matrix and per-class PCA exports.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        use_student: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; defaults to `probe` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn sibling(ckpt: &std::path::Path, name: &str) -> PathBuf {
    ckpt.parent().unwrap_or(std::path::Path::new(".")).join(name)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { spec, out } => {
            let spec = DatasetSpec::read(&spec)?;
            let summary = generate_dataset(&spec, &out)?;
            print!("{}", summary.to_kv());
        }
        Command::Train { config } => {
            let cfg = parse_config(&config)?;
            let outcome = train::train(&cfg)?;
            println!(
                "trained {} for {} epochs; frame macro F1 {:.4}; outputs in {}",
                cfg.mode.name(),
                cfg.epochs,
                outcome.metrics.frame_f1(),
                outcome.output.display()
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
            use_student,
            threshold,
            median_window,
            collar,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let ds = Dataset::load(&dataset)?;
            let eval = EvalConfig {
                threshold,
                median_window,
                collar,
                use_student,
            };
            let report = train::evaluate(&ckpt, &ds, &eval)?;
            let dir = out.unwrap_or_else(|| sibling(&checkpoint, ""));
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            train::write_metrics(&report, &dir, "eval_metrics")?;
            print!("{}", report.to_kv());
        }
        Command::Probe {
            checkpoint,
            dataset,
            use_student,
            seed,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let ds = Dataset::load(&dataset)?;
            let cfg = ProbeConfig {
                seed,
                ..ProbeConfig::default()
            };
            let report = train::probe(&ckpt, &ds, use_student, &cfg)?;
            let dir = out.unwrap_or_else(|| sibling(&checkpoint, "probe"));
            report.write(&dir)?;
            print!("{}", report.leakage_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<sedx::Error>().map_or(2, sedx::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
