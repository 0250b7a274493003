//! Command-line front end: argument parsing and exit codes only; all real
//! work lives in the library's `commands` module.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use irisnet::commands::{cmd_bench, cmd_eval, cmd_gen_data, cmd_infer, cmd_train};
use irisnet::config::{load_config, TrainConfig};
use irisnet::io::Split;

#[derive(Parser)]
#[command(name = "irisnet", version, about = "Curvilinear-structure segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration (JSON). Defaults apply for every omitted field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file's value.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> irisnet::Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => load_config(path)?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with a split manifest.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of samples to generate.
        #[arg(long)]
        count: usize,
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a generated dataset; writes checkpoint, history, summary.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory (from gen-data).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for run artifacts.
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment one image or a directory of images.
    Infer {
        /// Trained checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// A .pgm image, or a directory scanned for them.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for the per-image artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Foreground threshold in (0,1).
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
    },
    /// Score a checkpoint on one dataset split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Trained checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (from gen-data).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for metrics.csv.
        #[arg(long)]
        out: PathBuf,
        /// Which split to score.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Time single-image forward passes on both convolution routes.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Timed passes per route (after warm-up).
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Output directory for bench.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> irisnet::Result<()> {
    match cli.command {
        Command::GenData { config, count, out } => {
            let config = config.resolve()?;
            let manifest = cmd_gen_data(&config, count, &out)?;
            let (tr, va, te) = manifest.split_sizes();
            println!(
                "wrote {count} samples to {} (train {tr} / validation {va} / test {te})",
                out.display()
            );
        }
        Command::Train { config, data, out } => {
            let config = config.resolve()?;
            let summary = cmd_train(&config, &data, &out)?;
            println!(
                "trained {} epochs in {:.1}s; best validation dice loss {:.6} at epoch {}",
                summary.epochs_run, summary.wall_seconds, summary.best_val_dice, summary.best_epoch
            );
            println!("artifacts in {}", out.display());
        }
        Command::Infer { checkpoint, input, out, threshold } => {
            cmd_infer(&checkpoint, &input, &out, threshold)?;
            println!("segmentation artifacts in {}", out.display());
        }
        Command::Eval { config, checkpoint, data, out, split } => {
            let config = config.resolve()?;
            let rows = cmd_eval(&config, &checkpoint, &data, &out, split.into())?;
            let scored: Vec<&irisnet::io::MetricsRow> =
                rows.iter().filter(|r| r.msd.is_some()).collect();
            println!("scored {} samples ({} with contours)", rows.len(), scored.len());
            if !scored.is_empty() {
                let mean = |f: fn(&irisnet::io::MetricsRow) -> f64| {
                    scored.iter().map(|r| f(r)).sum::<f64>() / scored.len() as f64
                };
                println!(
                    "mean soft IoU {:.4}, mean IoU@tau {:.4}, mean MSD {:.3}px",
                    mean(|r| r.soft_iou),
                    mean(|r| r.iou_at_tau),
                    mean(|r| r.msd.unwrap().0)
                );
            }
            println!("metrics in {}", out.join("metrics.csv").display());
        }
        Command::Bench { config, runs, out } => {
            let config = config.resolve()?;
            let report = cmd_bench(&config, runs, &out)?;
            println!(
                "fused {:.2} ± {:.2} fps | two-pass {:.2} ± {:.2} fps | {} params",
                report.fps_fused_mean,
                report.fps_fused_std,
                report.fps_reference_mean,
                report.fps_reference_std,
                report.params
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
