//! `hepa`: pretraining, finetuning, evaluation and experiment orchestration
//! for the horizon-conditioned event predictor.
//!
//! Structural choices live in JSON configs; flags override scalars only.
//! Relative dataset paths resolve against `HEPA_DATA_DIR` when it is set.
//! Exit codes: 0 ok, 1 internal runtime failure, 2 config/IO error.

mod checkpoint;
mod commands;
mod config;
mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use hepa_core::{FinetuneMode, HepaError, PredictorInit};

#[derive(Parser)]
#[command(name = "hepa", version, about = "Horizon-conditioned event prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Probe,
    Multi,
}

impl From<ModeArg> for FinetuneMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Standard => FinetuneMode::Standard,
            ModeArg::Probe => FinetuneMode::Probe,
            ModeArg::Multi => FinetuneMode::Multi,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Pretrained,
    Random,
}

impl From<InitArg> for PredictorInit {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::Pretrained => PredictorInit::Pretrained,
            InitArg::Random => PredictorInit::Random,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Self-supervised pretraining; writes best + snapshot checkpoints and a loss CSV.
    Pretrain {
        /// JSON config with `data`, `pretrain`, optional `out_dir`.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pretraining seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Survival finetuning from a checkpoint; writes the finetuned model,
    /// the test probability surface and its metric report.
    Finetune {
        /// JSON config with `data`, `finetune`, optional `checkpoint` / `out_dir`.
        #[arg(long)]
        config: PathBuf,
        /// Pretrained checkpoint (overrides the config).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fraction of train episodes whose labels may be used.
        #[arg(long)]
        label_fraction: Option<f64>,
        /// standard = predictor + head; probe = head on h_t only; multi =
        /// linear probe on frozen multi-horizon predictions.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Initialize the predictor from the checkpoint or from scratch.
        #[arg(long, value_enum)]
        predictor_init: Option<InitArg>,
    },
    /// Metric report, per-horizon AUROC CSV and SVG for a surface file.
    Evaluate {
        /// Probability surface file to score.
        #[arg(long)]
        surface: PathBuf,
        /// Surface used for threshold selection (defaults to the test surface).
        #[arg(long)]
        validation: Option<PathBuf>,
        /// JSON data source; supplies time-to-event truth for RMSE.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Horizon for the single-cell F1 projection.
        #[arg(long, default_value_t = 1)]
        f1_horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Representation-error sweep: finetune every pretraining snapshot under
    /// every seed and correlate epsilon with test h-AUROC.
    Sweep {
        /// JSON config with `data`, `pretrain`, `finetune`, `seeds`.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated finetune seeds (overrides the config).
        #[arg(long)]
        seeds: Option<String>,
        /// Permutation p-value instead of the Student-t approximation.
        #[arg(long)]
        permutation: bool,
        /// Ignore existing sweep.csv instead of resuming from it.
        #[arg(long)]
        fresh: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label-efficiency curve: finetune at each label fraction x seed and
    /// report h-AUROC retention against full labels.
    Labelcurve {
        /// JSON config with `data`, `finetune`, optional `checkpoint`,
        /// `fractions`, `seeds`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic precursor dataset as a train/test CSV pair.
    GenSynthetic {
        /// JSON synthetic spec (episodes, channels, steps, beta, ...).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a native C-MAPSS run-to-failure text file into the CSV schema.
    ConvertCmapss {
        /// Path to e.g. train_FD001.txt (resolved against HEPA_DATA_DIR).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of units assigned to the train split.
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
    },
}

fn dispatch(cmd: Cmd) -> hepa_core::Result<()> {
    match cmd {
        Cmd::Pretrain { config, out, seed } => commands::cmd_pretrain(&config, out, seed),
        Cmd::Finetune { config, checkpoint, out, seed, label_fraction, mode, predictor_init } => {
            commands::cmd_finetune(
                &config,
                commands::FinetuneOverrides {
                    checkpoint,
                    out,
                    seed,
                    label_fraction,
                    mode: mode.map(Into::into),
                    predictor_init: predictor_init.map(Into::into),
                },
            )
        }
        Cmd::Evaluate { surface, validation, data, f1_horizon, out } => {
            commands::cmd_evaluate(&surface, validation, data, f1_horizon, out)
        }
        Cmd::Sweep { config, seeds, permutation, fresh, out } => {
            let seeds = seeds.map(|s| config::parse_seed_list(&s)).transpose()?;
            commands::cmd_sweep(&config, seeds, permutation, fresh, out)
        }
        Cmd::Labelcurve { config, checkpoint, seeds, out } => {
            let seeds = seeds.map(|s| config::parse_seed_list(&s)).transpose()?;
            commands::cmd_labelcurve(&config, checkpoint, seeds, out)
        }
        Cmd::GenSynthetic { config, out } => commands::cmd_gen_synthetic(&config, out),
        Cmd::ConvertCmapss { input, out, train_frac } => {
            commands::cmd_convert_cmapss(input, out, train_frac)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.cmd) {
        eprintln!("error: {e}");
        let code = match e {
            HepaError::Shape(_) | HepaError::Contract(_) => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}
