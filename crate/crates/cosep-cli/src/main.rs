//! `cosep` — synthesize, train, evaluate, separate, ablate. One JSON
//! config file plus `--set key=value` overrides drives everything; every
//! command is deterministic given config and seed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cosep_cli::commands::{
    cmd_ablate, cmd_evaluate, cmd_separate, cmd_synth, cmd_train, EvalMode,
};
use cosep_cli::config::load_config;
use cosep_cli::CliError;

#[derive(Parser)]
#[command(name = "cosep", version, about = "Object-conditioned audio co-separation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config JSON; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. --set train.steps=500
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize the audio corpus and validate it on disk.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Corpus output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a separator on an existing corpus.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Corpus directory from `cosep synth`.
        #[arg(long)]
        corpus: PathBuf,
        /// Run output directory (logs, checkpoints, summary).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on held-out solo-pair mixtures.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Trained model checkpoint (not needed for the bound modes).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score ground-truth ratio masks instead of the model (upper bound).
        #[arg(long, conflicts_with = "mixture_baseline")]
        oracle_mask: bool,
        /// Score the mixture itself as every estimate (lower bound, NSDR ≡ 0).
        #[arg(long)]
        mixture_baseline: bool,
    },
    /// Separate one mono WAV into per-class stems plus the adaptable residual.
    Separate {
        /// Trained model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input WAV (mono, 11025 Hz or an integer multiple).
        #[arg(long)]
        input: PathBuf,
        /// Class ids to extract, e.g. --classes 0,2; all classes when omitted.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score the loss-ablation grid on one corpus.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rows to run (default: all plus mixture_baseline).
        #[arg(long, value_delimiter = ',')]
        rows: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Synth { config, out } => {
            let cfg = load_config(config.config.as_deref(), &config.set)?;
            let corpus = cmd_synth(&cfg, &out)?;
            println!("wrote {} clips to {}", corpus.clips.len(), out.display());
        }
        Cmd::Train { config, corpus, out } => {
            let cfg = load_config(config.config.as_deref(), &config.set)?;
            let summary = cmd_train(&cfg, &corpus, &out)?;
            println!(
                "trained {} steps ({:?}), final total {:.4}, best val SDR {}",
                summary.steps,
                summary.loss_mode,
                summary.final_total.unwrap_or(f64::NAN),
                summary
                    .best_val_sdr
                    .map_or_else(|| "n/a".to_string(), |v| format!("{v:.2} dB")),
            );
        }
        Cmd::Evaluate { config, checkpoint, corpus, out, oracle_mask, mixture_baseline } => {
            let cfg = load_config(config.config.as_deref(), &config.set)?;
            let mode = if oracle_mask {
                EvalMode::OracleMask
            } else if mixture_baseline {
                EvalMode::MixtureBaseline
            } else {
                EvalMode::Model
            };
            let report = cmd_evaluate(checkpoint.as_deref(), &corpus, &out, &cfg.eval, mode)?;
            println!(
                "{}: {} pairs, SDR {:.2} ± {:.2} dB (perm {:.2}), NSDR {:.2} dB",
                report.mode,
                report.n_pairs,
                report.mean_sdr,
                report.stderr_sdr,
                report.mean_perm_sdr,
                report.mean_nsdr,
            );
        }
        Cmd::Separate { checkpoint, input, classes, out } => {
            let report = cmd_separate(&checkpoint, &input, &classes, &out)?;
            println!(
                "wrote {} stems ({} samples @ {} Hz) and {} images to {}",
                report.stems.len(),
                report.n_samples,
                report.sample_rate,
                report.images.len(),
                out.display(),
            );
        }
        Cmd::Ablate { config, corpus, out, rows } => {
            let cfg = load_config(config.config.as_deref(), &config.set)?;
            let report = cmd_ablate(&cfg, &corpus, &out, &rows)?;
            for row in &report.rows {
                println!(
                    "{:>18}: SDR {:.2} ± {:.2} dB, NSDR {:.2} dB",
                    row.name, row.mean_sdr, row.stderr_sdr, row.mean_nsdr
                );
            }
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
