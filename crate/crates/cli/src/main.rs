//! `storm`: corpus synthesis, process verification, training, enhancement
//! and evaluation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Wind-noise reduction by stochastic regeneration.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "storm", version)]
pub struct Cli {
    /// Seed of every random draw; fixed seed and `--jobs 1` give
    /// byte-identical outputs.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for per-utterance work.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Predictor followed by diffusion regeneration.
    Storm,
    /// Diffusion from the noisy input only.
    Generative,
    /// Predictor only.
    Predictive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    Storm,
    Generative,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a paired clean/noisy corpus and its manifest.
    ///
    /// Layout: `<out>/<split>/{clean,noisy}/<id>.wav` and `<out>/manifest.txt`.
    Synthesize {
        /// Key-value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long, env = "STORM_DATA_ROOT")]
        out: PathBuf,
        /// Directory of recorded wind-noise WAV files to mix in.
        #[arg(long)]
        noise_dir: Option<PathBuf>,
    },
    /// Compare simulated diffusion moments with their closed forms.
    VerifySde {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Multiplies every tolerance (0 makes every check fail).
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
        /// Fewer trajectories and steps, with looser tolerances.
        #[arg(long)]
        quick: bool,
    },
    /// Train a model on a synthesized corpus.
    ///
    /// Prints one line per epoch and rewrites the checkpoint after each.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus directory holding `manifest.txt`.
        #[arg(long, env = "STORM_DATA_ROOT")]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = TrainMode::Storm)]
        mode: TrainMode,
        /// Continue from the checkpoint if it exists; its stored settings
        /// take precedence over the configuration.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs in this invocation.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Enhance every WAV file in a directory.
    Enhance {
        #[arg(long, value_enum, default_value_t = Mode::Storm)]
        mode: Mode,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reverse diffusion steps (the checkpoint's setting by default).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score estimates against references with matching file names.
    ///
    /// Emits `file=...` records, `aggregate ...` records and a `#`-prefixed
    /// summary table.
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// Report file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("storm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
