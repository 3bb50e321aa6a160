//! `idtrack` command line: synthetic data, training, tracking, evaluation and
//! ablations, each writing a checksummed manifest next to its outputs.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod commands;
pub mod error;
pub mod manifest;
pub mod plot;

use commands::{ablate, eval, synth, track, train, Context, InferenceFlags};
use error::{CliResult, EXIT_CONFIG, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "idtrack", version, about = "In-context ID prediction tracker")]
pub struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// 64-bit arithmetic and sequential execution, for byte-identical reruns.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Overrides the config file's `seed`.
    #[arg(long, global = true, env = "IDTRACK_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an ID decoder on a corpus.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Track every sequence of a corpus and write MOTChallenge result files.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: InferenceFlags,
    },
    /// Score result files against ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
    },
    /// Train and evaluate a grid of settings.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let ctx = Context {
        workdir: cli.workdir.clone(),
        deterministic: cli.deterministic,
        seed_override: cli.seed,
    };
    match &cli.command {
        Command::Synth { config, out } => synth::cmd_synth(&ctx, config, out).map(drop),
        Command::Train {
            config,
            data,
            out,
            resume,
            max_steps,
        } => train::cmd_train(
            &ctx,
            &train::TrainArgs {
                config,
                data,
                out,
                resume: resume.as_deref(),
                max_steps: *max_steps,
            },
        )
        .map(drop),
        Command::Track {
            checkpoint,
            data,
            out,
            config,
            flags,
        } => track::cmd_track(
            &ctx,
            &track::TrackArgs {
                checkpoint,
                data,
                out,
                config: config.as_deref(),
                flags,
            },
        )
        .map(drop),
        Command::Eval {
            results,
            gt,
            out,
            iou_threshold,
        } => eval::cmd_eval(&ctx, results, gt, out, *iou_threshold).map(drop),
        Command::Ablate { config, out } => ablate::cmd_ablate(&ctx, config, out).map(drop),
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
