//! `pouchreg` — register time-lapse sequences of deforming tissue regions.
//!
//! Subcommands:
//! - `register`: align every frame of a sequence to its first frame (or
//!   every item of a synthetic dataset to its reference).
//! - `synth`: generate a benchmark dataset with known ground-truth warps.
//! - `eval`: score registration results against a benchmark dataset.
//! - `refine`: snap a region mask to nearby image edges.
//! - `metrics`: one-off comparisons of mask or image pairs.

mod config;
mod eval;
mod metrics_cmd;
mod refine_cmd;
mod register;
mod synth_cmd;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pouchreg", version, about = "Two-phase registration for deforming-tissue image sequences")]
struct Cli {
    /// Pipeline configuration JSON (defaults used where absent).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for independent work items.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    jobs: usize,

    /// Override the RNG seed where one applies.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Report per-frame progress on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a frame sequence to its first frame, or a synthetic dataset
    /// (a directory with manifest.json) to its reference image.
    Register {
        /// Directory of lexicographically ordered .pgm frames, or a dataset
        /// directory produced by `synth`.
        input: PathBuf,
        /// Directory of region masks: one per frame, or a single mask for
        /// the first frame. Unused in dataset mode.
        masks: Option<PathBuf>,
        /// Output directory.
        #[arg(long, short, value_name = "DIR")]
        out: PathBuf,
    },
    /// Generate a synthetic benchmark dataset.
    Synth {
        /// Reference image (.pgm). May be omitted with --phantom.
        reference: Option<PathBuf>,
        /// Region mask for the reference (.pgm). May be omitted with --phantom.
        mask: Option<PathBuf>,
        /// Generation spec JSON; defaults apply where absent.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        /// Generate a synthetic reference of this size instead of reading
        /// one, e.g. --phantom 256x256.
        #[arg(long, value_name = "WxH")]
        phantom: Option<String>,
        /// Output dataset directory.
        #[arg(long, short, value_name = "DIR")]
        out: PathBuf,
    },
    /// Evaluate registration results against a synthetic dataset.
    Eval {
        /// Dataset directory produced by `synth`.
        dataset: PathBuf,
        /// Directory holding per-item transform files (register output).
        results: PathBuf,
    },
    /// Refine a region mask against image edges.
    Refine {
        /// Image (.pgm).
        image: PathBuf,
        /// Initial region mask (.pgm).
        mask: PathBuf,
        /// Output directory.
        #[arg(long, short, value_name = "DIR")]
        out: PathBuf,
    },
    /// Compare two masks or two images.
    Metrics {
        #[command(subcommand)]
        what: metrics_cmd::What,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match config::PipelineConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let jobs = cli.jobs.max(1);
    let result = match cli.command {
        Command::Register { input, masks, out } => {
            register::run(&input, masks.as_deref(), &out, &cfg, jobs, cli.verbose)
        }
        Command::Synth { reference, mask, spec, phantom, out } => synth_cmd::run(
            reference.as_deref(),
            mask.as_deref(),
            spec.as_deref(),
            phantom.as_deref(),
            &out,
            cli.seed,
            jobs,
            cli.verbose,
        ),
        Command::Eval { dataset, results } => eval::run(&dataset, &results, cli.verbose),
        Command::Refine { image, mask, out } => refine_cmd::run(&image, &mask, &out, &cfg),
        Command::Metrics { what } => metrics_cmd::run(&what),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
