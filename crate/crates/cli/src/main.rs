//! `tto`: test-time optimization of keypoint appearance embeddings.
//!
//! Exit codes: 0 ok, 2 input or format problem, 3 shape or consistency
//! problem, 4 numerical failure.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "tto", version, about = "Keypoint tracking with per-video embedding optimization")]
struct Cli {
    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// More log output; repeat for trace level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic scenes with ground truth and annotations.
    Synth(commands::SynthArgs),
    /// Track keypoints with a fixed embedding.
    Track(commands::TrackArgs),
    /// Optimize the appearance embedding against the annotations.
    Optimize(commands::OptimizeArgs),
    /// Score predicted tracks against ground truth.
    Eval(commands::EvalArgs),
    /// Kalman-smooth a track file.
    Smooth(commands::SmoothArgs),
    /// Run an ablation sweep over a synthetic suite.
    Ablate(commands::AblateArgs),
    /// Run the HTTP labeling service.
    Serve(commands::ServeArgs),
}

fn init_logging(quiet: bool, verbose: u8) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.quiet, cli.verbose);
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Track(a) => commands::track(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::Eval(a) => commands::eval(a),
        Command::Smooth(a) => commands::smooth(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
