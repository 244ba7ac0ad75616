use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use plc_cli::commands::{self, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "plcnet", version, about = "Point-cloud lane correction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/, test/ and manifest.json).
    Synth {
        /// key = value synthesis config; defaults apply to absent keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a dataset's train split.
    Train {
        /// key = value training config; defaults apply to absent keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (uses its train/ split when present).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        /// Loss log path [default: <out>.history.tsv].
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Correct lanes, merge them into global lanes and evaluate.
    #[command(name = "correct-merge-eval", alias = "evaluate")]
    CorrectMergeEval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for lanes/, global_lanes.json and reports.
        #[arg(long)]
        out: PathBuf,
        /// Split to process when the dataset has train/ and test/.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Draw initial, corrected and ground-truth lanes over sample images.
    Render {
        /// Dataset directory holding the referenced samples.
        #[arg(long)]
        data: PathBuf,
        /// A lanes file or a directory of them (as written by correct-merge-eval).
        #[arg(long)]
        lanes: PathBuf,
        /// Output directory for the overlay PNGs.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Synth { config, out, seed } => commands::synth(config.as_deref(), out, *seed),
        Command::Train {
            config,
            data,
            out,
            log,
            seed,
        } => commands::train(config.as_deref(), data, out, log.as_deref(), *seed),
        Command::CorrectMergeEval {
            checkpoint,
            data,
            out,
            split,
        } => commands::correct_merge_eval(checkpoint, data, out, split),
        Command::Render { data, lanes, out } => commands::render(data, lanes, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
