//! `speakergraph` — batch CLI over the speaker-graph toolkit: validate and
//! summarize face-track record files, build spatial-temporal graphs,
//! generate synthetic scenes, train and evaluate the three-stream graph
//! model, sweep hyperparameters, and verify gradients and parameter budgets.
//!
//! Exit codes: 0 success, 1 internal error, 2 bad input, 3 incompatible
//! checkpoint.

mod commands;
mod config;
mod data;
mod errors;

use clap::{Parser, Subcommand};
use config::{SceneFlags, SweepParam, TrainFlags};
use errors::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "speakergraph",
    version,
    about = "Spatial-temporal graph learning over face-track features"
)]
struct Cli {
    /// TOML config file with [run]/[train]/[synth]/[sweep] sections;
    /// command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log filter when RUST_LOG is unset (error|warn|info|debug|trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate record files and print per-stream statistics.
    Ingest {
        /// Record file (.jsonl, optionally gzip) or a directory of them.
        #[arg(long)]
        input: PathBuf,
        /// Also write ingest_stats.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partition records into graph segments and report edge-set sizes.
    BuildGraph {
        #[arg(long)]
        input: PathBuf,
        /// Temporal edge threshold in seconds.
        #[arg(long)]
        tau: Option<f64>,
        /// Maximum nodes per segment.
        #[arg(long)]
        nodes_per_graph: Option<usize>,
        /// Write segments.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate labeled synthetic conversation scenes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes; scene k uses seed + k.
        #[arg(long)]
        scenes: Option<usize>,
        #[command(flatten)]
        scene: SceneFlags,
    },
    /// Train on record files; writes checkpoint.json, history.csv,
    /// summary.json.
    Train {
        /// Record file or directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score records with a trained checkpoint; writes predictions.csv.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the τ stored in the checkpoint.
        #[arg(long)]
        tau: Option<f64>,
        /// Override the segment size stored in the checkpoint.
        #[arg(long)]
        nodes_per_graph: Option<usize>,
    },
    /// Compute mAP from a predictions CSV.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// Tie policy: stable | pessimistic.
        #[arg(long)]
        ties: Option<String>,
        /// Write eval.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train across a one-dimensional hyperparameter grid; writes sweep.csv.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Which knob to sweep.
        #[arg(long, value_enum)]
        param: Option<SweepParam>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Compare analytic gradients against central finite differences.
    CheckGrad {
        #[command(flatten)]
        flags: commands::GradFlags,
    },
    /// Print the trainable-parameter budget of a model shape.
    ParamCount {
        #[command(flatten)]
        flags: commands::ModelFlags,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = config::load_file_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Ingest { input, out } => commands::cmd_ingest(input, out.as_deref()),
        Command::BuildGraph { input, tau, nodes_per_graph, out } => {
            commands::cmd_build_graph(input, *tau, *nodes_per_graph, out.as_deref(), &file)
        }
        Command::Synth { out, scenes, scene } => commands::cmd_synth(out, *scenes, scene, &file),
        Command::Train { data, out, train } => commands::cmd_train(data, out, train, &file),
        Command::Predict { checkpoint, data, out, tau, nodes_per_graph } => {
            commands::cmd_predict(checkpoint, data, out, *tau, *nodes_per_graph)
        }
        Command::Eval { predictions, ties, out } => {
            commands::cmd_eval(predictions, ties.as_deref(), out.as_deref(), &file)
        }
        Command::Sweep { data, out, param, values, train } => {
            commands::cmd_sweep(data, out, *param, values, train, &file)
        }
        Command::CheckGrad { flags } => commands::cmd_check_grad(flags),
        Command::ParamCount { flags } => commands::cmd_param_count(flags),
    }
}

fn main() -> ExitCode {
    // Die silently on a closed pipe (`speakergraph … | head`) instead of
    // panicking: Rust masks SIGPIPE by default.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
