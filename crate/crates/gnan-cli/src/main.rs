//! `gnan`: train, predict, and explain graph neural additive networks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gnan::error::GnanError;

use commands::ExplainTargets;
use config::{CommonFlags, Manifest};

#[derive(Parser)]
#[command(
    name = "gnan",
    version,
    about = "Graph neural additive networks: interpretable graph learning",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Dataset file (edge-json) or directory (flat-csv)
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Dataset layout: edge-json or flat-csv
    #[arg(long, value_name = "NAME")]
    format: Option<String>,
    /// TOML settings file; flags override its values
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Model file to write (train) or read (predict, explain)
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Output directory, created if missing
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; every random stream derives from it
    #[arg(long)]
    seed: Option<u64>,
    /// Worker cap; 1 is fully deterministic
    #[arg(long)]
    threads: Option<usize>,
    /// Numeric precision: f32 or f64
    #[arg(long, value_name = "TYPE")]
    precision: Option<String>,
    /// Task name, e.g. graph-binary or node-multiclass
    #[arg(long, value_name = "NAME")]
    task: Option<String>,
    /// Class count for multiclass tasks; inferred from labels if omitted
    #[arg(long)]
    classes: Option<usize>,
    /// Override the configured epoch budget
    #[arg(long)]
    epochs: Option<usize>,
    /// Print progress to stderr
    #[arg(short, long)]
    verbose: bool,
}

impl Common {
    fn flags(&self) -> CommonFlags {
        CommonFlags {
            data: self.data.clone(),
            format: self.format.clone(),
            config: self.config.clone(),
            model: self.model.clone(),
            out: self.out.clone(),
            seed: self.seed,
            threads: self.threads,
            precision: self.precision.clone(),
            task: self.task.clone(),
            classes: self.classes,
            epochs: self.epochs,
            verbose: self.verbose,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write it with its training history
    Train(Common),
    /// Score a dataset with a trained model
    Predict(Common),
    /// Export shape curves, heatmaps, and local explanations
    Explain(ExplainArgs),
    /// Nested cross-validation with hyperparameter selection
    Crossval(Common),
    /// Generate a labeled synthetic dataset
    Synth(Common),
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: Common,
    /// Emit every feature curve and the distance curve as CSV
    #[arg(long)]
    curves: bool,
    /// Emit the distance-by-input heatmap for this feature
    #[arg(long, value_name = "K")]
    heatmap: Option<usize>,
    /// Node ids (comma separated) whose contributions to export
    #[arg(long, value_name = "IDS", value_delimiter = ',')]
    local: Option<Vec<usize>>,
    /// Which graph the local explanation reads
    #[arg(long, value_name = "INDEX", default_value_t = 0)]
    graph: usize,
    /// Wrap curves in percentile bands from this many retrained resamples
    #[arg(long, value_name = "N")]
    bootstrap: Option<usize>,
    /// Also render SVG figures
    #[arg(long)]
    svg: bool,
    /// Class shown in single-class figures
    #[arg(long, value_name = "C", default_value_t = 0)]
    class: usize,
}

fn error_kind(e: &GnanError) -> &'static str {
    match e {
        GnanError::Config(_) => "config",
        GnanError::Parse { .. } => "parse",
        GnanError::Schema { .. } => "schema",
        GnanError::Validation(_) => "validation",
        GnanError::Io { .. } => "io",
        GnanError::Numeric(_) => "numeric",
        GnanError::UndefinedMetric(_) => "undefined-metric",
        GnanError::Contract(_) => "contract",
    }
}

fn run(cli: Cli) -> Result<(), GnanError> {
    match cli.command {
        Command::Train(common) => commands::cmd_train(&Manifest::resolve(&common.flags())?),
        Command::Predict(common) => commands::cmd_predict(&Manifest::resolve(&common.flags())?),
        Command::Explain(args) => {
            let manifest = Manifest::resolve(&args.common.flags())?;
            let targets = ExplainTargets {
                curves: args.curves,
                heatmap: args.heatmap,
                local: args.local,
                graph: args.graph,
                bootstrap: args.bootstrap,
                svg: args.svg,
                class: args.class,
            };
            commands::cmd_explain(&manifest, &targets)
        }
        Command::Crossval(common) => commands::cmd_crossval(&Manifest::resolve(&common.flags())?),
        Command::Synth(common) => commands::cmd_synth(&Manifest::resolve(&common.flags())?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is a
            // usage error and exits 1, like any other config problem.
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().expect("writing to stdio");
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": {
                    "kind": error_kind(&e),
                    "message": e.to_string(),
                    "exit_code": e.exit_code(),
                }
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
