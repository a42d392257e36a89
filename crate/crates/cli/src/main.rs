//! `portsel` command-line driver.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 missing
//! artifact, 4 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use portsel::pipeline::{Context, ReportKind, RunConfig};
use portsel::Error;

#[derive(Parser)]
#[command(name = "portsel", version, about = "Portfolio selection from algorithm meta-representations")]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Start from the synthetic desk-scale configuration instead of the defaults.
    #[arg(long, global = true)]
    desk: bool,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    performance: Option<PathBuf>,
    #[arg(long, global = true)]
    features: Option<PathBuf>,
    #[arg(long, global = true)]
    global_seed: Option<u64>,
    /// Comma-separated similarity thresholds.
    #[arg(long, global = true, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Comma-separated selector seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Match performance columns by name instead of requiring the exact header.
    #[arg(long, global = true)]
    lenient: bool,
    /// Train forests on log10 precision.
    #[arg(long, global = true)]
    log10_target: bool,
    /// Build performance2vec from log10 medians.
    #[arg(long, global = true)]
    log10_p2v: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check input data and configuration.
    Validate,
    /// Generate synthetic data into the output directory.
    Synth,
    /// Nested cross-validation training of the per-algorithm forests.
    Train,
    /// Shapley values of the trained models.
    Shap,
    /// performance2vec and Shapley meta-representations.
    Metarep,
    /// Similarity graphs.
    Graph,
    /// SELECTOR and personalized portfolios.
    Select,
    /// FULL, greedy and random baseline portfolios.
    Baseline,
    /// Loss reports for every portfolio.
    Evaluate,
    /// Plot-ready tables.
    Report {
        /// heatmap, perfunc, decomposition, sizes, lossdist or all.
        #[arg(long, default_value = "all")]
        kind: String,
    },
    /// Every stage in order.
    Pipeline,
}

fn build_config(o: &GlobalOpts) -> Result<RunConfig, Error> {
    let mut c = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingArtifact(path.clone()),
                _ => Error::InvalidConfig(format!("{}: {e}", path.display())),
            })?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None if o.desk => RunConfig::desk("out"),
        None => RunConfig::default(),
    };
    if let Some(v) = &o.output_dir {
        c.output_dir = v.clone();
    }
    if let Some(v) = &o.performance {
        c.performance = Some(v.clone());
    }
    if let Some(v) = &o.features {
        c.features = Some(v.clone());
    }
    if let Some(v) = o.global_seed {
        c.global_seed = v;
    }
    if let Some(v) = &o.thresholds {
        c.thresholds = v.clone();
    }
    if let Some(v) = &o.seeds {
        c.selector_seeds = v.clone();
    }
    if o.lenient {
        c.strict_schema = false;
    }
    if o.log10_target {
        c.log10_target = true;
    }
    if o.log10_p2v {
        c.log10_p2v = true;
    }
    Ok(c)
}

fn print<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let ctx = Context::new(build_config(&cli.opts)?, cli.opts.jobs)?;
    match cli.command {
        Command::Validate => print(&ctx.validate_data()?),
        Command::Synth => print(&ctx.synth()?),
        Command::Train => print(&ctx.train()?),
        Command::Shap => {
            let (files, worst) = ctx.shap()?;
            print(&serde_json::json!({ "files": files, "max_local_accuracy_error": worst }))
        }
        Command::Metarep => print(&serde_json::json!({ "files": ctx.metarep()? })),
        Command::Graph => print(&serde_json::json!({ "graphs": ctx.graph()? })),
        Command::Select => print(&serde_json::json!({ "portfolios": ctx.select()? })),
        Command::Baseline => print(&serde_json::json!({ "portfolios": ctx.baseline()? })),
        Command::Evaluate => print(&serde_json::json!({ "reports": ctx.evaluate()? })),
        Command::Report { kind } => {
            let kinds = if kind == "all" {
                ReportKind::ALL.to_vec()
            } else {
                vec![kind.parse()?]
            };
            let mut files = Vec::new();
            for k in kinds {
                files.extend(ctx.report(k)?);
            }
            print(&files)
        }
        Command::Pipeline => print(&ctx.pipeline()?),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else if matches!(e.root(), Error::MissingArtifact(_)) {
        3
    } else {
        4
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
