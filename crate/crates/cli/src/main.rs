use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drivelm_core::config::{BackendKind, ConfigError, PipelineConfig};
use drivelm_core::dataset::Split;
use drivelm_core::pipeline::{self, InferOptions, PipelineError};
use drivelm_core::prompting::CotMode;
use serde_json::json;

#[derive(Parser)]
#[command(name = "drivelm", version, about = "Driving-scene QA pipeline")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Validate inputs and report what would be written, without writing.
    #[arg(long, global = true)]
    dry_run: bool,

    /// More log output (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    paths: PathFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PathFlags {
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    split: Option<SplitArg>,
    #[arg(long, global = true)]
    images: Option<PathBuf>,
    #[arg(long, global = true)]
    depth_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Mock,
}

#[derive(Clone, Copy, ValueEnum)]
enum CotArg {
    None,
    ZeroShot,
    FewShot,
}

#[derive(Subcommand)]
enum Command {
    /// Load the corpus and write its statistics.
    Ingest,
    /// Generate key-object questions from object metadata.
    Augment,
    /// Compute a representative depth for every key object.
    DepthIndex,
    /// Write prompt/target pairs for fine-tuning.
    ExportTrain {
        /// Include generated key-object questions.
        #[arg(long)]
        augmented: bool,
    },
    /// Answer every question with the configured backend.
    Infer(InferArgs),
    /// Combine several systems' predictions.
    Fuse {
        #[arg(required = true)]
        predictions: Vec<PathBuf>,
    },
    /// Score a predictions file against the corpus references.
    Score {
        predictions: PathBuf,
        /// Also write per-question scores as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Print score reports as a table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    system_id: Option<String>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    max_new_tokens: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, value_enum)]
    cot_mode: Option<CotArg>,
    /// Skip the key-object description stage.
    #[arg(long)]
    no_stage1: bool,
    /// Write the prompts sent to the backend.
    #[arg(long)]
    dump_prompts: bool,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, ConfigError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::new(path.display().to_string(), e))?;
            let mut c = PipelineConfig::from_toml(&text)?;
            c.resolve_paths(path.parent().unwrap_or(Path::new(".")));
            c
        }
        None => PipelineConfig::default(),
    };

    let p = &cli.paths;
    if let Some(d) = &p.dataset {
        config.paths.dataset = Some(d.clone());
    }
    if let Some(s) = p.split {
        config.paths.split = match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
        };
    }
    if let Some(d) = &p.images {
        config.paths.images = Some(d.clone());
    }
    if let Some(d) = &p.depth_dir {
        config.paths.depth_dir = Some(d.clone());
    }
    if let Some(d) = &p.output_dir {
        config.paths.output_dir = d.clone();
    }

    if let Command::Infer(a) = &cli.command {
        let b = &mut config.backend;
        if let Some(v) = &a.system_id {
            b.system_id = v.clone();
        }
        if let Some(v) = a.backend {
            b.kind = match v {
                BackendArg::Http => BackendKind::Http,
                BackendArg::Mock => BackendKind::Mock,
            };
        }
        if let Some(v) = &a.base_url {
            b.base_url = v.clone();
        }
        if let Some(v) = a.concurrency {
            b.concurrency = v;
        }
        if let Some(v) = a.max_new_tokens {
            b.max_new_tokens = v;
        }
        if let Some(v) = a.temperature {
            b.temperature = v;
        }
        if a.no_stage1 {
            b.stage1 = false;
        }
        if let Some(v) = a.cot_mode {
            config.prompt.cot_mode = match v {
                CotArg::None => CotMode::None,
                CotArg::ZeroShot => CotMode::ZeroShot,
                CotArg::FewShot => CotMode::FewShot,
            };
        }
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<pipeline::Outcome, PipelineError> {
    if let Command::Report { reports } = &cli.command {
        return pipeline::report(reports);
    }
    let config = load_config(cli)?;
    let dry = cli.dry_run;
    match &cli.command {
        Command::Ingest => pipeline::ingest(&config, dry),
        Command::Augment => pipeline::augment(&config, dry),
        Command::DepthIndex => pipeline::depth_index(&config, dry),
        Command::ExportTrain { augmented } => pipeline::export_train(&config, *augmented, dry),
        Command::Infer(a) => pipeline::infer(
            &config,
            InferOptions {
                backend: None,
                dump_prompts: a.dump_prompts,
            },
            dry,
        ),
        Command::Fuse { predictions } => pipeline::fuse_runs(&config, predictions, dry),
        Command::Score { predictions, csv } => pipeline::score(&config, predictions, *csv, dry),
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn error_kind(e: &PipelineError) -> &'static str {
    match e {
        PipelineError::Config(_) => "config",
        PipelineError::Load(_) => "dataset",
        PipelineError::Depth(_) => "depth",
        PipelineError::Inference(_) => "inference",
        PipelineError::Predictions(_) => "predictions",
        PipelineError::Fusion(_) => "fusion",
        PipelineError::Metrics(_) => "metrics",
        PipelineError::Io { .. } => "io",
        PipelineError::ErrorBudget { .. } => "error_budget",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(&cli) {
        Ok(outcome) => {
            let summary = outcome.summary.trim_end();
            if cli.dry_run {
                println!("dry run: {summary}");
                for a in &outcome.artifacts {
                    println!("  would write {}", a.display());
                }
            } else {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = match &e {
                PipelineError::Config(c) => json!({
                    "level": "error",
                    "kind": "config",
                    "field": c.field,
                    "message": c.message,
                }),
                _ => json!({ "level": "error", "kind": error_kind(&e), "message": e.to_string() }),
            };
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
