mod commands;
mod config;
mod exit;
mod record;
mod statements;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::Settings;

/// Aggregate-only SQL gateway and query agent for privacy-preserving
/// prediction on tabular cohorts.
///
/// Settings resolve in the order: flag, environment variable
/// (QDT_<SECTION>_<KEY>, e.g. QDT_GATEWAY_BIND), root config file
/// (--config or QDT_CONFIG), built-in default.
///
/// Exit codes: 0 success, 1 user or policy error, 2 internal error.
#[derive(Debug, Parser)]
#[command(name = "qdt", version)]
struct Cli {
    /// Root config file (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Print every effective setting with its source, and log progress.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the cohort CSV into a new store file.
    Ingest(IngestArgs),
    /// Check SQL statements against the query policy without executing them.
    Lint(LintArgs),
    /// Run the query gateway until SIGINT/SIGTERM.
    Serve(ServeArgs),
    /// Predict the label of one record.
    Predict(PredictArgs),
    /// Split the store, predict every held-out record and write a report.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Cohort CSV file.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Schema config (TOML) [key: schema, default: config/diabetes_schema.toml].
    #[arg(long, value_name = "FILE")]
    schema: Option<PathBuf>,
    /// Store file to create [key: store, default: qdt.db].
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// Replace an existing store file.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct LintArgs {
    /// File of SQL statements separated by ';'.
    #[arg(value_name = "SQL_FILE")]
    sql_file: PathBuf,
    /// Policy file (TOML) [key: policy, default: built-in policy].
    #[arg(long, value_name = "FILE")]
    policy: Option<PathBuf>,
    /// Schema config describing the tables [key: schema].
    #[arg(long, value_name = "FILE")]
    schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Store file [key: store, default: qdt.db].
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// Listen address [key: gateway.bind, default: 127.0.0.1:8080].
    #[arg(long, value_name = "ADDR")]
    bind: Option<String>,
    /// Append-only audit log [key: gateway.audit_log, default: audit.ndjson].
    #[arg(long, value_name = "FILE")]
    audit_log: Option<PathBuf>,
    /// Policy file [key: policy].
    #[arg(long, value_name = "FILE")]
    policy: Option<PathBuf>,
    /// Per-query execution limit in milliseconds [key: gateway.query_timeout_ms].
    #[arg(long, value_name = "MS")]
    query_timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Qdt,
    LlmOnly,
}

impl std::fmt::Display for ModeArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModeArg::Qdt => "qdt",
            ModeArg::LlmOnly => "llm-only",
        })
    }
}

impl std::str::FromStr for ModeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qdt" => Ok(ModeArg::Qdt),
            "llm-only" | "llm_only" => Ok(ModeArg::LlmOnly),
            other => Err(format!("unknown mode '{other}' (expected qdt or llm-only)")),
        }
    }
}

/// Chat backend selection, shared by predict and evaluate.
#[derive(Debug, Args)]
struct BackendArgs {
    /// Backend kind: scripted or live [key: backend.kind, default: live if a model is set, else scripted].
    #[arg(long, value_name = "KIND")]
    backend: Option<String>,
    /// Script for the scripted backend [key: backend.script, default: scripts/demo_script.toml].
    #[arg(long, value_name = "FILE")]
    script: Option<PathBuf>,
    /// Chat-completions URL for the live backend [key: backend.endpoint].
    #[arg(long, value_name = "URL")]
    endpoint: Option<String>,
    /// Model id for the live backend [key: backend.model].
    #[arg(long, value_name = "ID")]
    model: Option<String>,
    /// Environment variable holding the API key [key: backend.api_key_env].
    #[arg(long, value_name = "VAR")]
    api_key_env: Option<String>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Feature values as key=value pairs; omitted features count as missing.
    #[arg(value_name = "KEY=VALUE")]
    features: Vec<String>,
    /// Read features from a JSON object (or key=value lines) instead.
    #[arg(long, value_name = "FILE", conflicts_with = "features")]
    record: Option<PathBuf>,
    /// Identifier used for the transcript file name.
    #[arg(long, default_value = "cli")]
    record_id: String,
    /// qdt (query the gateway) or llm-only [key: agent.mode, default: qdt].
    #[arg(long, value_name = "MODE")]
    mode: Option<ModeArg>,
    /// Gateway base URL [key: gateway.url, default: http://127.0.0.1:8080].
    #[arg(long, value_name = "URL")]
    gateway_url: Option<String>,
    /// Queries allowed per episode [key: agent.budget, default: 8].
    #[arg(long, value_name = "N")]
    budget: Option<usize>,
    /// Schema config used to check feature keys [key: schema].
    #[arg(long, value_name = "FILE")]
    schema: Option<PathBuf>,
    /// Policy file described in the prompt [key: policy].
    #[arg(long, value_name = "FILE")]
    policy: Option<PathBuf>,
    /// Directory for the transcript [key: predict.transcript_dir, default: transcripts].
    #[arg(long, value_name = "DIR")]
    transcript_dir: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ingested store; it is copied, never modified [key: store].
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// Seed of the train/test split [key: evaluate.split_seed, default: 7].
    #[arg(long, value_name = "N")]
    split_seed: Option<u64>,
    /// Held-out records [key: evaluate.test_size, default: 2000].
    #[arg(long, value_name = "N")]
    test_size: Option<usize>,
    /// qdt or llm-only [key: agent.mode].
    #[arg(long, value_name = "MODE")]
    mode: Option<ModeArg>,
    /// Fraction of each record's present features to hide [key: evaluate.mask_fraction, default: 0].
    #[arg(long, value_name = "F")]
    mask_fraction: Option<f64>,
    /// Seed of the feature masking [key: evaluate.mask_seed, default: 0].
    #[arg(long, value_name = "N")]
    mask_seed: Option<u64>,
    /// Concurrent episodes [key: evaluate.parallelism, default: 4].
    #[arg(long, value_name = "N")]
    parallelism: Option<usize>,
    /// Queries allowed per episode [key: agent.budget].
    #[arg(long, value_name = "N")]
    budget: Option<usize>,
    /// Abort once more than this fraction of episodes fail [key: evaluate.max_error_fraction, default: 0.25].
    #[arg(long, value_name = "F")]
    max_error_fraction: Option<f64>,
    /// Policy file [key: policy].
    #[arg(long, value_name = "FILE")]
    policy: Option<PathBuf>,
    /// Output directory [key: evaluate.out_dir, default: runs/latest].
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

fn init_logging(verbose: bool) {
    let default = if verbose { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USER } else { exit::OK });
        }
    };
    init_logging(cli.verbose);

    let result = Settings::load(cli.config.as_deref()).and_then(|mut settings| {
        match &cli.command {
            Command::Ingest(args) => commands::ingest(args, &mut settings, cli.verbose),
            Command::Lint(args) => commands::lint(args, &mut settings, cli.verbose),
            Command::Serve(args) => commands::serve(args, &mut settings, cli.verbose),
            Command::Predict(args) => commands::predict(args, &mut settings, cli.verbose),
            Command::Evaluate(args) => commands::evaluate(args, &mut settings, cli.verbose),
        }
    });

    ExitCode::from(match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::classify(&e)
        }
    })
}
