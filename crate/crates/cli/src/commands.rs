use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use qdt_core::agent_loop::{
    run_episode, run_llm_only, EpisodeConfig, Mode, Prediction, TaskSpec, DEFAULT_BUDGET,
};
use qdt_core::dataset_store::{ingest_csv, DatasetStore, SchemaCatalog, SchemaConfig, StoreError};
use qdt_core::eval_harness::{
    emit_report, render_summary, run_batch, AblationConfig, BatchContext,
    DEFAULT_MAX_ERROR_FRACTION,
};
use qdt_core::llm_client::{build_backend, BackendConfig};
use qdt_core::policy_engine::{decide, PolicyConfig, Verdict};
use qdt_core::query_gateway::{
    serve as serve_gateway, AuditLog, Gateway, GatewayClient, GatewayConfig, GatewayHandle,
};

use crate::config::Settings;
use crate::exit::{self, UsageError};
use crate::record;
use crate::statements::split_statements;
use crate::{
    BackendArgs, EvaluateArgs, IngestArgs, LintArgs, ModeArg, PredictArgs, ServeArgs,
};

const DEFAULT_SCHEMA: &str = "config/diabetes_schema.toml";
const DEFAULT_STORE: &str = "qdt.db";
const DEFAULT_SCRIPT: &str = "scripts/demo_script.toml";
const DEFAULT_GATEWAY_URL: &str = "http://127.0.0.1:8080";
const DEFAULT_LIVE_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
const CLIENT_TIMEOUT: Duration = Duration::from_secs(120);

fn show_settings(settings: &Settings, verbose: bool) {
    if verbose {
        eprint!("{}", settings.report());
    }
}

fn load_policy(settings: &mut Settings, flag: Option<PathBuf>) -> Result<PolicyConfig> {
    Ok(match settings.path_opt("policy", flag)? {
        Some(path) => PolicyConfig::load(&path)?,
        None => PolicyConfig::default(),
    })
}

fn load_catalog(settings: &mut Settings, flag: Option<PathBuf>) -> Result<SchemaCatalog> {
    let path = settings.path("schema", flag, DEFAULT_SCHEMA)?;
    Ok(SchemaConfig::load(&path)
        .with_context(|| format!("loading schema config {}", path.display()))?
        .catalog()?)
}

fn mode_of(arg: ModeArg) -> Mode {
    match arg {
        ModeArg::Qdt => Mode::Qdt,
        ModeArg::LlmOnly => Mode::LlmOnly,
    }
}

fn backend_config(settings: &mut Settings, args: &BackendArgs) -> Result<BackendConfig> {
    // Naming a model is enough to ask for the live backend.
    let model = settings.get_opt("backend.model", args.model.clone())?;
    let default_kind = if model.is_some() { "live" } else { "scripted" };
    let kind = settings.get("backend.kind", args.backend.clone(), default_kind.to_string())?;
    match kind.as_str() {
        "scripted" => {
            let script = settings.path("backend.script", args.script.clone(), DEFAULT_SCRIPT)?;
            Ok(BackendConfig::Scripted { script })
        }
        "live" => {
            let endpoint = settings.get(
                "backend.endpoint",
                args.endpoint.clone(),
                DEFAULT_LIVE_ENDPOINT.to_string(),
            )?;
            let model = model.ok_or_else(|| {
                UsageError("the live backend needs --model (or backend.model)".into())
            })?;
            let api_key_env = settings.get(
                "backend.api_key_env",
                args.api_key_env.clone(),
                "OPENAI_API_KEY".to_string(),
            )?;
            let timeout_secs = settings.get("backend.timeout_secs", None, 60u64)?;
            let max_retries = settings.get("backend.max_retries", None, 3u32)?;
            let backoff_ms = settings.get("backend.backoff_ms", None, 500u64)?;
            let params = match settings.file_value("backend.params") {
                Some(value) => serde_json::to_value(value)?
                    .as_object()
                    .cloned()
                    .ok_or_else(|| UsageError("backend.params must be a table".into()))?,
                None => serde_json::Map::new(),
            };
            Ok(BackendConfig::Live {
                endpoint,
                model,
                api_key_env: Some(api_key_env),
                timeout_secs,
                max_retries,
                backoff_ms,
                params,
            })
        }
        other => Err(UsageError(format!("unknown backend kind '{other}' (expected scripted or live)")).into()),
    }
}

fn file_stem(record_id: &str) -> String {
    record_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn ingest(args: &IngestArgs, settings: &mut Settings, verbose: bool) -> Result<u8> {
    let csv = settings
        .path_opt("ingest.csv", args.csv.clone())?
        .ok_or_else(|| UsageError("--csv is required (or ingest.csv in the config file)".into()))?;
    let schema_path = settings.path("schema", args.schema.clone(), DEFAULT_SCHEMA)?;
    let store = settings.path("store", args.store.clone(), DEFAULT_STORE)?;
    show_settings(settings, verbose);

    let schema = SchemaConfig::load(&schema_path)
        .with_context(|| format!("loading schema config {}", schema_path.display()))?;
    if store.exists() {
        if !args.force {
            return Err(StoreError::AlreadyExists(store).into());
        }
        fs::remove_file(&store).with_context(|| format!("removing {}", store.display()))?;
    }
    let report = match ingest_csv(&csv, &schema, &store) {
        Ok(report) => report,
        Err(StoreError::HeaderMismatch { unexpected, absent }) => {
            eprintln!("CSV header does not match {}:", schema_path.display());
            for name in &unexpected {
                eprintln!("  + {name}  (in the CSV, not in the schema)");
            }
            for name in &absent {
                eprintln!("  - {name}  (in the schema, missing from the CSV)");
            }
            return Err(StoreError::HeaderMismatch { unexpected, absent }.into());
        }
        Err(e) => return Err(e.into()),
    };

    println!("ingested {} into {} (table {})", csv.display(), store.display(), schema.table);
    println!("  rows read:          {}", report.rows_ingested);
    println!("  rows stored:        {}", report.stored_rows());
    println!("  label 1 / label 0:  {} / {}", report.label_positive_count, report.label_negative_count);
    println!("  nulls normalized:   {}", report.nulls_normalized);
    println!("  rows rejected:      {}", report.rejected_rows);
    for rejection in report.rejections.iter().take(10) {
        println!("    line {}: {}", rejection.line, rejection.reason);
    }
    if report.rejections.len() > 10 {
        println!("    ... {} more", report.rejections.len() - 10);
    }
    Ok(exit::OK)
}

pub fn lint(args: &LintArgs, settings: &mut Settings, verbose: bool) -> Result<u8> {
    let policy = load_policy(settings, args.policy.clone())?;
    let catalog = load_catalog(settings, args.schema.clone())?;
    show_settings(settings, verbose);

    let text = fs::read_to_string(&args.sql_file)
        .with_context(|| format!("reading {}", args.sql_file.display()))?;
    let statements = split_statements(&text);
    let mut rejected = 0;
    for (i, sql) in statements.iter().enumerate() {
        let decision = decide(sql, &catalog, &policy);
        match decision.verdict {
            Verdict::Approved => {
                println!("[{}] APPROVED", i + 1);
                println!("    {}", decision.rewritten_sql().unwrap_or_default());
            }
            Verdict::Rejected => {
                rejected += 1;
                let codes: Vec<_> = decision.codes().iter().map(|c| c.to_string()).collect();
                println!("[{}] REJECTED {}", i + 1, codes.join(","));
                for v in &decision.violations {
                    println!("    - {}: {}", v.code, v.message);
                }
            }
        }
    }
    match statements.len() {
        0 => println!("0 statements"),
        n => println!("{n} statements: {} approved, {rejected} rejected", n - rejected),
    }
    Ok(if rejected == 0 { exit::OK } else { exit::USER })
}

pub fn serve(args: &ServeArgs, settings: &mut Settings, verbose: bool) -> Result<u8> {
    let mut config = GatewayConfig::new(settings.path("store", args.store.clone(), DEFAULT_STORE)?);
    config.bind = settings.get("gateway.bind", args.bind.clone(), config.bind.clone())?;
    config.audit_log = settings.path(
        "gateway.audit_log",
        args.audit_log.clone(),
        &config.audit_log.display().to_string(),
    )?;
    config.query_timeout_ms =
        settings.get("gateway.query_timeout_ms", args.query_timeout_ms, config.query_timeout_ms)?;
    config.policy = load_policy(settings, args.policy.clone())?;
    show_settings(settings, verbose);

    let handle = serve_gateway(&config, true)?;
    println!("gateway listening on {}", handle.url());
    std::io::stdout().flush()?;
    handle.wait()?;
    eprintln!("gateway stopped; audit log {} synced", config.audit_log.display());
    Ok(exit::OK)
}

fn write_transcript(dir: &Path, prediction: &Prediction) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{}.json", file_stem(&prediction.record_id)));
    let json = serde_json::to_string_pretty(prediction)?;
    fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn one_line(text: &str, limit: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    match flat.char_indices().nth(limit) {
        Some((cut, _)) => format!("{}...", &flat[..cut]),
        None => flat,
    }
}

pub fn predict(args: &PredictArgs, settings: &mut Settings, verbose: bool) -> Result<u8> {
    let mode = settings.get("agent.mode", args.mode, ModeArg::Qdt)?;
    let budget = settings.get("agent.budget", args.budget, DEFAULT_BUDGET)?;
    let catalog = load_catalog(settings, args.schema.clone())?;
    let policy = load_policy(settings, args.policy.clone())?;
    let transcript_dir =
        settings.path("predict.transcript_dir", args.transcript_dir.clone(), "transcripts")?;
    let gateway_url = match mode {
        ModeArg::Qdt => Some(settings.get(
            "gateway.url",
            args.gateway_url.clone(),
            DEFAULT_GATEWAY_URL.to_string(),
        )?),
        ModeArg::LlmOnly => None,
    };
    let backend_config = backend_config(settings, &args.backend)?;
    show_settings(settings, verbose);

    let pairs = match &args.record {
        Some(path) => record::pairs_from_file(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => args
            .features
            .iter()
            .map(|p| record::parse_pair(p))
            .collect::<Result<_, _>>()?,
    };
    let table = catalog.primary_table().ok_or(StoreError::EmptyCatalog)?;
    let record = record::from_pairs(table, &args.record_id, &pairs)?;

    let backend = build_backend(&backend_config)?;
    let task = TaskSpec::readmission();
    let prediction = match gateway_url {
        Some(url) => {
            let client = GatewayClient::new(&url, CLIENT_TIMEOUT)?;
            let schema_doc = client.schema()?;
            let episode = EpisodeConfig {
                budget,
                session_prefix: "predict-".to_string(),
            };
            run_episode(&record, &task, &schema_doc, &policy, &client, backend.as_ref(), &episode)?
        }
        None => run_llm_only(&record, &task, backend.as_ref())?,
    };
    let transcript = write_transcript(&transcript_dir, &prediction)?;

    println!("label: {}", prediction.label);
    println!("fallback used: {}", if prediction.fallback_used { "yes" } else { "no" });
    println!(
        "queries: {} issued, {} approved",
        prediction.queries_issued, prediction.queries_approved
    );
    println!("rationale: {}", one_line(&prediction.rationale, 240));
    println!("transcript: {}", transcript.display());
    Ok(exit::OK)
}

fn remove_if_present(path: &Path) -> Result<()> {
    let result = if path.is_dir() {
        fs::remove_dir_all(path)
    } else if path.exists() {
        fs::remove_file(path)
    } else {
        Ok(())
    };
    result.with_context(|| format!("removing stale {}", path.display()))
}

pub fn evaluate(args: &EvaluateArgs, settings: &mut Settings, verbose: bool) -> Result<u8> {
    let store_path = settings.path("store", args.store.clone(), DEFAULT_STORE)?;
    let split_seed = settings.get("evaluate.split_seed", args.split_seed, 7u64)?;
    let test_size = settings.get("evaluate.test_size", args.test_size, 2000usize)?;
    let mode = settings.get("agent.mode", args.mode, ModeArg::Qdt)?;
    let budget = settings.get("agent.budget", args.budget, DEFAULT_BUDGET)?;
    let mask_fraction = settings.get("evaluate.mask_fraction", args.mask_fraction, 0.0f64)?;
    let mask_seed = settings.get("evaluate.mask_seed", args.mask_seed, 0u64)?;
    let parallelism = settings.get("evaluate.parallelism", args.parallelism, 4usize)?;
    let max_error_fraction = settings.get(
        "evaluate.max_error_fraction",
        args.max_error_fraction,
        DEFAULT_MAX_ERROR_FRACTION,
    )?;
    let policy = load_policy(settings, args.policy.clone())?;
    let out_dir = settings.path("evaluate.out_dir", args.out_dir.clone(), "runs/latest")?;
    let backend_config = backend_config(settings, &args.backend)?;
    show_settings(settings, verbose);

    let ablation = if mask_fraction > 0.0 {
        Some(AblationConfig::new(mask_fraction, mask_seed).map_err(|e| UsageError(e.to_string()))?)
    } else if mask_fraction < 0.0 || mask_fraction.is_nan() {
        return Err(UsageError(format!("mask fraction {mask_fraction} is outside [0, 1]")).into());
    } else {
        None
    };
    if parallelism == 0 {
        return Err(UsageError("parallelism must be at least 1".into()).into());
    }
    let backend = build_backend(&backend_config)?;

    let source = DatasetStore::open(&store_path)?;
    let available = source.row_count()?;
    if test_size > available {
        return Err(StoreError::TestSizeTooLarge {
            requested: test_size,
            available,
        }
        .into());
    }
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let train_path = out_dir.join("train.db");
    let audit_path = out_dir.join("audit.ndjson");
    for stale in [&train_path, &audit_path, &out_dir.join("transcripts")] {
        remove_if_present(stale)?;
    }
    let train = source.copy_to(&train_path)?;
    let split = train.split_dataset(split_seed, test_size)?;
    tracing::info!(train_rows = split.train_rows, test = split.test.len(), "store split");

    // The agent reaches the training rows only through the gateway's HTTP
    // API, exactly as it would against a separately deployed `qdt serve`.
    let gateway = match mode {
        ModeArg::Qdt => {
            let gateway = Gateway::new(
                DatasetStore::open(&train_path)?,
                policy.clone(),
                AuditLog::open(&audit_path)?,
            )?;
            Some(GatewayHandle::spawn(gateway, "127.0.0.1:0", false)?)
        }
        ModeArg::LlmOnly => None,
    };
    let client = match &gateway {
        Some(handle) => Some(GatewayClient::new(&handle.url(), CLIENT_TIMEOUT)?),
        None => None,
    };

    let task = TaskSpec::readmission();
    let ctx = BatchContext {
        mode: mode_of(mode),
        task: &task,
        policy: &policy,
        backend: backend.as_ref(),
        gateway: client.as_ref().map(|c| c as _),
        episode: EpisodeConfig {
            budget,
            session_prefix: format!("eval-{split_seed}-"),
        },
        ablation,
        parallelism,
        max_error_fraction,
    };
    let extra = BTreeMap::from([
        ("split_seed".to_string(), split_seed.to_string()),
        ("test_size".to_string(), test_size.to_string()),
        ("train_rows".to_string(), split.train_rows.to_string()),
        ("store".to_string(), store_path.display().to_string()),
    ]);
    let report = run_batch(&split.test, &ctx, extra);
    if let Some(handle) = gateway {
        handle.shutdown()?;
    }
    let report = report?;
    let files = emit_report(&report, &out_dir)?;

    print!("{}", render_summary(&report));
    println!();
    println!("summary:     {}", files.summary.display());
    println!("outcomes:    {}", files.outcomes.display());
    println!("transcripts: {}", files.transcripts.display());
    if report.partial {
        eprintln!(
            "error: run aborted after {} failed episode(s); the report is partial",
            report.errors
        );
        return Ok(exit::INTERNAL);
    }
    Ok(exit::OK)
}
