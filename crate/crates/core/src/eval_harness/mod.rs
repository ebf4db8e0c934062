//! Batch evaluation over held-out records: feature masking, metrics and
//! report files.

mod metrics;
mod report;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent_loop::{
    run_episode, run_llm_only, EpisodeConfig, Mode, Prediction, QueryPort, TaskSpec,
};
use crate::dataset_store::TestRecord;
use crate::llm_client::ChatBackend;
use crate::policy_engine::PolicyConfig;

pub use metrics::{compute_metrics, ConfusionMatrix, Metrics};
pub use report::{emit_report, outcomes_csv, render_summary, ReferenceRow, ReportFiles, PUBLISHED_REFERENCE};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no outcomes to score")]
    NoOutcomes,
    #[error("label {0} is not binary")]
    NonBinary(u8),
    #[error("mask fraction {0} is outside [0, 1]")]
    BadFraction(f64),
    #[error("gateway unavailable: {0}")]
    Gateway(String),
    #[error("qdt mode needs a gateway")]
    NoGateway,
    #[error("cannot write report to {}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub mask_fraction: f64,
    pub seed: u64,
}

impl AblationConfig {
    pub fn new(mask_fraction: f64, seed: u64) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&mask_fraction) || mask_fraction.is_nan() {
            return Err(EvalError::BadFraction(mask_fraction));
        }
        Ok(AblationConfig {
            mask_fraction,
            seed,
        })
    }
}

type Slot = (RecordOutcome, Option<Prediction>);

/// `floor(fraction * present)`. The epsilon keeps products such as
/// 0.7 * 10 = 6.999... from losing a feature to binary rounding.
pub fn mask_count(present: usize, fraction: f64) -> usize {
    ((fraction * present as f64) + 1e-9).floor().min(present as f64) as usize
}

fn record_rng(seed: u64, record_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(record_id.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Removes `floor(f·p)` of the record's `p` present features, chosen
/// uniformly without replacement by a generator seeded from
/// (seed, record_id). The label is untouched.
pub fn mask_features(record: &TestRecord, config: &AblationConfig) -> TestRecord {
    let present = record.present_features.len();
    let count = mask_count(present, config.mask_fraction);
    if count == 0 {
        return record.clone();
    }
    let mut rng = record_rng(config.seed, &record.record_id);
    let drop: std::collections::HashSet<usize> =
        rand::seq::index::sample(&mut rng, present, count).into_iter().collect();
    let mut masked = record.clone();
    masked.present_features = record
        .present_features
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, (k, v))| (k.clone(), v.clone()))
        .collect();
    masked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub record_id: String,
    pub true_label: Option<u8>,
    pub predicted: Option<u8>,
    pub fallback_used: bool,
    pub queries_issued: usize,
    pub queries_approved: usize,
    pub features_shown: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
}

/// Settings recorded alongside results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub budget: usize,
    pub parallelism: usize,
    pub max_error_fraction: f64,
    pub ablation: Option<AblationConfig>,
    pub prompt_version: String,
    pub backend: String,
    /// Free-form extras (split seed, store path, ...).
    #[serde(default)]
    pub extra: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub outcomes: Vec<RecordOutcome>,
    pub confusion: ConfusionMatrix,
    pub metrics: Option<Metrics>,
    pub class_counts: ClassCounts,
    pub records_requested: usize,
    pub errors: usize,
    pub fallbacks: usize,
    /// The run stopped early because too many episodes failed.
    pub partial: bool,
    pub wall_clock_ms: u64,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

impl RunReport {
    fn assemble(config: RunConfig, requested: usize, results: Vec<(RecordOutcome, Option<Prediction>)>, partial: bool, wall_clock_ms: u64) -> Self {
        let mut outcomes = Vec::with_capacity(results.len());
        let mut predictions = Vec::new();
        for (outcome, prediction) in results {
            outcomes.push(outcome);
            predictions.extend(prediction);
        }
        let scored: Vec<(u8, u8)> = outcomes
            .iter()
            .filter_map(|o| Some((o.predicted?, o.true_label?)))
            .collect();
        let confusion = ConfusionMatrix::tally(&scored).unwrap_or_default();
        let class_counts = outcomes.iter().fold(ClassCounts::default(), |mut c, o| {
            match o.true_label {
                Some(1) => c.positive += 1,
                Some(_) => c.negative += 1,
                None => {}
            }
            c
        });
        RunReport {
            metrics: (!scored.is_empty()).then(|| confusion.metrics()),
            confusion,
            class_counts,
            records_requested: requested,
            errors: outcomes.iter().filter(|o| o.error.is_some()).count(),
            fallbacks: outcomes.iter().filter(|o| o.fallback_used).count(),
            partial,
            wall_clock_ms,
            config,
            outcomes,
            predictions,
        }
    }
}

/// Everything an episode needs besides the record.
pub struct BatchContext<'a> {
    pub mode: Mode,
    pub task: &'a TaskSpec,
    pub policy: &'a PolicyConfig,
    pub backend: &'a dyn ChatBackend,
    pub gateway: Option<&'a dyn QueryPort>,
    pub episode: EpisodeConfig,
    pub ablation: Option<AblationConfig>,
    pub parallelism: usize,
    /// Abort once more than this fraction of all records has failed.
    pub max_error_fraction: f64,
}

pub const DEFAULT_MAX_ERROR_FRACTION: f64 = 0.25;

/// Evaluates every record once, in parallel up to `ctx.parallelism`.
/// Outcomes come back in input order whatever the scheduling.
pub fn run_batch(records: &[TestRecord], ctx: &BatchContext<'_>, extra: std::collections::BTreeMap<String, String>) -> Result<RunReport, EvalError> {
    let started = Instant::now();
    let schema_doc = match ctx.mode {
        Mode::Qdt => {
            let gateway = ctx.gateway.ok_or(EvalError::NoGateway)?;
            Some(gateway.schema().map_err(|e| EvalError::Gateway(e.to_string()))?)
        }
        Mode::LlmOnly => None,
    };
    let config = RunConfig {
        mode: ctx.mode,
        budget: ctx.episode.budget,
        parallelism: ctx.parallelism.max(1),
        max_error_fraction: ctx.max_error_fraction,
        ablation: ctx.ablation,
        prompt_version: crate::agent_loop::PROMPT_VERSION.to_string(),
        backend: ctx.backend.describe(),
        extra,
    };

    let error_limit = (ctx.max_error_fraction * records.len() as f64).floor() as usize;
    let next = AtomicUsize::new(0);
    let failures = AtomicUsize::new(0);
    let aborted = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Slot>>> = Mutex::new(vec![None; records.len()]);

    let worker = || loop {
        if aborted.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(original) = records.get(i) else {
            break;
        };
        let record = match &ctx.ablation {
            Some(ablation) => mask_features(original, ablation),
            None => original.clone(),
        };
        let result = match (ctx.mode, &schema_doc, ctx.gateway) {
            (Mode::Qdt, Some(doc), Some(gateway)) => run_episode(
                &record,
                ctx.task,
                doc,
                ctx.policy,
                gateway,
                ctx.backend,
                &ctx.episode,
            ),
            _ => run_llm_only(&record, ctx.task, ctx.backend),
        };
        let mut outcome = RecordOutcome {
            record_id: record.record_id.clone(),
            true_label: record.true_label,
            predicted: None,
            fallback_used: false,
            queries_issued: 0,
            queries_approved: 0,
            features_shown: record.present_features.len(),
            error_code: None,
            error: None,
        };
        let prediction = match result {
            Ok(p) => {
                outcome.predicted = Some(u8::from(ctx.task.is_positive(&p.label)));
                outcome.fallback_used = p.fallback_used;
                outcome.queries_issued = p.queries_issued;
                outcome.queries_approved = p.queries_approved;
                Some(p)
            }
            Err(e) => {
                tracing::warn!(record = %record.record_id, error = %e, "episode failed");
                outcome.error_code = Some(e.code().to_string());
                outcome.error = Some(e.to_string());
                if failures.fetch_add(1, Ordering::SeqCst) + 1 > error_limit {
                    aborted.store(true, Ordering::SeqCst);
                }
                None
            }
        };
        slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some((outcome, prediction));
    };

    std::thread::scope(|scope| {
        for _ in 0..config.parallelism {
            scope.spawn(worker);
        }
    });

    let partial = aborted.load(Ordering::SeqCst);
    let results: Vec<_> = slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .flatten()
        .collect();
    Ok(RunReport::assemble(
        config,
        records.len(),
        results,
        partial,
        started.elapsed().as_millis() as u64,
    ))
}
