mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use qdt_core::agent_loop::{EpisodeConfig, Mode, TaskSpec};
use qdt_core::dataset_store::TestRecord;
use qdt_core::eval_harness::{
    compute_metrics, emit_report, mask_features, run_batch, AblationConfig, BatchContext, EvalError, RunReport,
};
use qdt_core::llm_client::{ChatBackend, ChatMessage, LlmError};
use qdt_core::policy_engine::PolicyConfig;
use serde_json::{json, Value};

/// Independent tally: precision, recall and F1 from raw counts.
fn brute_force(pairs: &[(u8, u8)]) -> (f64, f64, f64) {
    let count = |p: u8, t: u8| pairs.iter().filter(|&&x| x == (p, t)).count() as f64;
    let (tp, fp, fn_) = (count(1, 1), count(1, 0), count(0, 1));
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    (precision, recall, ratio(2.0 * precision * recall, precision + recall))
}

fn record(id: &str, p: usize, label: u8) -> TestRecord {
    TestRecord {
        record_id: id.to_string(),
        present_features: (0..p).map(|i| (format!("feature_{i:02}"), Value::from(i))).collect(),
        true_label: Some(label),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_a_brute_force_tally(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..500)) {
        let m = compute_metrics(&pairs).unwrap();
        let (p, r, f) = brute_force(&pairs);
        prop_assert_eq!((m.precision, m.recall, m.f1), (p, r, f));
    }

    #[test]
    fn masking_removes_exactly_the_floor(p in 0usize..60, percent in 0u32..=100, seed: u64, id in "[a-z0-9]{1,8}") {
        let original = record(&id, p, 1);
        let config = AblationConfig::new(f64::from(percent) / 100.0, seed).unwrap();
        let masked = mask_features(&original, &config);
        let expected = p * percent as usize / 100;
        prop_assert_eq!(masked.present_features.len(), p - expected);
        prop_assert!(masked.present_features.iter().all(|(k, v)| original.present_features.get(k) == Some(v)));
        prop_assert_eq!(masked.true_label, original.true_label);
        prop_assert_eq!(&mask_features(&original, &config), &masked);
    }
}

#[test]
fn empty_and_non_binary_outcomes_are_errors() {
    assert!(matches!(compute_metrics(&[]), Err(EvalError::NoOutcomes)));
    assert!(matches!(compute_metrics(&[(2, 1)]), Err(EvalError::NonBinary(2))));
    let m = compute_metrics(&[(1, 1), (1, 0)]).unwrap();
    assert_eq!((m.precision, m.recall), (0.5, 1.0));
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(compute_metrics(&[(0, 0), (0, 1)]).unwrap().precision, 0.0);
}

#[test]
fn table_fractions_mask_the_expected_counts() {
    for (fraction, tenths) in [(0.0, 0), (0.3, 3), (0.7, 7)] {
        let config = AblationConfig::new(fraction, 5).unwrap();
        let r = record("enc-1", 40, 0);
        assert_eq!(mask_features(&r, &config).present_features.len(), 40 - 40 * tenths / 10);
    }
    let r = record("enc-1", 40, 0);
    assert_eq!(mask_features(&r, &AblationConfig::new(0.0, 9).unwrap()), r);
    let a = mask_features(&r, &AblationConfig::new(0.7, 1).unwrap());
    let b = mask_features(&r, &AblationConfig::new(0.7, 2).unwrap());
    assert_ne!(a, b, "different seeds should mask different sets");
    assert!(AblationConfig::new(1.5, 0).is_err());
}

/// Answers from the record alone: positive when feature_03 is present, and
/// fails outright on records marked poisoned.
struct Rule;

impl ChatBackend for Rule {
    fn complete(&self, history: &[ChatMessage]) -> Result<ChatMessage, LlmError> {
        let text: String = history.iter().map(|m| m.content.as_str()).collect();
        if text.contains("poison") {
            return Err(LlmError::Transport {
                attempts: 1,
                message: "connection reset".into(),
            });
        }
        let label = u8::from(text.contains("feature_03"));
        Ok(ChatMessage::assistant(format!("ANSWER: {label}")))
    }

    fn describe(&self) -> String {
        "rule".into()
    }
}

fn batch(records: &[TestRecord], parallelism: usize, ablation: Option<AblationConfig>) -> RunReport {
    let task = TaskSpec::readmission();
    let policy = PolicyConfig::default();
    let ctx = BatchContext {
        mode: Mode::LlmOnly,
        task: &task,
        policy: &policy,
        backend: &Rule,
        gateway: None,
        episode: EpisodeConfig::default(),
        ablation,
        parallelism,
        max_error_fraction: 0.25,
    };
    run_batch(records, &ctx, BTreeMap::new()).unwrap()
}

fn records(n: usize) -> Vec<TestRecord> {
    (0..n).map(|i| record(&format!("enc-{i}"), 4 + i % 5, (i % 3 == 0) as u8)).collect()
}

#[test]
fn batches_are_deterministic_and_independent_of_parallelism() {
    let rs = records(10);
    let one = batch(&rs, 1, AblationConfig::new(0.3, 4).ok());
    let four = batch(&rs, 4, AblationConfig::new(0.3, 4).ok());
    assert_eq!(one.outcomes.len(), 10);
    assert_eq!(one.outcomes, four.outcomes);
    assert_eq!(one.metrics, four.metrics);
    assert_eq!(one.predictions, four.predictions);
    assert_eq!(one.confusion.tp + one.confusion.fp + one.confusion.tn + one.confusion.fn_, 10);

    // Aggregate metrics are recomputable from the per-record outcomes.
    let pairs: Vec<(u8, u8)> = one.outcomes.iter().map(|o| (o.predicted.unwrap(), o.true_label.unwrap())).collect();
    assert_eq!(one.metrics, Some(compute_metrics(&pairs).unwrap()));
    let ids: BTreeSet<_> = one.outcomes.iter().map(|o| o.record_id.clone()).collect();
    assert_eq!(ids.len(), 10);
}

#[test]
fn a_failing_record_is_reported_not_dropped() {
    let mut rs = records(10);
    rs[6].present_features.insert("note".into(), json!("poison"));
    let report = batch(&rs, 3, None);
    assert!(!report.partial);
    assert_eq!(report.outcomes.len(), 10);
    assert_eq!(report.errors, 1);
    let failed = &report.outcomes[6];
    assert_eq!((failed.predicted, failed.error_code.as_deref()), (None, Some("TRANSPORT")));
    assert_eq!(report.confusion.tp + report.confusion.fp + report.confusion.tn + report.confusion.fn_, 9);
}

#[test]
fn too_many_failures_abort_with_a_partial_report() {
    let mut rs = records(20);
    for r in rs.iter_mut().take(8) {
        r.present_features.insert("note".into(), json!("poison"));
    }
    let report = batch(&rs, 1, None);
    assert!(report.partial);
    assert_eq!(report.errors, 6, "abort once failures exceed floor(0.25 * 20)");
    assert!(report.outcomes.len() < 20);
}

#[test]
fn reports_carry_outcomes_and_published_rows() {
    let dir = tempfile::tempdir().unwrap();
    let report = batch(&records(10), 2, AblationConfig::new(0.3, 1).ok());
    let files = emit_report(&report, dir.path()).unwrap();

    let mut reader = csv::Reader::from_path(&files.outcomes).unwrap();
    assert_eq!(reader.records().count(), 10);

    let summary: Value = serde_json::from_str(&std::fs::read_to_string(&files.summary).unwrap()).unwrap();
    assert_eq!(summary["config"]["ablation"]["mask_fraction"], json!(0.3));
    let reference = summary["reference"].as_array().unwrap();
    let row = |model: &str| reference.iter().find(|r| r["model"] == model).unwrap().clone();
    let qdt = row("QDT");
    assert_eq!((qdt["precision"].as_f64(), qdt["recall"].as_f64(), qdt["f1"].as_f64()), (Some(0.68), Some(0.73), Some(0.70)));
    assert_eq!(row("QDT (30% less features)")["f1"], json!(0.67));
    assert_eq!(row("QDT (70% less features)")["f1"], json!(0.64));

    let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(text.contains("QDT (published)") && text.contains("this run"));
    assert_eq!(std::fs::read_dir(&files.transcripts).unwrap().count(), 10);

    let unwritable = dir.path().join("summary.json").join("nested");
    assert!(matches!(emit_report(&report, &unwritable), Err(EvalError::Io { .. })));
}
