mod common;

use std::collections::{BTreeMap, BTreeSet};

use qdt_core::dataset_store::{ingest_csv, DatasetStore, StoreError};
use qdt_core::policy_engine::{decide, PolicyConfig};

fn source_rows() -> Vec<BTreeMap<String, String>> {
    csv::Reader::from_path(common::diabetes_csv())
        .unwrap()
        .deserialize()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn ingest_report_matches_a_direct_read_of_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let schema = common::diabetes_schema();
    let report = ingest_csv(&common::diabetes_csv(), &schema, &dir.path().join("qdt.db")).unwrap();
    let rows = source_rows();

    assert_eq!(report.rejected_rows, 0);
    assert_eq!(report.rows_ingested, rows.len());
    let positive = rows.iter().filter(|r| r["readmitted"] == "<30").count();
    assert_eq!(report.label_positive_count, positive);
    assert_eq!(report.label_negative_count, rows.len() - positive);

    let mut missing_total = 0;
    for column in &schema.columns {
        let source = schema.source_name(column);
        let missing = rows.iter().filter(|r| matches!(r[source].trim(), "?" | "")).count();
        missing_total += missing;
        assert_eq!(report.null_counts.get(&column.name).copied().unwrap_or(0), missing, "{}", column.name);
    }
    assert_eq!(report.nulls_normalized, missing_total);

    let store = DatasetStore::open(&dir.path().join("qdt.db")).unwrap();
    assert_eq!(store.row_count().unwrap(), rows.len());
}

#[test]
fn ingest_refuses_to_overwrite_and_reports_header_diffs() {
    let dir = tempfile::tempdir().unwrap();
    let store = common::ingest_diabetes(dir.path());
    let again = ingest_csv(&common::diabetes_csv(), &common::diabetes_schema(), &store);
    assert!(matches!(again, Err(StoreError::AlreadyExists(_))));

    let text = std::fs::read_to_string(common::diabetes_csv()).unwrap();
    let renamed = dir.path().join("renamed.csv");
    std::fs::write(&renamed, text.replacen("time_in_hospital", "los_days", 1)).unwrap();
    match ingest_csv(&renamed, &common::diabetes_schema(), &dir.path().join("x.db")) {
        Err(StoreError::HeaderMismatch { unexpected, absent }) => {
            assert_eq!(unexpected, vec!["los_days".to_string()]);
            assert_eq!(absent, vec!["time_in_hospital".to_string()]);
        }
        other => panic!("{other:?}"),
    }
    assert!(!dir.path().join("x.db").exists());
}

#[test]
fn split_is_deterministic_and_hides_test_rows() {
    let dir = tempfile::tempdir().unwrap();
    let original = DatasetStore::open(&common::ingest_diabetes(dir.path())).unwrap();
    let total = original.row_count().unwrap();
    let a = original.copy_to(&dir.path().join("a.db")).unwrap().split_dataset(11, 40).unwrap();
    let b = original.copy_to(&dir.path().join("b.db")).unwrap().split_dataset(11, 40).unwrap();
    let c = original.copy_to(&dir.path().join("c.db")).unwrap().split_dataset(12, 40).unwrap();
    assert_eq!(a.test, b.test);
    assert_ne!(a.test, c.test);
    assert_eq!(a.train_rows, total - 40);

    let ids: BTreeSet<&str> = a.test.iter().map(|r| r.record_id.as_str()).collect();
    assert_eq!(ids.len(), 40);
    assert!(a.test.iter().all(|r| r.true_label.is_some()));
    assert!(a.test.iter().all(|r| !r.present_features.contains_key("readmitted_30d")
        && !r.present_features.contains_key("patient_nbr")));

    // Counting the held-out encounters on the training store finds none.
    let train = DatasetStore::open(&dir.path().join("a.db")).unwrap();
    let policy = PolicyConfig::default();
    let list = ids.iter().cloned().collect::<Vec<_>>().join(", ");
    let sql = format!("SELECT COUNT(*) FROM patients WHERE encounter_id IN ({list})");
    let decision = decide(&sql, train.catalog(), &policy);
    let result = train.execute_approved(decision.approval().unwrap(), 10).unwrap();
    // Zero matches is a sub-threshold group, so the row is suppressed.
    assert!(result.rows.is_empty());
    let raw = |path: &std::path::Path| common::oracle::raw_rows(&common::oracle::open_raw(path), &sql)[0][0].clone();
    assert_eq!(raw(&dir.path().join("a.db")), serde_json::json!(0));
    assert_eq!(raw(original.path()), serde_json::json!(40));
    assert_eq!(train.split_info().unwrap(), Some((11, 40)));
    assert!(matches!(train.split_dataset(11, 5), Err(StoreError::AlreadySplit { .. })));
    assert!(matches!(
        original.copy_to(&dir.path().join("d.db")).unwrap().split_dataset(1, total + 1),
        Err(StoreError::TestSizeTooLarge { .. })
    ));
}
