use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rusqlite::types::Value;
use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use super::catalog::{ColumnConfig, ColumnRole, SchemaConfig, ValueType};
use super::store::{quote_ident, write_meta, META_CATALOG};
use super::StoreError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the CSV (the header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    /// Data rows read, accepted or not.
    pub rows_ingested: usize,
    pub nulls_normalized: usize,
    pub label_positive_count: usize,
    pub label_negative_count: usize,
    pub rejected_rows: usize,
    pub rejections: Vec<RejectedRow>,
    /// NULLs per stored column after sentinel normalization.
    pub null_counts: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn stored_rows(&self) -> usize {
        self.label_positive_count + self.label_negative_count
    }
}

/// Loads `csv_path` into a new single-file store at `db_path`. Malformed
/// rows are skipped and reported, up to the config's rejection limit.
pub fn ingest_csv(
    csv_path: &Path,
    config: &SchemaConfig,
    db_path: &Path,
) -> Result<IngestReport, StoreError> {
    if !csv_path.is_file() {
        return Err(StoreError::MissingFile(csv_path.to_path_buf()));
    }
    if db_path.exists() {
        return Err(StoreError::AlreadyExists(db_path.to_path_buf()));
    }
    let catalog = config.catalog()?;

    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(csv_path)
        .map_err(|e| StoreError::Csv(e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| StoreError::Csv(e.to_string()))?
        .clone();
    let positions = match_header(&header, config)?;

    let result = (|| {
        let mut conn = Connection::open(db_path)?;
        conn.execute_batch(&create_table_sql(config))?;
        let tx = conn.transaction()?;
        let report = {
            let mut insert = tx.prepare(&insert_sql(config))?;
            load_rows(&mut reader, config, &positions, |values| {
                insert.execute(rusqlite::params_from_iter(values))?;
                Ok(())
            })?
        };
        write_meta(&tx, META_CATALOG, &serde_json::to_string(&catalog).expect("catalog serializes"))?;
        tx.commit()?;
        Ok(report)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(db_path);
    }
    result
}

/// Maps each configured column to its CSV field index.
fn match_header(header: &csv::StringRecord, config: &SchemaConfig) -> Result<Vec<usize>, StoreError> {
    let present: Vec<&str> = header.iter().map(str::trim).collect();
    let expected: HashSet<&str> = config.columns.iter().map(|c| config.source_name(c)).collect();
    let mut seen = HashSet::new();
    let mut unexpected: Vec<String> = present
        .iter()
        .filter(|h| !expected.contains(**h) || !seen.insert(**h))
        .map(|h| h.to_string())
        .collect();
    let absent: Vec<String> = config
        .columns
        .iter()
        .map(|c| config.source_name(c))
        .filter(|name| !present.contains(name))
        .map(str::to_string)
        .collect();
    unexpected.dedup();
    if !unexpected.is_empty() || !absent.is_empty() {
        return Err(StoreError::HeaderMismatch { unexpected, absent });
    }
    Ok(config
        .columns
        .iter()
        .map(|c| {
            present
                .iter()
                .position(|h| *h == config.source_name(c))
                .expect("checked above")
        })
        .collect())
}

fn create_table_sql(config: &SchemaConfig) -> String {
    let columns: Vec<String> = config
        .columns
        .iter()
        .map(|c| {
            let not_null = if c.nullable && c.role != ColumnRole::Label {
                ""
            } else {
                " NOT NULL"
            };
            format!("{} {}{}", quote_ident(&c.name), c.value_type.sql_type(), not_null)
        })
        .collect();
    format!("CREATE TABLE {} ({});", quote_ident(&config.table), columns.join(", "))
}

fn insert_sql(config: &SchemaConfig) -> String {
    let names: Vec<String> = config.columns.iter().map(|c| quote_ident(&c.name)).collect();
    let params: Vec<String> = (1..=names.len()).map(|i| format!("?{i}")).collect();
    format!(
        "INSERT INTO {} ({}) VALUES ({})",
        quote_ident(&config.table),
        names.join(", "),
        params.join(", ")
    )
}

fn load_rows(
    reader: &mut csv::Reader<std::fs::File>,
    config: &SchemaConfig,
    positions: &[usize],
    mut store: impl FnMut(Vec<Value>) -> Result<(), StoreError>,
) -> Result<IngestReport, StoreError> {
    let mut report = IngestReport::default();
    let mut record = csv::StringRecord::new();
    let mut line = 1u64;
    loop {
        let read = reader.read_record(&mut record);
        line = record.position().map(|p| p.line()).unwrap_or(line + 1);
        match read {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                report.rows_ingested += 1;
                reject(&mut report, config, line, format!("unreadable row: {e}"))?;
                continue;
            }
        }
        report.rows_ingested += 1;
        if record.len() != positions.len() {
            reject(
                &mut report,
                config,
                line,
                format!("expected {} fields, found {}", positions.len(), record.len()),
            )?;
            continue;
        }
        match convert_row(&record, config, positions) {
            Ok((values, label, nulls)) => {
                for (column, value) in config.columns.iter().zip(&values) {
                    if *value == Value::Null {
                        *report.null_counts.entry(column.name.clone()).or_default() += 1;
                    }
                }
                store(values)?;
                report.nulls_normalized += nulls;
                if label == 1 {
                    report.label_positive_count += 1;
                } else {
                    report.label_negative_count += 1;
                }
            }
            Err(reason) => reject(&mut report, config, line, reason)?,
        }
    }
    for column in &config.columns {
        report.null_counts.entry(column.name.clone()).or_default();
    }
    Ok(report)
}

fn reject(
    report: &mut IngestReport,
    config: &SchemaConfig,
    line: u64,
    reason: String,
) -> Result<(), StoreError> {
    report.rejected_rows += 1;
    report.rejections.push(RejectedRow { line, reason });
    if report.rejected_rows > config.max_rejected_rows {
        let first = &report.rejections[0];
        return Err(StoreError::TooManyRejected {
            rejected: report.rejected_rows,
            limit: config.max_rejected_rows,
            first: format!("line {}: {}", first.line, first.reason),
        });
    }
    Ok(())
}

/// Returns the typed values, the binary label and the number of sentinel
/// fields normalized to NULL.
fn convert_row(
    record: &csv::StringRecord,
    config: &SchemaConfig,
    positions: &[usize],
) -> Result<(Vec<Value>, i64, usize), String> {
    let mut values = Vec::with_capacity(positions.len());
    let mut label = None;
    let mut nulls = 0;
    for (column, &index) in config.columns.iter().zip(positions) {
        let raw = record[index].trim();
        if column.role == ColumnRole::Label {
            let y = binarize(column, raw)?;
            label = Some(y);
            values.push(Value::Integer(y));
            continue;
        }
        if raw == config.missing_sentinel {
            if !column.nullable {
                return Err(format!("column '{}' is missing but not nullable", column.name));
            }
            nulls += 1;
            values.push(Value::Null);
            continue;
        }
        values.push(convert_value(column, raw)?);
    }
    Ok((values, label.expect("catalog has a label column"), nulls))
}

fn binarize(column: &ColumnConfig, raw: &str) -> Result<i64, String> {
    let positive = column.positive_values.as_deref().unwrap_or_default();
    if positive.iter().any(|v| v == raw) {
        return Ok(1);
    }
    match &column.negative_values {
        Some(negative) if !negative.iter().any(|v| v == raw) => Err(format!(
            "label '{}' has unrecognized value '{raw}'",
            column.name
        )),
        _ if positive.is_empty() => match raw {
            "0" => Ok(0),
            "1" => Ok(1),
            _ => Err(format!("label '{}' must be 0 or 1, found '{raw}'", column.name)),
        },
        _ => Ok(0),
    }
}

fn convert_value(column: &ColumnConfig, raw: &str) -> Result<Value, String> {
    match column.value_type {
        ValueType::Integer => raw
            .parse::<i64>()
            .map(Value::Integer)
            .map_err(|_| format!("column '{}': '{raw}' is not an integer", column.name)),
        ValueType::Real => match raw.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Value::Real(x)),
            _ => Err(format!("column '{}': '{raw}' is not a number", column.name)),
        },
        ValueType::Categorical => {
            if let Some(domain) = &column.domain {
                if !domain.iter().any(|v| v == raw) {
                    return Err(format!(
                        "column '{}': '{raw}' is outside the declared domain",
                        column.name
                    ));
                }
            }
            Ok(Value::Text(raw.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const SCHEMA: &str = r#"
table = "visits"
max_rejected_rows = 2

[[columns]]
name = "visit_id"
type = "integer"
role = "identifier"
nullable = false

[[columns]]
name = "weight"
type = "categorical"
role = "feature"

[[columns]]
name = "stay"
source = "time-in-hospital"
type = "integer"
role = "feature"

[[columns]]
name = "outcome"
source = "readmitted"
type = "integer"
role = "label"
positive_values = ["<30"]
negative_values = [">30", "NO"]
"#;

    fn write_csv(dir: &Path, body: &str) -> std::path::PathBuf {
        let path = dir.join("in.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn binarizes_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csv(
            dir.path(),
            "visit_id,weight,time-in-hospital,readmitted\n1,?,3,<30\n2,[50-75),4,NO\n3,?,x,>30\n4,?,2,maybe\n",
        );
        let config = SchemaConfig::from_toml(SCHEMA).unwrap();
        let db = dir.path().join("s.db");
        let report = ingest_csv(&csv, &config, &db).unwrap();
        assert_eq!(report.rows_ingested, 4);
        assert_eq!(report.label_positive_count, 1);
        assert_eq!(report.label_negative_count, 1);
        assert_eq!(report.rejected_rows, 2);
        assert_eq!(report.nulls_normalized, 1);
        assert_eq!(report.null_counts["weight"], 1);
        assert_eq!(report.rejections[0].line, 4);

        let conn = Connection::open(&db).unwrap();
        let rows: Vec<(i64, Option<String>, i64)> = conn
            .prepare("SELECT visit_id, weight, outcome FROM visits ORDER BY visit_id")
            .unwrap()
            .query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(rows, vec![(1, None, 1), (2, Some("[50-75)".into()), 0)]);
    }

    #[test]
    fn header_mismatch_lists_both_sides() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csv(dir.path(), "visit_id,weight,los,readmitted\n1,?,3,<30\n");
        let config = SchemaConfig::from_toml(SCHEMA).unwrap();
        let err = ingest_csv(&csv, &config, &dir.path().join("s.db")).unwrap_err();
        match err {
            StoreError::HeaderMismatch { unexpected, absent } => {
                assert_eq!(unexpected, vec!["los"]);
                assert_eq!(absent, vec!["time-in-hospital"]);
            }
            other => panic!("unexpected error {other}"),
        }
        assert!(!dir.path().join("s.db").exists());
    }

    #[test]
    fn rejection_limit_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_csv(
            dir.path(),
            "visit_id,weight,time-in-hospital,readmitted\n1,?,a,<30\n2,?,b,<30\n3,?,c,<30\n",
        );
        let config = SchemaConfig::from_toml(SCHEMA).unwrap();
        let db = dir.path().join("s.db");
        assert!(matches!(
            ingest_csv(&csv, &config, &db),
            Err(StoreError::TooManyRejected { rejected: 3, limit: 2, .. })
        ));
        assert!(!db.exists());
    }

    #[test]
    fn missing_file_and_existing_store() {
        let dir = tempfile::tempdir().unwrap();
        let config = SchemaConfig::from_toml(SCHEMA).unwrap();
        assert!(matches!(
            ingest_csv(&dir.path().join("nope.csv"), &config, &dir.path().join("s.db")),
            Err(StoreError::MissingFile(_))
        ));
        let csv = write_csv(dir.path(), "visit_id,weight,time-in-hospital,readmitted\n");
        let db = dir.path().join("s.db");
        std::fs::write(&db, b"").unwrap();
        assert!(matches!(ingest_csv(&csv, &config, &db), Err(StoreError::AlreadyExists(_))));
    }
}
