use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags, OptionalExtension};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::catalog::{ColumnRole, SchemaCatalog, SchemaDoc, TableMeta};
use super::{aggregates, export_schema_doc, StoreError};
use crate::policy_engine::{ApprovedQuery, PolicyConfig};

pub(crate) const META_TABLE: &str = "qdt_meta";
pub(crate) const META_CATALOG: &str = "catalog";
const META_SPLIT: &str = "split";

pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(10);

pub(crate) fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

pub(crate) fn write_meta(conn: &Connection, key: &str, value: &str) -> rusqlite::Result<()> {
    conn.execute(
        &format!("CREATE TABLE IF NOT EXISTS {META_TABLE} (key TEXT PRIMARY KEY, value TEXT NOT NULL)"),
        [],
    )?;
    conn.execute(
        &format!("INSERT OR REPLACE INTO {META_TABLE} (key, value) VALUES (?1, ?2)"),
        [key, value],
    )?;
    Ok(())
}

fn read_meta(conn: &Connection, key: &str) -> rusqlite::Result<Option<String>> {
    let exists: bool = conn.query_row(
        "SELECT EXISTS (SELECT 1 FROM sqlite_master WHERE type = 'table' AND name = ?1)",
        [META_TABLE],
        |r| r.get(0),
    )?;
    if !exists {
        return Ok(None);
    }
    conn.query_row(
        &format!("SELECT value FROM {META_TABLE} WHERE key = ?1"),
        [key],
        |r| r.get(0),
    )
    .optional()
}

/// A held-out record as the agent sees it. Missing values are absent keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub record_id: String,
    pub present_features: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub table: String,
    pub train_rows: usize,
    pub test: Vec<TestRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct SplitInfo {
    seed: u64,
    test_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// More than `max_rows` rows matched; only the first `max_rows` are kept.
    pub truncated: bool,
    /// Groups removed by the cohort-size threshold, when measurable.
    pub suppressed_groups: Option<u64>,
    pub elapsed_ms: u64,
}

/// Handle to an ingested store file. Every query opens its own read-only
/// connection, so a shared handle is safe across threads.
#[derive(Debug, Clone)]
pub struct DatasetStore {
    path: PathBuf,
    catalog: SchemaCatalog,
    timeout: Duration,
}

impl DatasetStore {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if !path.is_file() {
            return Err(StoreError::MissingFile(path.to_path_buf()));
        }
        let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY)?;
        let raw = read_meta(&conn, META_CATALOG)
            .map_err(|_| StoreError::NotIngested(path.to_path_buf()))?
            .ok_or_else(|| StoreError::NotIngested(path.to_path_buf()))?;
        let catalog: SchemaCatalog = serde_json::from_str(&raw)
            .map_err(|e| StoreError::Schema(format!("stored catalog is unreadable: {e}")))?;
        catalog.validate()?;
        Ok(Self {
            path: path.to_path_buf(),
            catalog,
            timeout: DEFAULT_QUERY_TIMEOUT,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn catalog(&self) -> &SchemaCatalog {
        &self.catalog
    }

    pub fn schema_doc(&self, policy: &PolicyConfig) -> Result<SchemaDoc, StoreError> {
        export_schema_doc(&self.catalog, policy)
    }

    fn table(&self) -> Result<&TableMeta, StoreError> {
        self.catalog.primary_table().ok_or(StoreError::EmptyCatalog)
    }

    pub fn row_count(&self) -> Result<usize, StoreError> {
        let conn = self.read_connection()?;
        let n: i64 = conn.query_row(
            &format!("SELECT COUNT(*) FROM {}", quote_ident(&self.table()?.name)),
            [],
            |r| r.get(0),
        )?;
        Ok(n as usize)
    }

    /// Byte copy of the store file; used to split a working copy while
    /// keeping the ingested original intact.
    pub fn copy_to(&self, dest: &Path) -> Result<DatasetStore, StoreError> {
        std::fs::copy(&self.path, dest).map_err(|source| StoreError::Io {
            path: dest.to_path_buf(),
            source,
        })?;
        DatasetStore::open(dest).map(|s| s.with_timeout(self.timeout))
    }

    pub fn split_info(&self) -> Result<Option<(u64, usize)>, StoreError> {
        let conn = self.read_connection()?;
        Ok(read_meta(&conn, META_SPLIT)?
            .and_then(|raw| serde_json::from_str::<SplitInfo>(&raw).ok())
            .map(|s| (s.seed, s.test_size)))
    }

    /// Moves `test_size` rows, chosen by a seeded shuffle, out of the
    /// queryable table. Removed rows are returned as test records and the
    /// file is vacuumed so no page still holds them.
    pub fn split_dataset(&self, seed: u64, test_size: usize) -> Result<SplitOutcome, StoreError> {
        let table = self.table()?.clone();
        let mut conn = Connection::open(&self.path)?;
        if let Some(info) = read_meta(&conn, META_SPLIT)?
            .and_then(|raw| serde_json::from_str::<SplitInfo>(&raw).ok())
        {
            return Err(StoreError::AlreadySplit {
                seed: info.seed,
                test_size: info.test_size,
            });
        }

        let quoted_table = quote_ident(&table.name);
        let mut rowids: Vec<i64> = conn
            .prepare(&format!("SELECT rowid FROM {quoted_table} ORDER BY rowid"))?
            .query_map([], |r| r.get(0))?
            .collect::<Result<_, _>>()?;
        if test_size > rowids.len() {
            return Err(StoreError::TestSizeTooLarge {
                requested: test_size,
                available: rowids.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rowids.shuffle(&mut rng);
        rowids.truncate(test_size);

        let id_column = table
            .columns
            .iter()
            .find(|c| c.role == ColumnRole::Identifier)
            .map(|c| c.name.clone());
        let label_column = table.label_column().map(|c| c.name.clone());
        let feature_columns: Vec<String> = table.features().map(|c| c.name.clone()).collect();

        let tx = conn.transaction()?;
        let mut test = Vec::with_capacity(test_size);
        {
            let select_cols: Vec<String> = table.columns.iter().map(|c| quote_ident(&c.name)).collect();
            let mut fetch = tx.prepare(&format!(
                "SELECT {} FROM {quoted_table} WHERE rowid = ?1",
                select_cols.join(", ")
            ))?;
            let mut delete = tx.prepare(&format!("DELETE FROM {quoted_table} WHERE rowid = ?1"))?;
            for &rowid in &rowids {
                let values: BTreeMap<String, Value> = fetch.query_row([rowid], |row| {
                    let mut map = BTreeMap::new();
                    for (i, column) in table.columns.iter().enumerate() {
                        map.insert(column.name.clone(), json_value(row.get_ref(i)?));
                    }
                    Ok(map)
                })?;
                let record_id = match &id_column {
                    Some(name) => render_id(&values[name]),
                    None => rowid.to_string(),
                };
                let true_label = label_column
                    .as_ref()
                    .and_then(|name| values[name].as_u64())
                    .map(|y| y as u8);
                let present_features = feature_columns
                    .iter()
                    .filter(|name| !values[*name].is_null())
                    .map(|name| (name.clone(), values[name].clone()))
                    .collect();
                test.push(TestRecord {
                    record_id,
                    present_features,
                    true_label,
                });
                delete.execute([rowid])?;
            }
        }
        let info = SplitInfo { seed, test_size };
        write_meta(&tx, META_SPLIT, &serde_json::to_string(&info).expect("split info serializes"))?;
        tx.commit()?;
        conn.execute_batch("VACUUM")?;

        let train_rows: i64 =
            conn.query_row(&format!("SELECT COUNT(*) FROM {quoted_table}"), [], |r| r.get(0))?;
        Ok(SplitOutcome {
            table: table.name,
            train_rows: train_rows as usize,
            test,
        })
    }

    fn read_connection(&self) -> Result<Connection, StoreError> {
        let conn = Connection::open_with_flags(
            &self.path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )?;
        aggregates::register(&conn)?;
        Ok(conn)
    }

    /// Runs an approved query, keeping at most `max_rows` rows.
    pub fn execute_approved(
        &self,
        approved: &ApprovedQuery,
        max_rows: usize,
    ) -> Result<ResultSet, StoreError> {
        if !approved.verify() {
            return Err(StoreError::InvalidApproval);
        }
        let started = Instant::now();
        let conn = self.read_connection()?;
        let deadline = started + self.timeout;
        conn.progress_handler(10_000, Some(move || Instant::now() > deadline))?;

        let timeout = self.timeout;
        let engine = |e: rusqlite::Error| match &e {
            rusqlite::Error::SqliteFailure(f, _)
                if f.code == rusqlite::ErrorCode::OperationInterrupted =>
            {
                StoreError::Timeout(timeout)
            }
            _ => StoreError::Engine(e.to_string()),
        };

        let mut stmt = conn.prepare(approved.sql()).map_err(engine)?;
        if !stmt.readonly() {
            return Err(StoreError::Engine("statement would modify the store".into()));
        }
        let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
        let width = columns.len();
        let mut rows = Vec::new();
        let mut truncated = false;
        let mut cursor = stmt.query([]).map_err(engine)?;
        while let Some(row) = cursor.next().map_err(engine)? {
            if rows.len() == max_rows {
                truncated = true;
                break;
            }
            let values = (0..width)
                .map(|i| row.get_ref(i).map(json_value))
                .collect::<Result<Vec<_>, _>>()
                .map_err(engine)?;
            rows.push(values);
        }
        drop(cursor);
        drop(stmt);

        let suppressed_groups = match approved.suppression_probe() {
            Some(probe) => {
                let n: i64 = conn.query_row(probe, [], |r| r.get(0)).map_err(engine)?;
                Some(n as u64)
            }
            None => None,
        };
        Ok(ResultSet {
            columns,
            rows,
            truncated,
            suppressed_groups,
            elapsed_ms: started.elapsed().as_millis() as u64,
        })
    }
}

fn json_value(value: ValueRef<'_>) -> Value {
    match value {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::from(i),
        ValueRef::Real(r) => serde_json::Number::from_f64(r)
            .map(Value::Number)
            .unwrap_or(Value::Null),
        ValueRef::Text(t) => Value::String(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::String(hex::encode(b)),
    }
}

fn render_id(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_store::{ingest_csv, SchemaConfig};
    use crate::policy_engine::{decide, PolicyConfig};

    const SCHEMA: &str = r#"
table = "patients"

[[columns]]
name = "encounter_id"
type = "integer"
role = "identifier"
nullable = false

[[columns]]
name = "age"
type = "categorical"
role = "feature"

[[columns]]
name = "stay"
type = "integer"
role = "feature"

[[columns]]
name = "readmitted_30d"
source = "readmitted"
type = "integer"
role = "label"
positive_values = ["<30"]
"#;

    fn fixture(rows: usize) -> (tempfile::TempDir, DatasetStore) {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = String::from("encounter_id,age,stay,readmitted\n");
        for i in 0..rows {
            let age = ["[40-50)", "[50-60)", "?"][i % 3];
            let label = if i % 4 == 0 { "<30" } else { "NO" };
            csv.push_str(&format!("{},{},{},{}\n", 1000 + i, age, i % 7 + 1, label));
        }
        let csv_path = dir.path().join("c.csv");
        std::fs::write(&csv_path, csv).unwrap();
        let db = dir.path().join("s.db");
        ingest_csv(&csv_path, &SchemaConfig::from_toml(SCHEMA).unwrap(), &db).unwrap();
        let store = DatasetStore::open(&db).unwrap();
        (dir, store)
    }

    fn run(store: &DatasetStore, sql: &str) -> ResultSet {
        let policy = PolicyConfig::default();
        let decision = decide(sql, store.catalog(), &policy);
        let approved = decision.approval().unwrap_or_else(|| panic!("{:?}", decision.violations));
        store.execute_approved(approved, policy.max_rows).unwrap()
    }

    #[test]
    fn split_removes_test_rows() {
        let (_dir, store) = fixture(30);
        let split = store.split_dataset(7, 10).unwrap();
        assert_eq!(split.test.len(), 10);
        assert_eq!(split.train_rows, 20);
        assert_eq!(run(&store, "SELECT COUNT(*) AS n FROM patients").rows, vec![vec![Value::from(20)]]);
        let ids: Vec<i64> = split.test.iter().map(|t| t.record_id.parse().unwrap()).collect();
        let listed = ids.iter().map(i64::to_string).collect::<Vec<_>>().join(", ");
        let leaked = run(
            &store,
            &format!("SELECT COUNT(*) FROM patients WHERE encounter_id IN ({listed})"),
        );
        assert_eq!(leaked.rows, Vec::<Vec<Value>>::new());
        assert_eq!(leaked.suppressed_groups, Some(1));
        assert!(matches!(
            store.split_dataset(7, 1),
            Err(StoreError::AlreadySplit { seed: 7, test_size: 10 })
        ));
    }

    #[test]
    fn split_is_a_function_of_the_seed() {
        let ids = |seed| {
            let (_dir, store) = fixture(40);
            store
                .split_dataset(seed, 12)
                .unwrap()
                .test
                .into_iter()
                .map(|t| t.record_id)
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(3), ids(3));
        assert_ne!(ids(3), ids(4));
    }

    #[test]
    fn test_records_omit_missing_features() {
        let (_dir, store) = fixture(9);
        let split = store.split_dataset(1, 9).unwrap();
        for record in &split.test {
            assert!(!record.present_features.contains_key("encounter_id"));
            assert!(!record.present_features.contains_key("readmitted_30d"));
            assert!(record.present_features.values().all(|v| !v.is_null()));
            assert!(matches!(record.true_label, Some(0 | 1)));
        }
        assert_eq!(split.test.iter().filter(|r| !r.present_features.contains_key("age")).count(), 3);
        assert_eq!(split.train_rows, 0);
    }

    #[test]
    fn oversized_split_is_rejected() {
        let (_dir, store) = fixture(5);
        assert!(matches!(
            store.split_dataset(1, 6),
            Err(StoreError::TestSizeTooLarge { requested: 6, available: 5 })
        ));
        assert_eq!(store.split_dataset(1, 0).unwrap().train_rows, 5);
    }

    #[test]
    fn execution_caps_rows_and_reports_engine_errors() {
        let (_dir, store) = fixture(60);
        let result = run(&store, "SELECT stay, COUNT(*) FROM patients GROUP BY stay ORDER BY stay");
        assert_eq!(result.rows.len(), 7);
        let policy = PolicyConfig::default();
        let decision = decide(
            "SELECT stay, COUNT(*) FROM patients GROUP BY stay ORDER BY stay",
            store.catalog(),
            &policy,
        );
        let capped = store.execute_approved(decision.approval().unwrap(), 3).unwrap();
        assert_eq!(capped.rows.len(), 3);
        assert!(capped.truncated);

        let bad = decide("SELECT AVG(nonexistent) FROM patients", store.catalog(), &policy);
        let err = store.execute_approved(bad.approval().unwrap(), 10).unwrap_err();
        assert!(matches!(err, StoreError::Engine(ref m) if m.contains("nonexistent")), "{err}");
    }

    #[test]
    fn open_rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.db");
        Connection::open(&path).unwrap().execute_batch("CREATE TABLE x(a)").unwrap();
        assert!(matches!(DatasetStore::open(&path), Err(StoreError::NotIngested(_))));
        assert!(matches!(
            DatasetStore::open(&dir.path().join("absent.db")),
            Err(StoreError::MissingFile(_))
        ));
    }
}
