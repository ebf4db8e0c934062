//! Embedded cohort store: CSV ingest, schema catalog, train/test split and
//! the single execution path for approved SQL.

mod aggregates;
pub mod catalog;
mod ingest;
mod store;

use std::path::PathBuf;

pub use catalog::{
    export_schema_doc, ColumnConfig, ColumnMeta, ColumnRole, SchemaCatalog, SchemaConfig,
    SchemaDoc, TableMeta, ValueType,
};
pub use ingest::{ingest_csv, IngestReport, RejectedRow};
pub use store::{DatasetStore, ResultSet, SplitOutcome, TestRecord, DEFAULT_QUERY_TIMEOUT};

/// Installs the STDDEV/VARIANCE aggregates on a connection opened outside
/// the store, so external tooling sees the same SQL dialect.
pub fn register_aggregates(conn: &rusqlite::Connection) -> Result<(), StoreError> {
    aggregates::register(conn)?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("invalid schema config: {0}")]
    Schema(String),
    #[error("schema catalog is empty")]
    EmptyCatalog,
    #[error("CSV header does not match the schema config (unexpected: [{}], absent: [{}])", unexpected.join(", "), absent.join(", "))]
    HeaderMismatch {
        unexpected: Vec<String>,
        absent: Vec<String>,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("{rejected} rows rejected, more than the allowed {limit}; first: {first}")]
    TooManyRejected {
        rejected: usize,
        limit: usize,
        first: String,
    },
    #[error("store already exists at {} (remove it or ingest with --force)", .0.display())]
    AlreadyExists(PathBuf),
    #[error("{} is not an ingested cohort store", .0.display())]
    NotIngested(PathBuf),
    #[error("store has already been split (seed {seed}, test_size {test_size})")]
    AlreadySplit { seed: u64, test_size: usize },
    #[error("test_size {requested} exceeds the {available} rows in the store")]
    TestSizeTooLarge { requested: usize, available: usize },
    #[error("query execution failed: {0}")]
    Engine(String),
    #[error("query exceeded the {0:?} execution time limit")]
    Timeout(std::time::Duration),
    #[error("approval token does not match the query text")]
    InvalidApproval,
    #[error(transparent)]
    Sqlite(#[from] rusqlite::Error),
}
