//! The firewall between the agent and the cohort store. Every request is
//! decided by the policy engine, executed only if approved, and audited
//! before a response leaves the process.

mod audit;
mod client;
mod http;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset_store::{DatasetStore, SchemaDoc, StoreError, DEFAULT_QUERY_TIMEOUT};
use crate::policy_engine::{decide, PolicyConfig, PolicyError, Verdict, Violation};

pub use audit::{AuditEntry, AuditError, AuditLog, AuditRecord};
pub use client::{ClientError, GatewayClient};
pub use http::{router, serve, GatewayHandle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub session_id: String,
    pub sql: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStatus {
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub status: QueryStatus,
    pub violations: Vec<Violation>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub suppressed_groups: u64,
    pub rewritten_sql: Option<String>,
    pub elapsed_ms: u64,
    #[serde(default)]
    pub truncated: bool,
    /// Execution failure of an approved query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Sequence number of the audit entry for this request.
    pub audit_seq: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("store not ready: no ingested cohort is loaded")]
    NotReady,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid gateway config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("gateway runtime failed: {0}")]
    Runtime(String),
}

fn default_bind() -> String {
    "127.0.0.1:8080".to_string()
}

fn default_audit_log() -> PathBuf {
    PathBuf::from("audit.ndjson")
}

fn default_timeout_ms() -> u64 {
    DEFAULT_QUERY_TIMEOUT.as_millis() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    pub store_path: PathBuf,
    #[serde(default = "default_audit_log")]
    pub audit_log: PathBuf,
    #[serde(default = "default_timeout_ms")]
    pub query_timeout_ms: u64,
    #[serde(default)]
    pub policy: PolicyConfig,
}

impl GatewayConfig {
    pub fn new(store_path: impl Into<PathBuf>) -> Self {
        GatewayConfig {
            bind: default_bind(),
            store_path: store_path.into(),
            audit_log: default_audit_log(),
            query_timeout_ms: default_timeout_ms(),
            policy: PolicyConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let config_error = |message: String| GatewayError::Config {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| config_error(e.to_string()))?;
        let config: GatewayConfig = toml::from_str(&text).map_err(|e| config_error(e.to_string()))?;
        config.policy.check()?;
        Ok(config)
    }
}

/// Request handling without the transport; the HTTP layer is a thin shell
/// around this.
pub struct Gateway {
    store: Option<DatasetStore>,
    policy: PolicyConfig,
    schema: Option<SchemaDoc>,
    audit: AuditLog,
}

impl Gateway {
    pub fn new(store: DatasetStore, policy: PolicyConfig, audit: AuditLog) -> Result<Self, GatewayError> {
        policy.check()?;
        let schema = store.schema_doc(&policy)?;
        Ok(Gateway {
            store: Some(store),
            policy,
            schema: Some(schema),
            audit,
        })
    }

    /// A gateway with no store loaded; every data request answers "not ready".
    pub fn not_ready(policy: PolicyConfig, audit: AuditLog) -> Self {
        Gateway {
            store: None,
            policy,
            schema: None,
            audit,
        }
    }

    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let store = DatasetStore::open(&config.store_path)?
            .with_timeout(Duration::from_millis(config.query_timeout_ms));
        let audit = AuditLog::open(&config.audit_log)?;
        Gateway::new(store, config.policy.clone(), audit)
    }

    pub fn is_ready(&self) -> bool {
        self.store.is_some()
    }

    pub fn policy(&self) -> &PolicyConfig {
        &self.policy
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    /// Decides, executes if approved, and audits. The audit entry is
    /// written before this returns; if it cannot be written no result is
    /// released.
    pub fn handle_query(&self, request: &QueryRequest) -> Result<QueryResponse, GatewayError> {
        let started = Instant::now();
        let Some(store) = &self.store else {
            self.audit.append(AuditRecord {
                session_id: request.session_id.clone(),
                raw_sql: request.sql.clone(),
                verdict: Verdict::Rejected,
                violation_codes: Vec::new(),
                rewritten_sql: None,
                row_count: 0,
                elapsed_ms: started.elapsed().as_millis() as u64,
                error: Some("store not ready".to_string()),
            })?;
            return Err(GatewayError::NotReady);
        };

        let decision = decide(&request.sql, store.catalog(), &self.policy);
        let mut response = QueryResponse {
            status: QueryStatus::Rejected,
            violations: decision.violations.clone(),
            columns: Vec::new(),
            rows: Vec::new(),
            suppressed_groups: 0,
            rewritten_sql: None,
            elapsed_ms: 0,
            truncated: false,
            error: None,
            audit_seq: 0,
        };
        if let Some(approved) = decision.approval() {
            response.status = QueryStatus::Approved;
            response.rewritten_sql = Some(approved.sql().to_string());
            match store.execute_approved(approved, self.policy.max_rows) {
                Ok(result) => {
                    response.columns = result.columns;
                    response.rows = result.rows;
                    response.truncated = result.truncated;
                    response.suppressed_groups = result.suppressed_groups.unwrap_or(0);
                }
                Err(e) => response.error = Some(e.to_string()),
            }
        }
        response.elapsed_ms = started.elapsed().as_millis() as u64;

        let entry = self.audit.append(AuditRecord {
            session_id: request.session_id.clone(),
            raw_sql: request.sql.clone(),
            verdict: decision.verdict,
            violation_codes: decision.codes(),
            rewritten_sql: response.rewritten_sql.clone(),
            row_count: response.rows.len(),
            elapsed_ms: response.elapsed_ms,
            error: response.error.clone(),
        })?;
        response.audit_seq = entry.seq;
        Ok(response)
    }

    pub fn handle_schema(&self) -> Result<SchemaDoc, GatewayError> {
        self.schema.clone().ok_or(GatewayError::NotReady)
    }

    pub fn handle_audit(&self, from: Option<u64>, to: Option<u64>) -> Result<Vec<AuditEntry>, GatewayError> {
        Ok(self.audit.range(from, to)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(sql: &str) -> QueryRequest {
        QueryRequest {
            session_id: "t".to_string(),
            sql: sql.to_string(),
        }
    }

    #[test]
    fn not_ready_gateway_audits_and_refuses() {
        let gw = Gateway::not_ready(PolicyConfig::default(), AuditLog::in_memory());
        assert!(matches!(gw.handle_schema(), Err(GatewayError::NotReady)));
        assert!(matches!(gw.handle_query(&request("SELECT 1")), Err(GatewayError::NotReady)));
        let entries = gw.handle_audit(None, None).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].verdict, Verdict::Rejected);
        assert_eq!(entries[0].row_count, 0);
    }

    #[test]
    fn config_defaults_and_policy_floor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.toml");
        std::fs::write(&path, "store_path = \"s.db\"\n[policy]\nk_min = 5\n").unwrap();
        let config = GatewayConfig::load(&path).unwrap();
        assert_eq!(config.bind, "127.0.0.1:8080");
        assert_eq!(config.policy.k_min.get(), 5);
        std::fs::write(&path, "store_path = \"s.db\"\n[policy]\nk_min = 1\n").unwrap();
        assert!(GatewayConfig::load(&path).is_err());
    }
}
