use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::policy_engine::{Verdict, ViolationCode};

/// One request as recorded by the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    /// RFC 3339, UTC.
    pub timestamp: String,
    pub session_id: String,
    pub raw_sql: String,
    pub verdict: Verdict,
    pub violation_codes: Vec<ViolationCode>,
    pub rewritten_sql: Option<String>,
    pub row_count: usize,
    pub elapsed_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything in an entry except what the log assigns.
#[derive(Debug, Clone)]
pub struct AuditRecord {
    pub session_id: String,
    pub raw_sql: String,
    pub verdict: Verdict,
    pub violation_codes: Vec<ViolationCode>,
    pub rewritten_sql: Option<String>,
    pub row_count: usize,
    pub elapsed_ms: u64,
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("audit log {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("audit log {}, line {line}: {message}", path.display())]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid audit range: {0}")]
    InvalidRange(String),
}

struct Inner {
    file: Option<File>,
    entries: Vec<AuditEntry>,
}

/// Append-only, gapless audit trail. A single mutex serializes appends, so
/// sequence numbers are assigned in exactly the order entries hit disk.
pub struct AuditLog {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog {
            path: None,
            inner: Mutex::new(Inner {
                file: None,
                entries: Vec::new(),
            }),
        }
    }

    /// Opens (or creates) an NDJSON log, resuming its sequence numbering.
    pub fn open(path: &Path) -> Result<Self, AuditError> {
        let io = |source| AuditError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut entries = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: AuditEntry =
                    serde_json::from_str(&line).map_err(|e| AuditError::Corrupt {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                if entry.seq != entries.len() as u64 + 1 {
                    return Err(AuditError::Corrupt {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: format!(
                            "sequence number {} breaks the run ending at {}",
                            entry.seq,
                            entries.len()
                        ),
                    });
                }
                entries.push(entry);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        Ok(AuditLog {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                file: Some(file),
                entries,
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, record: AuditRecord) -> Result<AuditEntry, AuditError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let entry = AuditEntry {
            seq: inner.entries.len() as u64 + 1,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            session_id: record.session_id,
            raw_sql: record.raw_sql,
            verdict: record.verdict,
            violation_codes: record.violation_codes,
            rewritten_sql: record.rewritten_sql,
            row_count: record.row_count,
            elapsed_ms: record.elapsed_ms,
            error: record.error,
        };
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&entry).expect("audit entry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| AuditError::Io {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                })?;
        }
        inner.entries.push(entry.clone());
        Ok(entry)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries with `from <= seq <= to`; both bounds optional and 1-based.
    pub fn range(&self, from: Option<u64>, to: Option<u64>) -> Result<Vec<AuditEntry>, AuditError> {
        if from == Some(0) || to == Some(0) {
            return Err(AuditError::InvalidRange(
                "sequence numbers start at 1".to_string(),
            ));
        }
        if let (Some(a), Some(b)) = (from, to) {
            if a > b {
                return Err(AuditError::InvalidRange(format!("from {a} is after to {b}")));
            }
        }
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let lo = from.unwrap_or(1) as usize - 1;
        let hi = to.map_or(inner.entries.len(), |t| (t as usize).min(inner.entries.len()));
        Ok(inner.entries.get(lo..hi).map(<[_]>::to_vec).unwrap_or_default())
    }

    /// Forces appended entries to stable storage.
    pub fn sync(&self) -> Result<(), AuditError> {
        let inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(file) = &inner.file {
            file.sync_all().map_err(|source| AuditError::Io {
                path: self.path.clone().unwrap_or_default(),
                source,
            })?;
        }
        Ok(())
    }
}
