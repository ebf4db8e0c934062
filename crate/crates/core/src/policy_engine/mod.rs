//! Static privacy policy for agent-issued SQL.
//!
//! A query is approved only when it provably returns summary-level
//! statistics: every output item is an allowed aggregate or a GROUP BY key,
//! no identifier column leaks, and the statement shape stays inside the
//! conservative subset the analyzer understands. Approved queries are then
//! rewritten so that every group (or ungrouped result) covering fewer than
//! `k_min` rows is suppressed.

pub mod ast;
pub mod lexer;
pub mod parser;
mod rewrite;
mod validate;
pub mod violation;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset_store::SchemaCatalog;

pub use ast::QueryAst;
pub use parser::parse_sql;
pub use rewrite::{rewrite_threshold, suppression_probe};
pub use validate::validate;
pub use violation::{Location, Violation, ViolationCode};

/// Smallest cohort size any policy may use.
pub const K_FLOOR: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("k_min must be at least {K_FLOOR}, got {0}")]
    KBelowFloor(u32),
    #[error("allowed_aggregates must include COUNT: the cohort threshold is expressed with COUNT(*)")]
    CountRequired,
    #[error("max_rows must be positive")]
    ZeroMaxRows,
    #[error("invalid policy file {path}: {message}")]
    File { path: String, message: String },
}

/// Minimum number of rows behind every emitted group. Cannot be built below
/// [`K_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct KThreshold(u32);

impl KThreshold {
    pub fn new(k: u32) -> Result<Self, PolicyError> {
        if k < K_FLOOR {
            Err(PolicyError::KBelowFloor(k))
        } else {
            Ok(KThreshold(k))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl Default for KThreshold {
    fn default() -> Self {
        KThreshold(K_FLOOR)
    }
}

impl TryFrom<u32> for KThreshold {
    type Error = PolicyError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        KThreshold::new(value)
    }
}

impl From<KThreshold> for u32 {
    fn from(k: KThreshold) -> u32 {
        k.0
    }
}

impl fmt::Display for KThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AllowedAggregate {
    Count,
    CountDistinct,
    Avg,
    Sum,
    Stddev,
    Variance,
}

impl AllowedAggregate {
    pub fn sql_name(self) -> &'static str {
        match self {
            AllowedAggregate::Count => "COUNT",
            AllowedAggregate::CountDistinct => "COUNT(DISTINCT ...)",
            AllowedAggregate::Avg => "AVG",
            AllowedAggregate::Sum => "SUM",
            AllowedAggregate::Stddev => "STDDEV",
            AllowedAggregate::Variance => "VARIANCE",
        }
    }
}

fn default_aggregates() -> BTreeSet<AllowedAggregate> {
    [
        AllowedAggregate::Count,
        AllowedAggregate::CountDistinct,
        AllowedAggregate::Avg,
        AllowedAggregate::Sum,
        AllowedAggregate::Stddev,
        AllowedAggregate::Variance,
    ]
    .into_iter()
    .collect()
}

fn default_max_rows() -> usize {
    100
}

fn default_max_query_length() -> usize {
    4000
}

/// Privacy rules applied to every query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub k_min: KThreshold,
    #[serde(default = "default_aggregates")]
    pub allowed_aggregates: BTreeSet<AllowedAggregate>,
    #[serde(default)]
    pub allow_min_max: bool,
    /// Extra denied columns; identifier-role catalog columns are always denied.
    #[serde(default)]
    pub denied_columns: BTreeSet<String>,
    #[serde(default = "default_max_rows")]
    pub max_rows: usize,
    #[serde(default = "default_max_query_length")]
    pub max_query_length: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            k_min: KThreshold::default(),
            allowed_aggregates: default_aggregates(),
            allow_min_max: false,
            denied_columns: BTreeSet::new(),
            max_rows: default_max_rows(),
            max_query_length: default_max_query_length(),
        }
    }
}

impl PolicyConfig {
    pub fn check(&self) -> Result<(), PolicyError> {
        if !self.allowed_aggregates.contains(&AllowedAggregate::Count) {
            return Err(PolicyError::CountRequired);
        }
        if self.max_rows == 0 {
            return Err(PolicyError::ZeroMaxRows);
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, PolicyError> {
        let config: PolicyConfig = toml::from_str(text).map_err(|e| PolicyError::File {
            path: "<inline>".to_string(),
            message: e.to_string(),
        })?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|e| PolicyError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            PolicyError::File { message, .. } => PolicyError::File {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// Effective denied set: configured columns plus catalog identifiers,
    /// lowercased.
    pub fn denied_set(&self, catalog: &SchemaCatalog) -> BTreeSet<String> {
        self.denied_columns
            .iter()
            .map(|c| c.to_ascii_lowercase())
            .chain(catalog.identifier_columns().map(|c| c.name.to_ascii_lowercase()))
            .collect()
    }

    /// Plain-text rules for the schema document and the system prompt.
    pub fn summary(&self) -> String {
        let k = self.k_min;
        let mut aggregates: Vec<&str> =
            self.allowed_aggregates.iter().map(|a| a.sql_name()).collect();
        if self.allow_min_max {
            aggregates.extend(["MIN", "MAX"]);
        }
        let mut out = String::from("QUERY POLICY\n");
        out.push_str(
            "  - Only summary-level statistics may be requested: every selected item must be an \
             allowed aggregate or a GROUP BY key.\n",
        );
        out.push_str(&format!("  - Allowed aggregates: {}.\n", aggregates.join(", ")));
        if !self.allow_min_max {
            out.push_str("  - MIN and MAX are not allowed.\n");
        }
        out.push_str(&format!(
            "  - Minimum cohort size k = {k}: any group, or any ungrouped result, covering fewer \
             than {k} rows is suppressed from the output.\n"
        ));
        out.push_str(
            "  - Identifier columns may appear only in WHERE or inside COUNT(DISTINCT ...); never \
             select, group by, order by or filter groups on them.\n",
        );
        if !self.denied_columns.is_empty() {
            let denied: Vec<&str> = self.denied_columns.iter().map(String::as_str).collect();
            out.push_str(&format!(
                "  - Additional restricted columns: {}.\n",
                denied.join(", ")
            ));
        }
        out.push_str(
            "  - Not allowed: SELECT *, SELECT DISTINCT over raw columns, joins, UNION/INTERSECT/\
             EXCEPT, WITH (common table expressions), window functions, ORDER BY on items that \
             are not selected, and more than one statement per query.\n",
        );
        out.push_str("  - Subqueries must follow the same rules.\n");
        out.push_str(&format!(
            "  - At most {} rows are returned per query.\n",
            self.max_rows
        ));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Approved,
    Rejected,
}

/// Digest binding an approval to exactly one rewritten query text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApprovalToken(String);

impl ApprovalToken {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn approval_key() -> &'static [u8; 32] {
    static KEY: OnceLock<[u8; 32]> = OnceLock::new();
    KEY.get_or_init(rand::random)
}

fn sign(sql: &str, probe: Option<&str>) -> ApprovalToken {
    let mut hasher = Sha256::new();
    hasher.update(approval_key());
    hasher.update((sql.len() as u64).to_le_bytes());
    hasher.update(sql.as_bytes());
    if let Some(probe) = probe {
        hasher.update([1u8]);
        hasher.update(probe.as_bytes());
    } else {
        hasher.update([0u8]);
    }
    ApprovalToken(hex::encode(hasher.finalize()))
}

/// A rewritten query that passed the policy. Only [`decide`] can build one,
/// and the dataset store refuses to execute anything else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApprovedQuery {
    sql: String,
    suppression_probe: Option<String>,
    token: ApprovalToken,
}

impl ApprovedQuery {
    fn new(sql: String, suppression_probe: Option<String>) -> Self {
        let token = sign(&sql, suppression_probe.as_deref());
        ApprovedQuery {
            sql,
            suppression_probe,
            token,
        }
    }

    pub fn sql(&self) -> &str {
        &self.sql
    }

    /// Query returning the number of groups the threshold removed.
    pub fn suppression_probe(&self) -> Option<&str> {
        self.suppression_probe.as_deref()
    }

    pub fn token(&self) -> &ApprovalToken {
        &self.token
    }

    /// True when the token matches the query text it carries.
    pub fn verify(&self) -> bool {
        sign(&self.sql, self.suppression_probe.as_deref()) == self.token
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
    approved: Option<ApprovedQuery>,
}

impl PolicyDecision {
    fn rejected(violations: Vec<Violation>) -> Self {
        debug_assert!(!violations.is_empty());
        PolicyDecision {
            verdict: Verdict::Rejected,
            violations,
            approved: None,
        }
    }

    pub fn is_approved(&self) -> bool {
        self.verdict == Verdict::Approved
    }

    pub fn rewritten_sql(&self) -> Option<&str> {
        self.approved.as_ref().map(ApprovedQuery::sql)
    }

    pub fn approval(&self) -> Option<&ApprovedQuery> {
        self.approved.as_ref()
    }

    pub fn approval_token(&self) -> Option<&ApprovalToken> {
        self.approved.as_ref().map(ApprovedQuery::token)
    }

    pub fn codes(&self) -> Vec<ViolationCode> {
        self.violations.iter().map(|v| v.code).collect()
    }
}

impl Serialize for PolicyDecision {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("PolicyDecision", 4)?;
        s.serialize_field("verdict", &self.verdict)?;
        s.serialize_field("violations", &self.violations)?;
        s.serialize_field("rewritten_sql", &self.rewritten_sql())?;
        s.serialize_field("approval_token", &self.approval_token())?;
        s.end()
    }
}

/// Parses, validates and rewrites one query. Every failure is a rejected
/// decision carrying all violations found.
pub fn decide(text: &str, catalog: &SchemaCatalog, policy: &PolicyConfig) -> PolicyDecision {
    if text.len() > policy.max_query_length {
        return PolicyDecision::rejected(vec![Violation::new(
            ViolationCode::QueryTooLong,
            format!(
                "query is {} bytes; the limit is {}",
                text.len(),
                policy.max_query_length
            ),
            None,
        )]);
    }
    let ast = match parse_sql(text) {
        Ok(ast) => ast,
        Err(violations) => return PolicyDecision::rejected(violations),
    };
    let violations = validate(&ast, catalog, policy);
    if !violations.is_empty() {
        return PolicyDecision::rejected(violations);
    }
    let rewritten = rewrite_threshold(&ast, policy.k_min);
    let probe = suppression_probe(&ast, policy.k_min);
    PolicyDecision {
        verdict: Verdict::Approved,
        violations: Vec::new(),
        approved: Some(ApprovedQuery::new(rewritten.to_string(), probe)),
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::dataset_store::SchemaConfig;

    use super::*;

    pub fn catalog() -> SchemaCatalog {
        SchemaConfig::from_toml(
            r#"
            table = "patients"
            [[columns]]
            name = "encounter_id"
            type = "integer"
            role = "identifier"
            [[columns]]
            name = "patient_nbr"
            type = "integer"
            role = "identifier"
            [[columns]]
            name = "age"
            type = "categorical"
            role = "feature"
            [[columns]]
            name = "race"
            type = "categorical"
            role = "feature"
            [[columns]]
            name = "insulin"
            type = "categorical"
            role = "feature"
            [[columns]]
            name = "time_in_hospital"
            type = "integer"
            role = "feature"
            [[columns]]
            name = "num_medications"
            type = "integer"
            role = "feature"
            [[columns]]
            name = "num_lab_procedures"
            type = "integer"
            role = "feature"
            [[columns]]
            name = "number_inpatient"
            type = "integer"
            role = "feature"
            [[columns]]
            name = "readmitted_30d"
            type = "integer"
            role = "label"
            "#,
        )
        .unwrap()
        .catalog()
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::catalog;
    use super::*;

    #[test]
    fn k_floor_cannot_be_lowered() {
        assert!(KThreshold::new(1).is_err());
        assert!(KThreshold::new(0).is_err());
        assert_eq!(KThreshold::new(2).unwrap().get(), 2);
        assert!(PolicyConfig::from_toml("k_min = 1").is_err());
        assert_eq!(PolicyConfig::from_toml("k_min = 5").unwrap().k_min.get(), 5);
    }

    #[test]
    fn defaults_match_the_documented_policy() {
        let p = PolicyConfig::from_toml("").unwrap();
        assert_eq!(p.k_min.get(), 2);
        assert!(!p.allow_min_max);
        assert_eq!(p.max_rows, 100);
        assert_eq!(p.allowed_aggregates.len(), 6);
    }

    #[test]
    fn count_must_stay_allowed() {
        let err = PolicyConfig::from_toml(r#"allowed_aggregates = ["AVG"]"#);
        assert!(matches!(err, Err(PolicyError::CountRequired)));
    }

    #[test]
    fn approved_average_with_filter_is_wrapped() {
        let d = decide(
            "SELECT AVG(time_in_hospital) FROM patients WHERE number_inpatient > 2",
            &catalog(),
            &PolicyConfig::default(),
        );
        assert_eq!(d.verdict, Verdict::Approved);
        assert_eq!(
            d.rewritten_sql().unwrap(),
            "SELECT AVG(time_in_hospital) FROM patients WHERE number_inpatient > 2 HAVING COUNT(*) >= 2"
        );
        assert!(d.approval().unwrap().verify());
    }

    #[test]
    fn bare_race_with_limit_is_rejected() {
        let d = decide(
            "SELECT race FROM patients LIMIT 5",
            &catalog(),
            &PolicyConfig::default(),
        );
        assert_eq!(d.verdict, Verdict::Rejected);
        assert_eq!(d.codes(), vec![ViolationCode::BareProjection]);
        assert!(d.rewritten_sql().is_none());
        assert!(d.approval_token().is_none());
    }

    #[test]
    fn count_distinct_identifier_is_allowed() {
        let d = decide(
            "SELECT COUNT(DISTINCT patient_nbr) FROM patients WHERE insulin = 'Up'",
            &catalog(),
            &PolicyConfig::default(),
        );
        assert!(d.is_approved(), "{:?}", d.violations);
    }

    #[test]
    fn oversized_queries_are_rejected_without_parsing() {
        let policy = PolicyConfig {
            max_query_length: 10,
            ..PolicyConfig::default()
        };
        let d = decide("SELECT COUNT(*) FROM patients", &catalog(), &policy);
        assert_eq!(d.codes(), vec![ViolationCode::QueryTooLong]);
    }

    #[test]
    fn tampered_approvals_fail_verification() {
        let d = decide("SELECT COUNT(*) FROM patients", &catalog(), &PolicyConfig::default());
        let mut approved = d.approval().unwrap().clone();
        assert!(approved.verify());
        approved.sql.push_str(" LIMIT 1");
        assert!(!approved.verify());
    }

    #[test]
    fn decision_serializes_with_rewrite_and_token() {
        let d = decide("SELECT COUNT(*) FROM patients", &catalog(), &PolicyConfig::default());
        let json = serde_json::to_value(&d).unwrap();
        assert_eq!(json["verdict"], "APPROVED");
        assert!(json["rewritten_sql"].as_str().unwrap().ends_with("HAVING COUNT(*) >= 2"));
        assert_eq!(json["approval_token"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn summary_states_threshold() {
        let text = PolicyConfig::default().summary();
        assert!(text.contains("Minimum cohort size k = 2"));
    }
}
