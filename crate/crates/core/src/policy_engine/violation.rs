use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ast::Span;

/// Stable violation codes. The string forms are part of the gateway's wire
/// format and of the labeled policy corpus; never rename them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    /// A row-level column (or `*`) is projected outside GROUP BY keys.
    BareProjection,
    /// A GROUP BY key involves an identifier column.
    IdentifierGrouping,
    /// Aggregate outside the allow-list, MIN/MAX when disabled, or a window function.
    ForbiddenAggregate,
    /// Not a SELECT (DML, DDL, PRAGMA, transaction control, ...).
    ForbiddenStatement,
    MultiStatement,
    /// SELECT DISTINCT over non-aggregate items.
    DistinctProjection,
    /// A nested query fails validation on its own.
    SubqueryViolation,
    /// UNION / INTERSECT / EXCEPT.
    SetOperation,
    /// WITH ... common-table expressions.
    CteForbidden,
    /// ORDER BY refers to something that is not projected.
    OrderByRaw,
    ParseError,
    /// An identifier column appears in an output position other than
    /// `COUNT(DISTINCT <identifier>)`.
    IdentifierExposure,
    /// Joins or multiple FROM items.
    JoinForbidden,
    /// FROM names a relation that is not in the schema catalog.
    UnknownTable,
    /// Text longer than the configured maximum; rejected without parsing.
    QueryTooLong,
}

impl ViolationCode {
    pub const ALL: [ViolationCode; 15] = [
        ViolationCode::BareProjection,
        ViolationCode::IdentifierGrouping,
        ViolationCode::ForbiddenAggregate,
        ViolationCode::ForbiddenStatement,
        ViolationCode::MultiStatement,
        ViolationCode::DistinctProjection,
        ViolationCode::SubqueryViolation,
        ViolationCode::SetOperation,
        ViolationCode::CteForbidden,
        ViolationCode::OrderByRaw,
        ViolationCode::ParseError,
        ViolationCode::IdentifierExposure,
        ViolationCode::JoinForbidden,
        ViolationCode::UnknownTable,
        ViolationCode::QueryTooLong,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::BareProjection => "BARE_PROJECTION",
            ViolationCode::IdentifierGrouping => "IDENTIFIER_GROUPING",
            ViolationCode::ForbiddenAggregate => "FORBIDDEN_AGGREGATE",
            ViolationCode::ForbiddenStatement => "FORBIDDEN_STATEMENT",
            ViolationCode::MultiStatement => "MULTI_STATEMENT",
            ViolationCode::DistinctProjection => "DISTINCT_PROJECTION",
            ViolationCode::SubqueryViolation => "SUBQUERY_VIOLATION",
            ViolationCode::SetOperation => "SET_OPERATION",
            ViolationCode::CteForbidden => "CTE_FORBIDDEN",
            ViolationCode::OrderByRaw => "ORDER_BY_RAW",
            ViolationCode::ParseError => "PARSE_ERROR",
            ViolationCode::IdentifierExposure => "IDENTIFIER_EXPOSURE",
            ViolationCode::JoinForbidden => "JOIN_FORBIDDEN",
            ViolationCode::UnknownTable => "UNKNOWN_TABLE",
            ViolationCode::QueryTooLong => "QUERY_TOO_LONG",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown violation code '{0}'")]
pub struct UnknownViolationCode(pub String);

impl FromStr for ViolationCode {
    type Err = UnknownViolationCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ViolationCode::ALL
            .into_iter()
            .find(|code| code.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownViolationCode(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
    /// Byte range in the submitted text, when the violation has one.
    pub location: Option<Location>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub start: usize,
    pub end: usize,
}

impl From<Span> for Location {
    fn from(span: Span) -> Self {
        Location {
            start: span.start,
            end: span.end,
        }
    }
}

impl Violation {
    pub fn new(code: ViolationCode, message: impl Into<String>, span: Option<Span>) -> Self {
        Self {
            code,
            message: message.into(),
            location: span.map(Location::from),
        }
    }

    pub fn at(code: ViolationCode, message: impl Into<String>, span: Span) -> Self {
        Self::new(code, message, Some(span))
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)?;
        if let Some(loc) = self.location {
            write!(f, " (at {}..{})", loc.start, loc.end)?;
        }
        Ok(())
    }
}
