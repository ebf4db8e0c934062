//! The plain-text protocol between the model and the loop, and the
//! renderings of everything the loop feeds back to the model.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TaskSpec;
use crate::dataset_store::TestRecord;
use crate::query_gateway::{QueryResponse, QueryStatus};
use crate::policy_engine::Violation;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Query(String),
    FinalAnswer(String),
    Malformed,
}

/// The first ```sql fenced block wins; otherwise the last line reading
/// `ANSWER: <label>` with a label from the task's label space.
pub fn parse_action(text: &str, task: &TaskSpec) -> Action {
    if let Some(sql) = first_sql_block(text) {
        return Action::Query(sql);
    }
    text.lines()
        .rev()
        .find_map(|line| answer_on_line(line, task))
        .map_or(Action::Malformed, Action::FinalAnswer)
}

fn first_sql_block(text: &str) -> Option<String> {
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let line_end = after.find('\n').unwrap_or(after.len());
        let tag = after[..line_end].trim();
        let body_start = (line_end + 1).min(after.len());
        let close = after[body_start..].find("```")?;
        if tag.eq_ignore_ascii_case("sql") {
            let sql = after[body_start..body_start + close].trim();
            if !sql.is_empty() {
                return Some(sql.to_string());
            }
        }
        rest = &after[body_start + close + 3..];
    }
    None
}

fn answer_on_line(line: &str, task: &TaskSpec) -> Option<String> {
    let cleaned = line.trim().trim_matches(|c| c == '*' || c == '_' || c == '`').trim();
    let prefix = task.answer_prefix.trim_end();
    if cleaned.len() < prefix.len() || !cleaned[..prefix.len()].eq_ignore_ascii_case(prefix) {
        return None;
    }
    let value = cleaned[prefix.len()..]
        .trim_matches(|c: char| c.is_whitespace() || "*_`.".contains(c));
    task.label_space.iter().find(|l| l.as_str() == value).cloned()
}

fn render_value(value: &Value) -> String {
    match value {
        Value::Null => "NULL".to_string(),
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or_default();
            let fixed = format!("{x:.4}");
            let trimmed = fixed.trim_end_matches('0').trim_end_matches('.');
            if trimmed == "-0" { "0".to_string() } else { trimmed.to_string() }
        }
        other => other.to_string(),
    }
}

/// Present features only, one `key: value` line each, in key order.
pub fn render_test_record(record: &TestRecord) -> String {
    if record.present_features.is_empty() {
        return "(no features available)".to_string();
    }
    record
        .present_features
        .iter()
        .map(|(k, v)| format!("{k}: {}", render_value(v)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// What the agent learned from one gateway call. Timing and audit
/// bookkeeping are left out so transcripts replay byte-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayExchange {
    pub sql: String,
    pub status: QueryStatus,
    pub violations: Vec<Violation>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub suppressed_groups: u64,
    pub rewritten_sql: Option<String>,
    pub truncated: bool,
    pub error: Option<String>,
}

impl GatewayExchange {
    pub fn new(sql: &str, response: &QueryResponse) -> Self {
        GatewayExchange {
            sql: sql.to_string(),
            status: response.status,
            violations: response.violations.clone(),
            columns: response.columns.clone(),
            rows: response.rows.clone(),
            suppressed_groups: response.suppressed_groups,
            rewritten_sql: response.rewritten_sql.clone(),
            truncated: response.truncated,
            error: response.error.clone(),
        }
    }
}

fn aligned_table(columns: &[String], rows: &[Vec<Value>]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|row| row.iter().map(render_value).collect())
        .collect();
    let widths: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(i, name)| {
            cells
                .iter()
                .filter_map(|row| row.get(i))
                .map(|c| c.chars().count())
                .chain([name.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |items: Vec<String>| -> String {
        items
            .iter()
            .zip(&widths)
            .map(|(item, w)| format!("{item:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(columns.to_vec())];
    out.push(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    out.extend(cells.into_iter().map(line));
    out.join("\n")
}

/// The message the model sees after a gateway call.
pub fn render_gateway_result(exchange: &GatewayExchange, queries_remaining: usize) -> String {
    let mut out = String::new();
    match exchange.status {
        QueryStatus::Rejected => {
            out.push_str("QUERY REJECTED:\n");
            for v in &exchange.violations {
                out.push_str(&format!("- {}: {}\n", v.code, v.message));
            }
        }
        QueryStatus::Approved => match &exchange.error {
            Some(error) => out.push_str(&format!("QUERY FAILED: {error}\n")),
            None => {
                out.push_str(&format!(
                    "QUERY RESULT: {} row(s){}; {} group(s) suppressed below the minimum cohort size\n",
                    exchange.rows.len(),
                    if exchange.truncated { " (truncated)" } else { "" },
                    exchange.suppressed_groups
                ));
                if exchange.rows.is_empty() {
                    out.push_str("(no rows)\n");
                } else {
                    out.push_str(&aligned_table(&exchange.columns, &exchange.rows));
                    out.push('\n');
                }
            }
        },
    }
    out.push_str(&format!("Queries remaining: {queries_remaining}"));
    out
}

pub fn malformed_notice(task: &TaskSpec) -> String {
    format!(
        "Your reply contained neither a ```sql block nor a final answer line. Respond with a sql block or an ANSWER line: {}.",
        task.markers().join(" or ")
    )
}

pub fn llm_only_notice(task: &TaskSpec) -> String {
    format!(
        "Your reply did not contain a final answer line. Respond with exactly one of: {}.",
        task.markers().join(" or ")
    )
}

pub fn budget_exhausted_notice(task: &TaskSpec) -> String {
    format!(
        "No queries remain; answer now with exactly one of: {}.",
        task.markers().join(" or ")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn task() -> TaskSpec {
        TaskSpec::readmission()
    }

    #[test]
    fn sql_block_is_extracted_verbatim() {
        let text = "Let me check.\n```sql\nSELECT COUNT(*) FROM patients\n```\n";
        assert_eq!(
            parse_action(text, &task()),
            Action::Query("SELECT COUNT(*) FROM patients".into())
        );
    }

    #[test]
    fn answer_lines() {
        assert_eq!(parse_action("ANSWER: 1", &task()), Action::FinalAnswer("1".into()));
        assert_eq!(
            parse_action("reasoning...\n**Answer: 0**.", &task()),
            Action::FinalAnswer("0".into())
        );
        assert_eq!(parse_action("ANSWER: maybe", &task()), Action::Malformed);
        assert_eq!(parse_action("I think they will be fine.", &task()), Action::Malformed);
    }

    #[test]
    fn query_wins_over_answer() {
        let text = "ANSWER: 1\n```sql\nSELECT AVG(num_medications) FROM patients\n```";
        assert!(matches!(parse_action(text, &task()), Action::Query(_)));
    }

    #[test]
    fn untagged_and_empty_blocks_are_skipped() {
        let text = "```\nnot sql\n```\n```sql\n\n```\n```SQL\nSELECT 1\n```";
        assert_eq!(parse_action(text, &task()), Action::Query("SELECT 1".into()));
    }

    #[test]
    fn record_lists_only_present_features() {
        let mut features = BTreeMap::new();
        features.insert("race".to_string(), Value::from("Caucasian"));
        features.insert("age".to_string(), Value::from("[70-80)"));
        let record = TestRecord {
            record_id: "1".into(),
            present_features: features,
            true_label: Some(0),
        };
        assert_eq!(render_test_record(&record), "age: [70-80)\nrace: Caucasian");
        let empty = TestRecord {
            record_id: "2".into(),
            present_features: BTreeMap::new(),
            true_label: None,
        };
        assert_eq!(render_test_record(&empty), "(no features available)");
    }

    #[test]
    fn results_render_as_aligned_text() {
        let exchange = GatewayExchange {
            sql: String::new(),
            status: QueryStatus::Approved,
            violations: vec![],
            columns: vec!["age".into(), "rate".into()],
            rows: vec![
                vec![Value::from("[70-80)"), Value::from(0.123456)],
                vec![Value::from("[80-90)"), Value::from(0.5)],
            ],
            suppressed_groups: 2,
            rewritten_sql: None,
            truncated: false,
            error: None,
        };
        assert_eq!(
            render_gateway_result(&exchange, 3),
            "QUERY RESULT: 2 row(s); 2 group(s) suppressed below the minimum cohort size\n\
             age     | rate\n\
             --------+-------\n\
             [70-80) | 0.1235\n\
             [80-90) | 0.5\n\
             Queries remaining: 3"
        );
    }
}
