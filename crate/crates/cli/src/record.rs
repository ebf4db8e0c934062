//! Turning user-supplied feature values into a [`TestRecord`].

use std::collections::BTreeMap;

use qdt_core::dataset_store::catalog::{ColumnMeta, ColumnRole, TableMeta, ValueType};
use qdt_core::dataset_store::TestRecord;
use serde_json::Value;

use crate::exit::UsageError;

fn feature_names(table: &TableMeta) -> String {
    table
        .features()
        .map(|c| c.name.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

fn feature_column<'a>(table: &'a TableMeta, key: &str) -> Result<&'a ColumnMeta, UsageError> {
    table
        .column(key)
        .filter(|c| c.role == ColumnRole::Feature)
        .ok_or_else(|| {
            UsageError(format!(
                "unknown feature '{key}'; valid keys: {}",
                feature_names(table)
            ))
        })
}

fn typed_value(column: &ColumnMeta, key: &str, raw: &str) -> Result<Value, UsageError> {
    let bad = |kind: &str| UsageError(format!("feature '{key}': '{raw}' is not {kind}"));
    let value = match column.value_type {
        ValueType::Integer => Value::from(raw.parse::<i64>().map_err(|_| bad("an integer"))?),
        ValueType::Real => {
            let x = raw.parse::<f64>().map_err(|_| bad("a number"))?;
            serde_json::Number::from_f64(x).map(Value::Number).ok_or_else(|| bad("finite"))?
        }
        ValueType::Categorical => {
            if let Some(domain) = &column.categorical_domain {
                if !domain.iter().any(|d| d == raw) {
                    return Err(UsageError(format!(
                        "feature '{key}': '{raw}' is not one of {}",
                        domain.join(", ")
                    )));
                }
            }
            Value::from(raw)
        }
    };
    Ok(value)
}

/// Builds a record from `key=value` pairs. Empty values and the `?`
/// sentinel mean "missing" and are left out.
pub fn from_pairs(
    table: &TableMeta,
    record_id: &str,
    pairs: &[(String, String)],
) -> Result<TestRecord, UsageError> {
    let mut features = BTreeMap::new();
    for (key, raw) in pairs {
        let raw = raw.trim();
        let key = key.trim();
        let column = feature_column(table, key)?;
        if raw.is_empty() || raw == "?" {
            continue;
        }
        let value = typed_value(column, key, raw)?;
        if features.insert(key.to_string(), value).is_some() {
            return Err(UsageError(format!("feature '{key}' given twice")));
        }
    }
    Ok(TestRecord {
        record_id: record_id.to_string(),
        present_features: features,
        true_label: None,
    })
}

pub fn parse_pair(text: &str) -> Result<(String, String), UsageError> {
    text.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| UsageError(format!("expected KEY=VALUE, got '{text}'")))
}

/// A record file is a JSON object of feature values, or `key=value` lines.
pub fn pairs_from_file(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let object: serde_json::Map<String, Value> = serde_json::from_str(trimmed)
            .map_err(|e| UsageError(format!("record file is not a JSON object: {e}")))?;
        return Ok(object
            .into_iter()
            .filter(|(_, v)| !v.is_null())
            .map(|(k, v)| {
                let raw = match v {
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, raw)
            })
            .collect());
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_pair)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> TableMeta {
        let col = |name: &str, value_type, role, domain: Option<Vec<&str>>| ColumnMeta {
            name: name.into(),
            value_type,
            role,
            categorical_domain: domain.map(|d| d.into_iter().map(String::from).collect()),
            nullable: true,
            description: None,
        };
        TableMeta {
            name: "patients".into(),
            columns: vec![
                col("patient_nbr", ValueType::Integer, ColumnRole::Identifier, None),
                col("age", ValueType::Categorical, ColumnRole::Feature, Some(vec!["[70-80)"])),
                col("num_medications", ValueType::Integer, ColumnRole::Feature, None),
                col("readmitted_30d", ValueType::Integer, ColumnRole::Label, None),
            ],
        }
    }

    fn pairs(items: &[&str]) -> Vec<(String, String)> {
        items.iter().map(|s| parse_pair(s).unwrap()).collect()
    }

    #[test]
    fn values_are_typed_and_missing_ones_dropped() {
        let r = from_pairs(&table(), "x", &pairs(&["age=[70-80)", "num_medications=12", "patient_nbr=?"]));
        let r = r.unwrap_err();
        assert!(r.0.contains("unknown feature 'patient_nbr'"));
        let r = from_pairs(&table(), "x", &pairs(&["age=[70-80)", "num_medications=12"])).unwrap();
        assert_eq!(r.present_features["num_medications"], Value::from(12));
        let r = from_pairs(&table(), "x", &pairs(&["age=?", "num_medications="])).unwrap();
        assert!(r.present_features.is_empty());
    }

    #[test]
    fn unknown_keys_list_the_valid_ones() {
        let err = from_pairs(&table(), "x", &pairs(&["foo=1"])).unwrap_err();
        assert_eq!(err.0, "unknown feature 'foo'; valid keys: age, num_medications");
        assert!(from_pairs(&table(), "x", &pairs(&["readmitted_30d=1"])).is_err());
        assert!(from_pairs(&table(), "x", &pairs(&["num_medications=many"])).is_err());
        assert!(from_pairs(&table(), "x", &pairs(&["age=[0-10)"])).is_err());
    }

    #[test]
    fn record_files() {
        let json = pairs_from_file("{\"age\": \"[70-80)\", \"num_medications\": 3, \"x\": null}").unwrap();
        assert_eq!(json.len(), 2);
        let lines = pairs_from_file("# note\nage=[70-80)\n\nnum_medications=3\n").unwrap();
        assert_eq!(lines, json);
        assert!(pairs_from_file("age").is_err());
    }
}
