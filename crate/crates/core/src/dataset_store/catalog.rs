//! Table and column metadata. The catalog is the only description of the
//! data that is ever shown to the agent.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::policy_engine::PolicyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Integer,
    Real,
    Categorical,
}

impl ValueType {
    pub fn sql_type(self) -> &'static str {
        match self {
            ValueType::Integer => "INTEGER",
            ValueType::Real => "REAL",
            ValueType::Categorical => "TEXT",
        }
    }

    fn label(self) -> &'static str {
        match self {
            ValueType::Integer => "integer",
            ValueType::Real => "real",
            ValueType::Categorical => "categorical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Identifier,
    Feature,
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub value_type: ValueType,
    pub role: ColumnRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categorical_domain: Option<Vec<String>>,
    pub nullable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub name: String,
    pub columns: Vec<ColumnMeta>,
}

impl TableMeta {
    pub fn column(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn label_column(&self) -> Option<&ColumnMeta> {
        self.columns.iter().find(|c| c.role == ColumnRole::Label)
    }

    pub fn features(&self) -> impl Iterator<Item = &ColumnMeta> {
        self.columns.iter().filter(|c| c.role == ColumnRole::Feature)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SchemaCatalog {
    pub tables: Vec<TableMeta>,
}

impl SchemaCatalog {
    /// Checks the structural invariants: one label column per table and
    /// nonempty, duplicate-free categorical domains.
    pub fn validate(&self) -> Result<(), StoreError> {
        for table in &self.tables {
            let labels = table
                .columns
                .iter()
                .filter(|c| c.role == ColumnRole::Label)
                .count();
            if labels != 1 {
                return Err(StoreError::Schema(format!(
                    "table '{}' must have exactly one label column, found {labels}",
                    table.name
                )));
            }
            let mut seen = HashSet::new();
            for column in &table.columns {
                if !seen.insert(column.name.to_ascii_lowercase()) {
                    return Err(StoreError::Schema(format!(
                        "duplicate column '{}' in table '{}'",
                        column.name, table.name
                    )));
                }
                if let Some(domain) = &column.categorical_domain {
                    if domain.is_empty() {
                        return Err(StoreError::Schema(format!(
                            "column '{}' has an empty categorical domain",
                            column.name
                        )));
                    }
                    let distinct: HashSet<&String> = domain.iter().collect();
                    if distinct.len() != domain.len() {
                        return Err(StoreError::Schema(format!(
                            "column '{}' has duplicate values in its categorical domain",
                            column.name
                        )));
                    }
                    if column.role == ColumnRole::Identifier {
                        return Err(StoreError::Schema(format!(
                            "identifier column '{}' cannot declare a value domain",
                            column.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableMeta> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// The cohort table (v1 ingests a single table).
    pub fn primary_table(&self) -> Option<&TableMeta> {
        self.tables.first()
    }

    pub fn identifier_columns(&self) -> impl Iterator<Item = &ColumnMeta> {
        self.tables
            .iter()
            .flat_map(|t| t.columns.iter())
            .filter(|c| c.role == ColumnRole::Identifier)
    }

    pub fn is_empty(&self) -> bool {
        self.tables.iter().all(|t| t.columns.is_empty())
    }
}

/// Rendered schema description served to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDoc(pub String);

impl SchemaDoc {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Renders the catalog and the active policy as a deterministic text
/// document. Identifier columns are listed by name only.
pub fn export_schema_doc(
    catalog: &SchemaCatalog,
    policy: &PolicyConfig,
) -> Result<SchemaDoc, StoreError> {
    if catalog.tables.is_empty() || catalog.is_empty() {
        return Err(StoreError::EmptyCatalog);
    }
    let mut doc = String::new();
    for table in &catalog.tables {
        let _ = writeln!(doc, "TABLE {}", table.name);
        for column in &table.columns {
            let mut line = format!(
                "  - {} ({}{})",
                column.name,
                column.value_type.label(),
                if column.nullable { ", nullable" } else { "" }
            );
            match column.role {
                ColumnRole::Identifier => {
                    line.push_str(" [identifier: only COUNT(DISTINCT ...) allowed]")
                }
                ColumnRole::Label => line.push_str(" [label]"),
                ColumnRole::Feature => {}
            }
            if column.role != ColumnRole::Identifier {
                if let Some(description) = &column.description {
                    let _ = write!(line, ": {description}");
                }
                if let Some(domain) = &column.categorical_domain {
                    let values: Vec<String> = domain.iter().map(|v| format!("'{v}'")).collect();
                    let _ = write!(line, "; values: {}", values.join(", "));
                }
            }
            let _ = writeln!(doc, "{line}");
        }
    }
    doc.push('\n');
    doc.push_str(&policy.summary());
    Ok(SchemaDoc(doc))
}

/// Column declaration in the schema-config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnConfig {
    /// Column name in the store.
    pub name: String,
    /// Header in the CSV, when it differs from `name`.
    #[serde(default)]
    pub source: Option<String>,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    pub role: ColumnRole,
    #[serde(default)]
    pub domain: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub nullable: bool,
    #[serde(default)]
    pub description: Option<String>,
    /// Label columns only: raw values mapped to 1; anything else maps to 0.
    #[serde(default)]
    pub positive_values: Option<Vec<String>>,
    /// Label columns only: when set, raw values outside
    /// `positive_values ∪ negative_values` reject the row.
    #[serde(default)]
    pub negative_values: Option<Vec<String>>,
}

fn default_true() -> bool {
    true
}

fn default_sentinel() -> String {
    "?".to_string()
}

fn default_max_rejected() -> usize {
    100
}

/// Schema-config file: table name and per-column metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub table: String,
    #[serde(default = "default_sentinel")]
    pub missing_sentinel: String,
    /// Ingest fails once more rows than this are rejected.
    #[serde(default = "default_max_rejected")]
    pub max_rejected_rows: usize,
    pub columns: Vec<ColumnConfig>,
}

impl SchemaConfig {
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, StoreError> {
        let config: SchemaConfig =
            toml::from_str(text).map_err(|e| StoreError::Schema(e.to_string()))?;
        config.catalog()?;
        for column in &config.columns {
            let is_label = column.role == ColumnRole::Label;
            if !is_label && (column.positive_values.is_some() || column.negative_values.is_some()) {
                return Err(StoreError::Schema(format!(
                    "column '{}': positive_values/negative_values apply to the label column only",
                    column.name
                )));
            }
            if is_label && column.value_type != ValueType::Integer {
                return Err(StoreError::Schema(format!(
                    "label column '{}' must have type integer",
                    column.name
                )));
            }
            if !is_valid_name(&column.name) {
                return Err(StoreError::Schema(format!(
                    "column name '{}' must match [A-Za-z_][A-Za-z0-9_]*",
                    column.name
                )));
            }
        }
        if !is_valid_name(&config.table) {
            return Err(StoreError::Schema(format!(
                "table name '{}' must match [A-Za-z_][A-Za-z0-9_]*",
                config.table
            )));
        }
        Ok(config)
    }

    pub fn source_name<'a>(&self, column: &'a ColumnConfig) -> &'a str {
        column.source.as_deref().unwrap_or(&column.name)
    }

    pub fn label(&self) -> Option<&ColumnConfig> {
        self.columns.iter().find(|c| c.role == ColumnRole::Label)
    }

    pub fn catalog(&self) -> Result<SchemaCatalog, StoreError> {
        let columns = self
            .columns
            .iter()
            .map(|c| ColumnMeta {
                name: c.name.clone(),
                value_type: c.value_type,
                role: c.role,
                categorical_domain: if c.role == ColumnRole::Label {
                    None
                } else {
                    c.domain.clone()
                },
                nullable: c.nullable && c.role != ColumnRole::Label,
                description: c.description.clone(),
            })
            .collect();
        let catalog = SchemaCatalog {
            tables: vec![TableMeta {
                name: self.table.clone(),
                columns,
            }],
        };
        catalog.validate()?;
        Ok(catalog)
    }
}

fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SchemaConfig {
        SchemaConfig::from_toml(
            r#"
            table = "patients"
            [[columns]]
            name = "encounter_id"
            type = "integer"
            role = "identifier"
            [[columns]]
            name = "age"
            type = "categorical"
            role = "feature"
            domain = ["[60-70)", "[70-80)"]
            [[columns]]
            name = "readmitted_30d"
            source = "readmitted"
            type = "integer"
            role = "label"
            positive_values = ["<30"]
            description = "1 = readmitted within 30 days"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn doc_lists_each_column_once_and_is_stable() {
        let catalog = small().catalog().unwrap();
        let policy = PolicyConfig::default();
        let a = export_schema_doc(&catalog, &policy).unwrap();
        let b = export_schema_doc(&catalog, &policy).unwrap();
        assert_eq!(a, b);
        for name in ["encounter_id", "age"] {
            assert_eq!(a.as_str().matches(&format!("- {name} ")).count(), 1);
        }
        assert!(a.as_str().contains("1 = readmitted within 30 days"));
    }

    #[test]
    fn two_column_catalog_mentions_both_names_once() {
        let catalog = SchemaCatalog {
            tables: vec![TableMeta {
                name: "t".into(),
                columns: vec![
                    ColumnMeta {
                        name: "alpha".into(),
                        value_type: ValueType::Real,
                        role: ColumnRole::Feature,
                        categorical_domain: None,
                        nullable: true,
                        description: None,
                    },
                    ColumnMeta {
                        name: "beta".into(),
                        value_type: ValueType::Integer,
                        role: ColumnRole::Label,
                        categorical_domain: None,
                        nullable: false,
                        description: None,
                    },
                ],
            }],
        };
        let doc = export_schema_doc(&catalog, &PolicyConfig::default()).unwrap();
        assert_eq!(doc.as_str().matches("alpha").count(), 1);
        assert_eq!(doc.as_str().matches("beta").count(), 1);
    }

    #[test]
    fn empty_catalog_is_an_error() {
        let err = export_schema_doc(&SchemaCatalog::default(), &PolicyConfig::default());
        assert!(matches!(err, Err(StoreError::EmptyCatalog)));
    }

    #[test]
    fn label_count_is_enforced() {
        let mut catalog = small().catalog().unwrap();
        catalog.tables[0].columns[2].role = ColumnRole::Feature;
        assert!(catalog.validate().is_err());
    }

    #[test]
    fn domains_must_be_nonempty_and_unique() {
        let mut catalog = small().catalog().unwrap();
        catalog.tables[0].columns[1].categorical_domain = Some(vec![]);
        assert!(catalog.validate().is_err());
        catalog.tables[0].columns[1].categorical_domain = Some(vec!["a".into(), "a".into()]);
        assert!(catalog.validate().is_err());
    }

    #[test]
    fn identifier_domains_are_refused() {
        let err = SchemaConfig::from_toml(
            r#"
            table = "t"
            [[columns]]
            name = "id"
            type = "integer"
            role = "identifier"
            domain = ["1"]
            [[columns]]
            name = "y"
            type = "integer"
            role = "label"
            "#,
        );
        assert!(err.is_err());
    }
}
