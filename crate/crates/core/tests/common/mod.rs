#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};

use qdt_core::dataset_store::{ingest_csv, SchemaCatalog, SchemaConfig};
use qdt_core::policy_engine::{Verdict, ViolationCode};
use serde::Deserialize;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(name: &str) -> PathBuf {
    repo_root().join("crates/core/tests/fixtures").join(name)
}

pub fn diabetes_schema() -> SchemaConfig {
    SchemaConfig::load(&repo_root().join("config/diabetes_schema.toml")).unwrap()
}

pub fn diabetes_catalog() -> SchemaCatalog {
    diabetes_schema().catalog().unwrap()
}

pub fn diabetes_csv() -> PathBuf {
    repo_root().join("data/diabetes_synthetic.csv")
}

/// Ingests the synthetic cohort into `dir/qdt.db`.
pub fn ingest_diabetes(dir: &Path) -> PathBuf {
    let store = dir.join("qdt.db");
    ingest_csv(&diabetes_csv(), &diabetes_schema(), &store).unwrap();
    store
}

#[derive(Debug, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub sql: String,
    pub verdict: Verdict,
    pub codes: Vec<ViolationCode>,
}

#[derive(Deserialize)]
struct Corpus {
    query: Vec<CorpusEntry>,
}

pub fn corpus() -> Vec<CorpusEntry> {
    let text = std::fs::read_to_string(fixture("policy_corpus.toml")).unwrap();
    toml::from_str::<Corpus>(&text).unwrap().query
}
