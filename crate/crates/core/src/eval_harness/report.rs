use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{EvalError, RunReport};

/// A published result row, carried in reports for side-by-side reading.
/// Never used in any computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub model: &'static str,
    pub mask_fraction: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// 30-day readmission on the diabetes cohort, 2,000 test patients.
pub const PUBLISHED_REFERENCE: [ReferenceRow; 6] = [
    ReferenceRow { model: "TabPFN", mask_fraction: 0.0, precision: 0.63, recall: 0.76, f1: 0.69 },
    ReferenceRow { model: "XGBoost", mask_fraction: 0.0, precision: 0.65, recall: 0.68, f1: 0.66 },
    ReferenceRow { model: "LLM", mask_fraction: 0.0, precision: 0.54, recall: 0.51, f1: 0.52 },
    ReferenceRow { model: "QDT", mask_fraction: 0.0, precision: 0.68, recall: 0.73, f1: 0.70 },
    ReferenceRow { model: "QDT (30% less features)", mask_fraction: 0.3, precision: 0.65, recall: 0.69, f1: 0.67 },
    ReferenceRow { model: "QDT (70% less features)", mask_fraction: 0.7, precision: 0.62, recall: 0.65, f1: 0.64 },
];

#[derive(Serialize)]
struct Summary<'a> {
    #[serde(flatten)]
    report: &'a RunReport,
    reference: &'static [ReferenceRow],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub outcomes: PathBuf,
    pub transcripts: PathBuf,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Record ids come from the data; keep file names tame.
fn file_stem(record_id: &str) -> String {
    record_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn opt<T: ToString>(value: Option<T>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Per-record table. Deliberately free of timing so identical runs
/// produce identical bytes.
pub fn outcomes_csv(report: &RunReport) -> Result<Vec<u8>, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "record_id",
        "true_label",
        "predicted",
        "fallback_used",
        "queries_issued",
        "queries_approved",
        "features_shown",
        "error_code",
    ])?;
    for o in &report.outcomes {
        writer.write_record([
            o.record_id.clone(),
            opt(o.true_label),
            opt(o.predicted),
            o.fallback_used.to_string(),
            o.queries_issued.to_string(),
            o.queries_approved.to_string(),
            o.features_shown.to_string(),
            opt(o.error_code.as_deref()),
        ])?;
    }
    writer.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// Human-readable summary with the published rows alongside.
pub fn render_summary(report: &RunReport) -> String {
    let mut out = String::new();
    let mode = serde_json::to_value(report.config.mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let mask = report.config.ablation.map_or(0.0, |a| a.mask_fraction);
    out.push_str(&format!(
        "mode {mode}, mask fraction {mask}, {} of {} records evaluated, {} error(s), {} fallback(s){}\n",
        report.outcomes.len(),
        report.records_requested,
        report.errors,
        report.fallbacks,
        if report.partial { " — PARTIAL RUN (aborted)" } else { "" }
    ));
    out.push_str(&format!(
        "class counts: {} positive, {} negative\n",
        report.class_counts.positive, report.class_counts.negative
    ));
    let c = &report.confusion;
    out.push_str(&format!("confusion: tp {} fp {} tn {} fn {}\n\n", c.tp, c.fp, c.tn, c.fn_));
    out.push_str(&format!("{:<36} {:>9} {:>9} {:>9}\n", "model", "precision", "recall", "f1"));
    match &report.metrics {
        Some(m) => out.push_str(&format!(
            "{:<36} {:>9.3} {:>9.3} {:>9.3}\n",
            "this run", m.precision, m.recall, m.f1
        )),
        None => out.push_str(&format!("{:<36} {:>9} {:>9} {:>9}\n", "this run", "-", "-", "-")),
    }
    for row in &PUBLISHED_REFERENCE {
        out.push_str(&format!(
            "{:<36} {:>9.2} {:>9.2} {:>9.2}\n",
            format!("{} (published)", row.model),
            row.precision,
            row.recall,
            row.f1
        ));
    }
    out
}

/// Writes `summary.json`, `summary.txt`, `outcomes.csv` and one
/// `transcripts/<record>.json` per prediction under `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<ReportFiles, EvalError> {
    let transcripts = dir.join("transcripts");
    fs::create_dir_all(&transcripts).map_err(io_error(&transcripts))?;

    let summary_path = dir.join("summary.json");
    let summary = Summary {
        report,
        reference: &PUBLISHED_REFERENCE,
    };
    let json = serde_json::to_string_pretty(&summary).expect("report serializes");
    fs::write(&summary_path, json + "\n").map_err(io_error(&summary_path))?;

    let text_path = dir.join("summary.txt");
    fs::write(&text_path, render_summary(report)).map_err(io_error(&text_path))?;

    let outcomes_path = dir.join("outcomes.csv");
    let bytes = outcomes_csv(report).map_err(|e| EvalError::Io {
        path: outcomes_path.clone(),
        source: std::io::Error::other(e),
    })?;
    fs::write(&outcomes_path, bytes).map_err(io_error(&outcomes_path))?;

    for prediction in &report.predictions {
        let path = transcripts.join(format!("{}.json", file_stem(&prediction.record_id)));
        let json = serde_json::to_string_pretty(prediction).expect("prediction serializes");
        fs::write(&path, json + "\n").map_err(io_error(&path))?;
    }

    Ok(ReportFiles {
        summary: summary_path,
        outcomes: outcomes_path,
        transcripts,
    })
}
