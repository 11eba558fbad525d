//! CSV logs and metrics, and JSON-lines explanations.

use std::path::Path;

use educe_core::evaluation::{Explanation, MetricsReport, OutputMetric, RationaleReport, Repartition};
use educe_core::text::Label;
use educe_core::training::{BatchRecord, EpochRecord};
use serde::{Deserialize, Serialize};

use crate::error::{write_file, CliError, Result};

pub const TRAINING_LOG_HEADER: [&str; 8] = [
    "epoch",
    "loss_output",
    "loss_concept",
    "loss_aux",
    "lambda",
    "baseline_b",
    "val_score",
    "elapsed_s",
];

pub const BATCH_LOG_HEADER: [&str; 7] = [
    "epoch",
    "step",
    "size",
    "loss_joint",
    "baseline_before",
    "baseline_after",
    "grad_norm",
];

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Failed(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
    write_file(path, &String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

fn strings(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

pub fn write_training_log(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = epochs
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                e.loss_output.to_string(),
                e.loss_concept.to_string(),
                e.loss_aux.to_string(),
                e.lambda.to_string(),
                e.baseline_b.to_string(),
                e.val_score.to_string(),
                e.elapsed_s.to_string(),
            ]
        })
        .collect();
    write_csv(path, &strings(&TRAINING_LOG_HEADER), &rows)
}

pub fn write_batch_log(path: &Path, batches: &[BatchRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = batches
        .iter()
        .map(|b| {
            vec![
                b.epoch.to_string(),
                b.step.to_string(),
                b.size.to_string(),
                b.loss_joint.to_string(),
                b.baseline_before.to_string(),
                b.baseline_after.to_string(),
                b.grad_norm.to_string(),
            ]
        })
        .collect();
    write_csv(path, &strings(&BATCH_LOG_HEADER), &rows)
}

/// `metric,value` rows for a report. A failed a-posteriori protocol is
/// written as `NA`.
pub fn metric_rows(report: &MetricsReport) -> Vec<(String, String)> {
    let mut rows = Vec::new();
    match report.output {
        OutputMetric::Accuracy(a) => rows.push(("output_accuracy".into(), a.to_string())),
        OutputMetric::Mse(e) => rows.push(("output_mse".into(), e.to_string())),
    }
    rows.push((
        "posteriori_concept_accuracy".into(),
        report.posteriori.as_ref().map_or("NA".into(), |a| a.to_string()),
    ));
    rows.push(("sparsity".into(), report.sparsity.to_string()));
    rows.push(("concept_consistency".into(), report.consistency.to_string()));
    if let Some(r) = &report.rationale {
        rows.push(("extraction_pct".into(), (100.0 * r.extraction).to_string()));
    }
    rows
}

pub fn write_metrics(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows.iter().map(|(k, v)| vec![k.clone(), v.clone()]).collect();
    write_csv(path, &strings(&["metric", "value"]), &rows)
}

/// One row per concept: precision against each aspect, then how often the
/// concept was present.
pub fn write_precision(path: &Path, report: &RationaleReport) -> Result<()> {
    let aspects = report.precision.first().map_or(0, Vec::len);
    let mut header = vec!["concept".to_string()];
    header.extend((0..aspects).map(|a| format!("aspect_{a}")));
    header.push("presence_count".into());
    let rows: Vec<Vec<String>> = report
        .precision
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let mut r = vec![c.to_string()];
            r.extend(row.iter().map(|p| p.to_string()));
            r.push(report.presence_counts[c].to_string());
            r
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub fn write_repartition(path: &Path, rep: &Repartition) -> Result<()> {
    let labels = rep.counts.first().map_or(0, Vec::len);
    let kept: Vec<usize> = (0..labels).filter(|&l| Some(l as u32) != rep.neutral).collect();
    let mut header = vec!["concept".to_string()];
    header.extend(kept.iter().map(|l| format!("label_{l}")));
    let rows: Vec<Vec<String>> = rep
        .counts
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let mut r = vec![c.to_string()];
            r.extend(kept.iter().map(|&l| row[l].to_string()));
            r
        })
        .collect();
    write_csv(path, &header, &rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelJson {
    Class(usize),
    Targets(Vec<f64>),
}

impl From<&Label> for LabelJson {
    fn from(l: &Label) -> Self {
        match l {
            Label::Class(c) => LabelJson::Class(*c),
            Label::Targets(t) => LabelJson::Targets(t.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptJson {
    pub c: usize,
    pub present: bool,
    pub start: usize,
    pub stop: usize,
    pub tokens: Vec<String>,
    pub p: f64,
    pub argmax_concept: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationJson {
    pub doc_id: usize,
    pub pred: LabelJson,
    pub label: LabelJson,
    pub concepts: Vec<ConceptJson>,
}

impl From<&Explanation> for ExplanationJson {
    fn from(x: &Explanation) -> Self {
        Self {
            doc_id: x.doc_id,
            pred: (&x.pred).into(),
            label: (&x.label).into(),
            concepts: x
                .concepts
                .iter()
                .map(|c| ConceptJson {
                    c: c.concept,
                    present: c.present,
                    start: c.span.start,
                    stop: c.span.stop,
                    tokens: c.tokens.clone(),
                    p: c.presence,
                    argmax_concept: c.argmax_concept,
                })
                .collect(),
        }
    }
}

pub fn explanation_line(x: &Explanation) -> String {
    serde_json::to_string(&ExplanationJson::from(x)).expect("plain data serializes")
}

pub fn write_explanations(path: &Path, xs: &[Explanation]) -> Result<()> {
    let mut out = String::new();
    for x in xs {
        out.push_str(&explanation_line(x));
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn parse_explanations(text: &str) -> std::result::Result<Vec<ExplanationJson>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
