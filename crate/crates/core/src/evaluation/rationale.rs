use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ForwardTrace;
use crate::text::Dataset;

/// Overlap of present excerpts with annotated aspect spans.
#[derive(Clone, Debug, PartialEq)]
pub struct RationaleReport {
    /// `precision[c][a]`: share of tokens selected by present concept `c`
    /// that lie inside a gold span of aspect `a`. Rows of concepts that were
    /// never present are 0.
    pub precision: Vec<Vec<f64>>,
    /// Number of documents in which each concept was present.
    pub presence_counts: Vec<usize>,
    /// Tokens selected by each concept over its present excerpts.
    pub selected_tokens: Vec<usize>,
    /// Share of all tokens covered by the union of present excerpts.
    pub extraction: f64,
    /// Set when no concept was present anywhere.
    pub nothing_present: bool,
}

fn check_traces(traces: &[ForwardTrace], data: &Dataset) -> Result<()> {
    if traces.len() != data.len() {
        return Err(Error::Shape {
            op: "traces vs documents",
            left: alloc::vec![traces.len()],
            right: alloc::vec![data.len()],
        });
    }
    Ok(())
}

pub fn rationale_precision(traces: &[ForwardTrace], data: &Dataset) -> Result<RationaleReport> {
    check_traces(traces, data)?;
    let concepts = traces.first().map_or(0, |t| t.extractions.len());
    let aspects = data
        .docs
        .iter()
        .flat_map(|d| d.gold_spans.iter().map(|g| g.aspect + 1))
        .max()
        .unwrap_or(0);
    let mut inside = alloc::vec![alloc::vec![0usize; aspects]; concepts];
    let mut selected = alloc::vec![0usize; concepts];
    let mut presence = alloc::vec![0usize; concepts];
    let mut covered = 0usize;
    let mut total = 0usize;
    for (t, d) in traces.iter().zip(&data.docs) {
        let mut union = alloc::vec![false; d.len()];
        for e in t.extractions.iter().filter(|e| e.present) {
            presence[e.concept] += 1;
            for k in e.span.start..=e.span.stop {
                union[k] = true;
                selected[e.concept] += 1;
                for (a, hits) in inside[e.concept].iter_mut().enumerate() {
                    if d.gold_spans
                        .iter()
                        .any(|g| g.aspect == a && (g.start..g.stop).contains(&k))
                    {
                        *hits += 1;
                    }
                }
            }
        }
        covered += union.iter().filter(|&&u| u).count();
        total += d.len();
    }
    let precision = inside
        .iter()
        .zip(&selected)
        .map(|(row, &n)| {
            row.iter()
                .map(|&h| if n == 0 { 0.0 } else { h as f64 / n as f64 })
                .collect()
        })
        .collect();
    Ok(RationaleReport {
        precision,
        nothing_present: presence.iter().all(|&n| n == 0),
        presence_counts: presence,
        selected_tokens: selected,
        extraction: if total == 0 { 0.0 } else { covered as f64 / total as f64 },
    })
}

/// Word-label counts over the tokens of each concept's present excerpts.
#[derive(Clone, Debug, PartialEq)]
pub struct Repartition {
    /// `counts[c][label]`; the neutral label's column is always 0.
    pub counts: Vec<Vec<usize>>,
    pub neutral: Option<u32>,
}

pub fn label_repartition(traces: &[ForwardTrace], data: &Dataset, neutral: Option<u32>) -> Result<Repartition> {
    check_traces(traces, data)?;
    let concepts = traces.first().map_or(0, |t| t.extractions.len());
    let mut labels = 0usize;
    for d in &data.docs {
        let Some(w) = &d.word_labels else {
            return Err(Error::EmptyInput("word labels"));
        };
        if w.len() != d.len() {
            return Err(Error::Shape {
                op: "word labels vs tokens",
                left: alloc::vec![w.len()],
                right: alloc::vec![d.len()],
            });
        }
        labels = labels.max(w.iter().map(|&l| l as usize + 1).max().unwrap_or(0));
    }
    let mut counts = alloc::vec![alloc::vec![0usize; labels]; concepts];
    for (t, d) in traces.iter().zip(&data.docs) {
        let w = d.word_labels.as_ref().expect("checked above");
        for e in t.extractions.iter().filter(|e| e.present) {
            for &l in &w[e.span.start..=e.span.stop] {
                if Some(l) != neutral {
                    counts[e.concept][l as usize] += 1;
                }
            }
        }
    }
    Ok(Repartition { counts, neutral })
}
