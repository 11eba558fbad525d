//! Metrics over sampled forward passes, explanation records, and the exact
//! enumeration oracle used to check the gradient estimator.

mod explain;
mod oracle;
mod posteriori;
mod rationale;

pub use explain::{argmax_choices, explain, ConceptRecord, Explanation};
pub use oracle::{
    check_unbiasedness, configuration_count, exact_expectation, BlockCheck, ExactExpectation, TinyInstance,
    UnbiasednessReport, DEFAULT_BUDGET,
};
pub use posteriori::{posteriori_concept_accuracy, posteriori_from_pairs, present_excerpts, PosterioriConfig};
pub use rationale::{label_repartition, rationale_precision, RationaleReport, Repartition};

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{forward, EduceParams, ForwardTrace};
use crate::numerics::argmax;
use crate::rng;
use crate::text::{Dataset, EmbeddingTable};
use crate::training::{fulltext_predict, Model};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputMetric {
    Accuracy(f64),
    Mse(f64),
}

impl OutputMetric {
    pub fn value(&self) -> f64 {
        match *self {
            OutputMetric::Accuracy(v) | OutputMetric::Mse(v) => v,
        }
    }
}

/// Random stream of the evaluation pass over document `index`.
pub fn eval_stream(seed: u64, index: usize) -> rng::EduceRng {
    rng::stream(&[seed, 0xe7a1, index as u64])
}

/// One sampled forward pass per document.
pub fn sampled_traces(
    params: &EduceParams,
    data: &Dataset,
    emb: &EmbeddingTable,
    seed: u64,
) -> Result<Vec<ForwardTrace>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    crate::par::map(&idx, |&i| {
        forward(&data.docs[i].tokens, params, emb, &mut eval_stream(seed, i))
    })
}

/// Accuracy of the argmax prediction, or mean squared error over documents
/// (each document's error averaged over its targets).
pub fn output_metric(data: &Dataset, outputs: &[Vec<f64>]) -> Result<OutputMetric> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    if outputs.len() != data.len() {
        return Err(Error::Shape {
            op: "output_metric",
            left: alloc::vec![outputs.len()],
            right: alloc::vec![data.len()],
        });
    }
    let n = data.len() as f64;
    if data.task.is_classification() {
        let hits = data
            .docs
            .iter()
            .zip(outputs)
            .filter(|(d, o)| d.label.class() == Some(argmax(o)))
            .count();
        return Ok(OutputMetric::Accuracy(hits as f64 / n));
    }
    let mut total = 0.0;
    for (d, o) in data.docs.iter().zip(outputs) {
        total += crate::training::output_loss(data.task, o, &d.label)?;
    }
    Ok(OutputMetric::Mse(total / n))
}

/// Output accuracy (or MSE) with one sampled pass per document.
pub fn evaluate_output(model: &Model, data: &Dataset, emb: &EmbeddingTable, seed: u64) -> Result<OutputMetric> {
    let outputs = match model {
        Model::Educe(p) => sampled_traces(p, data, emb, seed)?
            .into_iter()
            .map(|t| t.output)
            .collect(),
        Model::FullText(p) => {
            let idx: Vec<usize> = (0..data.len()).collect();
            crate::par::map(&idx, |&i| fulltext_predict(p, &data.docs[i].tokens, emb))?
        }
    };
    output_metric(data, &outputs)
}

/// Fraction of present excerpts whose concept-classifier argmax is the
/// concept they were extracted for (0 when nothing is present).
pub fn concept_consistency(traces: &[ForwardTrace]) -> f64 {
    let mut present = 0usize;
    let mut hits = 0usize;
    for t in traces {
        for e in t.extractions.iter().filter(|e| e.present) {
            present += 1;
            hits += (argmax(&e.concept_probs) == e.concept) as usize;
        }
    }
    if present == 0 {
        0.0
    } else {
        hits as f64 / present as f64
    }
}

/// Mean number of present concepts per document.
pub fn mean_sparsity(traces: &[ForwardTrace]) -> f64 {
    if traces.is_empty() {
        return 0.0;
    }
    traces.iter().map(|t| t.sparsity() as f64).sum::<f64>() / traces.len() as f64
}

pub fn sparsity(params: &EduceParams, data: &Dataset, emb: &EmbeddingTable, seed: u64) -> Result<f64> {
    Ok(mean_sparsity(&sampled_traces(params, data, emb, seed)?))
}

/// Everything reported for one model on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub output: OutputMetric,
    /// A-posteriori concept accuracy, or why the protocol could not run.
    pub posteriori: core::result::Result<f64, Error>,
    pub sparsity: f64,
    /// Concept-classifier agreement of the model's own classifier.
    pub consistency: f64,
    pub rationale: Option<RationaleReport>,
    pub repartition: Option<Repartition>,
}

/// Runs every metric that applies to `data` with a single set of sampled
/// traces.
pub fn metrics_report(
    params: &EduceParams,
    data: &Dataset,
    emb: &EmbeddingTable,
    eval_seed: u64,
    posteriori: &PosterioriConfig,
    neutral_label: Option<u32>,
) -> Result<MetricsReport> {
    let traces = sampled_traces(params, data, emb, eval_seed)?;
    let outputs: Vec<Vec<f64>> = traces.iter().map(|t| t.output.clone()).collect();
    let output = output_metric(data, &outputs)?;
    let pairs = present_excerpts(&traces);
    let posteriori = posteriori_from_pairs(&pairs, params.config.concepts, posteriori);
    let rationale = if data.docs.iter().any(|d| !d.gold_spans.is_empty()) {
        Some(rationale_precision(&traces, data)?)
    } else {
        None
    };
    let repartition = if data.docs.iter().all(|d| d.word_labels.is_some()) {
        Some(label_repartition(&traces, data, neutral_label)?)
    } else {
        None
    };
    Ok(MetricsReport {
        output,
        posteriori,
        sparsity: mean_sparsity(&traces),
        consistency: concept_consistency(&traces),
        rationale,
        repartition,
    })
}

#[cfg(test)]
mod tests;
