use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::encoder::encode;
use crate::error::Result;
use crate::model::{
    forward_with, pool_excerpt, start_distribution, stop_distribution, Choices, EduceParams, ForwardTrace, Span,
    SpanMasks,
};
use crate::numerics::{argmax, dot, sigmoid};
use crate::rng::EduceRng;
use crate::text::{EmbeddingTable, Label, Vocab};

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptRecord {
    pub concept: usize,
    pub present: bool,
    pub span: Span,
    pub tokens: Vec<String>,
    pub presence: f64,
    pub argmax_concept: usize,
}

/// One rendered forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub doc_id: usize,
    /// Argmax class, or the per-target predictions for regression.
    pub pred: Label,
    pub label: Label,
    pub concepts: Vec<ConceptRecord>,
}

impl Explanation {
    pub fn from_trace(doc_id: usize, trace: &ForwardTrace, tokens: &[u32], label: &Label, vocab: &Vocab) -> Self {
        let pred = if trace.task.is_classification() {
            Label::Class(trace.predicted_class())
        } else {
            Label::Targets(trace.output.clone())
        };
        let concepts = trace
            .extractions
            .iter()
            .map(|e| ConceptRecord {
                concept: e.concept,
                present: e.present,
                span: e.span,
                tokens: vocab
                    .decode(&tokens[e.span.start..=e.span.stop])
                    .into_iter()
                    .map(ToString::to_string)
                    .collect(),
                presence: e.presence,
                argmax_concept: argmax(&e.concept_probs),
            })
            .collect();
        Self {
            doc_id,
            pred,
            label: label.clone(),
            concepts,
        }
    }
}

/// Most likely start, most likely stop given it, and `z_c = [p_c >= 0.5]`
/// for every concept. Only meant for qualitative dumps.
pub fn argmax_choices(params: &EduceParams, tokens: &[u32], emb: &EmbeddingTable) -> Result<(Vec<Span>, Vec<bool>)> {
    let enc = encode(tokens, emb, &params.encoder())?;
    let masks = SpanMasks::new(tokens, params.config.pad_id, params.config.window)?;
    let mut spans = Vec::new();
    let mut code = Vec::new();
    for c in 0..params.config.concepts {
        let start = argmax(&start_distribution(&enc, params.gamma_start(), c, &masks)?);
        let stop = argmax(&stop_distribution(&enc, params.gamma_stop(), c, start, &masks)?);
        let span = Span { start, stop };
        let s = pool_excerpt(span, emb, tokens)?;
        spans.push(span);
        code.push(sigmoid(dot(params.alpha().row(c), &s)) >= 0.5);
    }
    Ok((spans, code))
}

/// Explanation of document `doc_id` from a sampled pass under `seed`, or
/// from the argmax choices when `use_argmax` is set.
#[allow(clippy::too_many_arguments)]
pub fn explain(
    params: &EduceParams,
    doc_id: usize,
    tokens: &[u32],
    label: &Label,
    emb: &EmbeddingTable,
    vocab: &Vocab,
    seed: u64,
    use_argmax: bool,
) -> Result<Explanation> {
    let trace = if use_argmax {
        let (spans, code) = argmax_choices(params, tokens, emb)?;
        forward_with::<EduceRng>(
            tokens,
            params,
            emb,
            Choices::Fixed {
                spans: &spans,
                code: &code,
            },
        )?
    } else {
        forward_with(
            tokens,
            params,
            emb,
            Choices::Sample(&mut super::eval_stream(seed, doc_id)),
        )?
    };
    Ok(Explanation::from_trace(doc_id, &trace, tokens, label, vocab))
}
