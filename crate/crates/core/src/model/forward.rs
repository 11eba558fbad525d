use alloc::vec::Vec;

use rand::Rng;

use super::{output_from_logits, EduceParams, Span, SpanMasks};
use crate::encoder::{embed, encode_bidirectional, LstmCellParams, LstmCellVars};
use crate::error::{Error, Result};
use crate::numerics::{masked_softmax, sigmoid, Tape, Var};
use crate::rng;
use crate::text::{EmbeddingTable, Task};

/// Where the discrete choices of a forward pass come from.
pub enum Choices<'a, R: Rng + ?Sized> {
    /// Draw every span and bit from the stream: concepts in order, start
    /// before stop, then all presence bits.
    Sample(&'a mut R),
    /// Replay given spans and bits (one per concept).
    Fixed { spans: &'a [Span], code: &'a [bool] },
}

/// Everything chosen for one concept in one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptExtraction {
    pub concept: usize,
    pub span: Span,
    /// Mean embedding of the excerpt, `s_c`.
    pub excerpt: Vec<f64>,
    pub log_p_start: f64,
    pub log_p_stop: f64,
    /// `p_c = sigmoid(alpha_c . s_c)`.
    pub presence: f64,
    /// Sampled bit `z_c`.
    pub present: bool,
    /// Concept-classifier distribution for this excerpt.
    pub concept_probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub task: Task,
    pub extractions: Vec<ConceptExtraction>,
    pub code: Vec<bool>,
    /// Class distribution, or per-target prediction in (0, 1).
    pub output: Vec<f64>,
    /// `sum_c log p_start + log p_stop`.
    pub log_prob: f64,
}

impl ForwardTrace {
    pub fn predicted_class(&self) -> usize {
        crate::numerics::argmax(&self.output)
    }

    /// Number of present concepts.
    pub fn sparsity(&self) -> usize {
        self.code.iter().filter(|&&z| z).count()
    }

    pub fn spans(&self) -> Vec<Span> {
        self.extractions.iter().map(|e| e.span).collect()
    }
}

/// Tape handles for the differentiable quantities of a trace.
#[derive(Clone, Debug)]
pub struct TraceVars {
    /// Sum of span log-probabilities; depends on the gammas and the encoder.
    pub log_prob: Var,
    /// `alpha_c . s_c` per concept.
    pub pre_activations: Vec<Var>,
    /// Straight-through presence bits.
    pub code: Vec<Var>,
    /// `log p_theta(c | s_c)` per concept.
    pub concept_log_probs: Vec<Var>,
    /// `delta z`.
    pub logits: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub fwd: LstmCellVars,
    pub bwd: LstmCellVars,
    pub gamma_start: Var,
    pub gamma_stop: Var,
    pub alpha: Var,
    pub theta: Var,
    pub delta: Var,
}

/// Registers every tensor of `params` once, under its store id.
pub fn register_params(tape: &mut Tape, params: &EduceParams) -> Result<ParamVars> {
    let s = &params.store;
    let cell = |tape: &mut Tape, base: usize| -> Result<LstmCellVars> {
        LstmCellParams {
            w_ih: s.get(base).clone(),
            w_hh: s.get(base + 1).clone(),
            bias: s.get(base + 2).clone(),
        }
        .register(tape, base)
    };
    let fwd = cell(tape, EduceParams::ENC_FWD)?;
    let bwd = cell(tape, EduceParams::ENC_BWD)?;
    Ok(ParamVars {
        fwd,
        bwd,
        gamma_start: tape.param(EduceParams::GAMMA_START, params.gamma_start())?,
        gamma_stop: tape.param(EduceParams::GAMMA_STOP, params.gamma_stop())?,
        alpha: tape.param(EduceParams::ALPHA, params.alpha())?,
        theta: tape.param(EduceParams::THETA, params.theta())?,
        delta: tape.param(EduceParams::DELTA, params.delta())?,
    })
}

/// Records one forward pass on `tape`.
pub fn trace_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ParamVars,
    params: &EduceParams,
    tokens: &[u32],
    emb: &EmbeddingTable,
    mut choices: Choices<'_, R>,
) -> Result<(ForwardTrace, TraceVars)> {
    let cfg = &params.config;
    let concepts = cfg.concepts;
    if let Choices::Fixed { spans, code } = &choices {
        if spans.len() != concepts || code.len() != concepts {
            return Err(Error::Shape {
                op: "fixed choices",
                left: alloc::vec![spans.len(), code.len()],
                right: alloc::vec![concepts],
            });
        }
    }
    let masks = SpanMasks::new(tokens, cfg.pad_id, cfg.window)?;
    let inputs = embed(tape, tokens, emb)?;
    let rows = encode_bidirectional(tape, &inputs, &vars.fwd, &vars.bwd)?;
    let contextual = tape.stack_rows(&rows)?;
    let doc_emb = tape.constant(emb.gather(tokens)?);

    // Step 1: one excerpt per concept.
    let mut spans = Vec::with_capacity(concepts);
    let mut span_log_probs = Vec::with_capacity(2 * concepts);
    let mut log_parts = Vec::with_capacity(concepts);
    for c in 0..concepts {
        let g_start = tape.row(vars.gamma_start, c)?;
        let start_scores = tape.matvec(contextual, g_start)?;
        let start = match &mut choices {
            Choices::Sample(r) => {
                let p = masked_softmax(tape.value(start_scores).data(), masks.start())?;
                rng::sample_categorical(&p, *r)
            }
            Choices::Fixed { spans, .. } => {
                let k = spans[c].start;
                if k >= masks.len() || !masks.start()[k] {
                    return Err(Error::NoValidPosition("fixed span has an invalid start"));
                }
                k
            }
        };
        let lp_start = tape.log_softmax_at(start_scores, Some(masks.start()), start)?;

        let stop_mask = masks.stop(start);
        let g_stop = tape.row(vars.gamma_stop, c)?;
        let stop_scores = tape.matvec(contextual, g_stop)?;
        let stop = match &mut choices {
            Choices::Sample(r) => {
                let p = masked_softmax(tape.value(stop_scores).data(), &stop_mask)?;
                rng::sample_categorical(&p, *r)
            }
            Choices::Fixed { spans, .. } => {
                let s = spans[c].stop;
                if s >= stop_mask.len() || !stop_mask[s] {
                    return Err(Error::NoValidPosition("fixed span has an invalid stop"));
                }
                s
            }
        };
        let lp_stop = tape.log_softmax_at(stop_scores, Some(&stop_mask), stop)?;
        spans.push(Span { start, stop });
        span_log_probs.push((tape.scalar(lp_start), tape.scalar(lp_stop)));
        log_parts.push(lp_start);
        log_parts.push(lp_stop);
    }
    let log_parts = tape.concat(&log_parts)?;
    let log_prob = tape.sum(log_parts)?;

    // Step 2: presence bits from the pooled excerpts.
    let mut excerpts = Vec::with_capacity(concepts);
    let mut pre_activations = Vec::with_capacity(concepts);
    let mut code_vars = Vec::with_capacity(concepts);
    let mut presences = Vec::with_capacity(concepts);
    let mut code = Vec::with_capacity(concepts);
    for (c, span) in spans.iter().enumerate() {
        let s = tape.mean_range(doc_emb, span.start, span.stop + 1)?;
        let a_row = tape.row(vars.alpha, c)?;
        let a = tape.dot(a_row, s)?;
        let p = sigmoid(tape.scalar(a));
        let z = match &mut choices {
            Choices::Sample(r) => rng::sample_bernoulli(p, *r),
            Choices::Fixed { code, .. } => code[c],
        };
        code_vars.push(tape.straight_through(a, z)?);
        excerpts.push(s);
        pre_activations.push(a);
        presences.push(p);
        code.push(z);
    }

    // Concept classifier on every excerpt.
    let mut concept_log_probs = Vec::with_capacity(concepts);
    let mut concept_probs = Vec::with_capacity(concepts);
    for (c, &s) in excerpts.iter().enumerate() {
        let logits = tape.matvec(vars.theta, s)?;
        let values = tape.value(logits).data();
        concept_probs.push(masked_softmax(values, &alloc::vec![true; values.len()])?);
        concept_log_probs.push(tape.log_softmax_at(logits, None, c)?);
    }

    // Step 3: prediction from the code.
    let code_vec = tape.concat(&code_vars)?;
    let logits = tape.matvec(vars.delta, code_vec)?;
    let output = output_from_logits(tape.value(logits).data(), cfg.task)?;

    let extractions = (0..concepts)
        .map(|c| ConceptExtraction {
            concept: c,
            span: spans[c],
            excerpt: tape.value(excerpts[c]).data().to_vec(),
            log_p_start: span_log_probs[c].0,
            log_p_stop: span_log_probs[c].1,
            presence: presences[c],
            present: code[c],
            concept_probs: concept_probs[c].clone(),
        })
        .collect();
    let trace = ForwardTrace {
        task: cfg.task,
        extractions,
        code,
        output,
        log_prob: tape.scalar(log_prob),
    };
    let trace_vars = TraceVars {
        log_prob,
        pre_activations,
        code: code_vars,
        concept_log_probs,
        logits,
    };
    Ok((trace, trace_vars))
}

pub fn forward_with<R: Rng + ?Sized>(
    tokens: &[u32],
    params: &EduceParams,
    emb: &EmbeddingTable,
    choices: Choices<'_, R>,
) -> Result<ForwardTrace> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params)?;
    trace_on_tape(&mut tape, &vars, params, tokens, emb, choices).map(|(t, _)| t)
}

/// One stochastic pass: C excerpts, C presence bits, and the prediction.
pub fn forward<R: Rng + ?Sized>(
    tokens: &[u32],
    params: &EduceParams,
    emb: &EmbeddingTable,
    r: &mut R,
) -> Result<ForwardTrace> {
    forward_with(tokens, params, emb, Choices::Sample(r))
}
