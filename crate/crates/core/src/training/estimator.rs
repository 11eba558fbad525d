use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::losses::{batch_entropy, batch_entropy_slopes, losses_on_tape, Losses, Objective};
use crate::error::{Error, Result};
use crate::model::{register_params, trace_on_tape, Choices, EduceParams, ForwardTrace};
use crate::numerics::{sigmoid, Tape, Tensor};
use crate::rng;
use crate::text::{Dataset, EmbeddingTable, Label};

/// Running arithmetic mean of every batch-mean joint loss seen so far.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BaselineState {
    pub sum: f64,
    pub count: u64,
}

impl BaselineState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current control variate `b` (0 before the first update).
    pub fn b(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn update(&mut self, batch_mean_loss: f64) {
        self.sum += batch_mean_loss;
        self.count += 1;
    }
}

/// Settings of one gradient estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub objective: Objective,
    pub r: f64,
    pub entropy_weight: f64,
}

/// Gradient of one document's surrogate, with the trace that produced it.
#[derive(Clone, Debug)]
pub struct DocGradient {
    /// One tensor per parameter id.
    pub grads: Vec<Tensor>,
    pub losses: Losses,
    pub trace: ForwardTrace,
    /// `sigma'(alpha_c . s_c)` per concept.
    pub presence_slopes: Vec<f64>,
}

/// Gradient for one document:
/// `(1 - r) * grad L_joint` with straight-through presence bits, plus
/// `r * (L_joint - b) * grad log p(spans)`. A term whose weight is zero is not
/// recorded, so the blocks it would touch get exactly zero.
#[allow(clippy::too_many_arguments)]
pub fn document_gradient<R: Rng + ?Sized>(
    tokens: &[u32],
    label: &Label,
    params: &EduceParams,
    emb: &EmbeddingTable,
    est: &EstimatorConfig,
    b: f64,
    choices: Choices<'_, R>,
    index: usize,
) -> Result<DocGradient> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params)?;
    let (trace, tv) = trace_on_tape(&mut tape, &vars, params, tokens, emb, choices)?;
    let lv = losses_on_tape(&mut tape, params.config.task, &tv, label, est.objective)?;
    let joint = tape.scalar(lv.joint);
    if !joint.is_finite() {
        return Err(Error::NonFiniteLoss {
            index,
            detail: format!(
                "output {} concept {} spans {:?}",
                tape.scalar(lv.output),
                tape.scalar(lv.concept),
                trace.spans()
            ),
        });
    }
    let losses = Losses {
        output: tape.scalar(lv.output),
        concept: tape.scalar(lv.concept),
        l1: tape.scalar(lv.l1),
        entropy: 0.0,
        joint,
    };

    let mut surrogate = None;
    if est.r < 1.0 {
        surrogate = Some(tape.scale(lv.joint, 1.0 - est.r)?);
    }
    if est.r > 0.0 {
        let term = tape.scale(tv.log_prob, est.r * (joint - b))?;
        surrogate = Some(match surrogate {
            Some(s) => tape.add(s, term)?,
            None => term,
        });
    }
    let surrogate = surrogate.expect("r lies in [0, 1]");
    let g = tape.backward(surrogate)?;
    let grads = (0..params.store.len())
        .map(|id| g.param(id).expect("every parameter is registered"))
        .collect();
    let presence_slopes = trace
        .extractions
        .iter()
        .map(|e| e.presence * (1.0 - e.presence))
        .collect();
    Ok(DocGradient {
        grads,
        losses,
        trace,
        presence_slopes,
    })
}

/// Mean gradient and loss summary of one batch.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    pub grads: Vec<Tensor>,
    /// Means over the batch; `entropy` is the batch entropy loss.
    pub losses: Losses,
    /// Control variate used for this batch.
    pub baseline_used: f64,
    pub sparsity: f64,
}

/// Per-document random stream of the training step keyed by `key`.
pub fn doc_stream(key: [u64; 3], index: usize) -> rng::EduceRng {
    rng::stream(&[key[0], key[1], key[2], index as u64])
}

/// Batch gradient: the mean of the per-document gradients, plus the entropy
/// regularizer's gradient. Updates `baseline` with the batch-mean joint loss
/// after every document has used the old value.
pub fn estimate_gradients(
    data: &Dataset,
    batch: &[usize],
    params: &EduceParams,
    emb: &EmbeddingTable,
    est: &EstimatorConfig,
    baseline: &mut BaselineState,
    key: [u64; 3],
) -> Result<BatchGradients> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let b = baseline.b();
    let per_doc = crate::par::map(batch, |&i| {
        let doc = &data.docs[i];
        let mut r = doc_stream(key, i);
        document_gradient(&doc.tokens, &doc.label, params, emb, est, b, Choices::Sample(&mut r), i)
    })?;

    let n = batch.len() as f64;
    let mut grads = params.store.zeros_like();
    let mut losses = Losses::default();
    let mut sparsity = 0.0;
    for d in &per_doc {
        for (acc, g) in grads.iter_mut().zip(&d.grads) {
            acc.add_assign(g);
        }
        losses.output += d.losses.output;
        losses.concept += d.losses.concept;
        losses.l1 += d.losses.l1;
        losses.joint += d.losses.joint;
        sparsity += d.trace.sparsity() as f64;
    }
    for g in &mut grads {
        g.scale_in_place(1.0 / n);
    }
    losses.output /= n;
    losses.concept /= n;
    losses.l1 /= n;
    losses.joint /= n;

    if est.entropy_weight > 0.0 {
        let presences: Vec<Vec<f64>> = per_doc
            .iter()
            .map(|d| d.trace.extractions.iter().map(|e| e.presence).collect())
            .collect();
        losses.entropy = batch_entropy(&presences);
        if est.r < 1.0 {
            let slopes = batch_entropy_slopes(&presences);
            let k = est.entropy_weight * (1.0 - est.r) / n;
            let alpha = &mut grads[EduceParams::ALPHA];
            for d in &per_doc {
                for (c, e) in d.trace.extractions.iter().enumerate() {
                    let w = k * slopes[c] * d.presence_slopes[c];
                    for (g, s) in alpha.row_mut(c).iter_mut().zip(&e.excerpt) {
                        *g += w * s;
                    }
                }
            }
        }
    }

    baseline.update(losses.joint);
    Ok(BatchGradients {
        grads,
        losses,
        baseline_used: b,
        sparsity: sparsity / n,
    })
}

/// Value of the pathwise/score-function surrogate for fixed spans and bits,
/// evaluated without the tape. Its exact gradient at `params` is what
/// [`document_gradient`] returns for the same choices: each bit is replaced by
/// `z0 + sigmoid(a) - sigmoid(a0)` and the score-function coefficient is
/// frozen at `r * (joint0 - b)`.
#[allow(clippy::too_many_arguments)]
pub fn surrogate_value(
    params: &EduceParams,
    base: &EduceParams,
    tokens: &[u32],
    label: &Label,
    emb: &EmbeddingTable,
    est: &EstimatorConfig,
    b: f64,
    spans: &[crate::model::Span],
    code: &[bool],
) -> Result<f64> {
    use crate::encoder::encode;
    use crate::model::{concept_classifier, pool_excerpt, start_distribution, stop_distribution, SpanMasks};
    use crate::numerics::{dot, matvec};

    let cfg = &params.config;
    let excerpts: Vec<Vec<f64>> = spans
        .iter()
        .map(|s| pool_excerpt(*s, emb, tokens))
        .collect::<Result<_>>()?;
    let relaxed = |p: &EduceParams| -> Vec<f64> {
        let a: Vec<f64> = (0..cfg.concepts).map(|c| dot(p.alpha().row(c), &excerpts[c])).collect();
        a.iter().map(|&x| sigmoid(x)).collect()
    };
    let now = relaxed(params);
    let then = relaxed(base);
    let z: Vec<f64> = (0..cfg.concepts)
        .map(|c| if code[c] { 1.0 } else { 0.0 } + now[c] - then[c])
        .collect();

    let joint_with = |p: &EduceParams, z: &[f64]| -> Result<f64> {
        let logits = matvec(p.delta(), &Tensor::vector(z.to_vec()))?;
        let out = match label {
            Label::Class(y) => -crate::numerics::log_softmax_at(logits.data(), None, *y)?,
            Label::Targets(t) => {
                let se: f64 = logits
                    .data()
                    .iter()
                    .zip(t)
                    .map(|(l, y)| (sigmoid(*l) - y) * (sigmoid(*l) - y))
                    .sum();
                se / t.len() as f64
            }
        };
        let mut concept = 0.0;
        for c in 0..cfg.concepts {
            let probs = concept_classifier(p.theta(), &excerpts[c])?;
            concept -= z[c] * libm::log(probs[c]);
        }
        let l1: f64 = z.iter().sum();
        Ok(out + est.objective.lambda * concept + est.objective.lambda_l1 * l1)
    };

    let mut value = 0.0;
    if est.r < 1.0 {
        value += (1.0 - est.r) * joint_with(params, &z)?;
    }
    if est.r > 0.0 {
        let z0: Vec<f64> = code.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let joint0 = joint_with(base, &z0)?;
        let enc = encode(tokens, emb, &params.encoder())?;
        let masks = SpanMasks::new(tokens, cfg.pad_id, cfg.window)?;
        let mut log_p = 0.0;
        for (c, s) in spans.iter().enumerate() {
            let ps = start_distribution(&enc, params.gamma_start(), c, &masks)?;
            let pt = stop_distribution(&enc, params.gamma_stop(), c, s.start, &masks)?;
            log_p += libm::log(ps[s.start]) + libm::log(pt[s.stop]);
        }
        value += est.r * (joint0 - b) * log_p;
    }
    Ok(value)
}
