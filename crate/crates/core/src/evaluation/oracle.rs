//! Exact expectation of the joint loss by enumerating every configuration of
//! spans and presence bits, and the Monte-Carlo comparison built on it.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::encoder::{embed, encode_bidirectional, BiLstmParams};
use crate::error::{Error, Result};
use crate::model::{register_params, Choices, EduceParams, ModelConfig, SpanMasks, SpanWindow};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng;
use crate::text::{EmbeddingTable, Label, Task, Vocab};
use crate::training::{document_gradient, output_loss_on_tape, EstimatorConfig, Objective};

pub const DEFAULT_BUDGET: u128 = 1_000_000;

/// `(valid spans)^C * 2^C`, saturating.
pub fn configuration_count(spans: usize, concepts: usize) -> u128 {
    let mut n: u128 = 1;
    for _ in 0..concepts {
        n = n.saturating_mul(spans as u128).saturating_mul(2);
    }
    n
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactExpectation {
    /// `E[L_joint]` over spans and presence bits.
    pub loss: f64,
    /// Gradient of `E[L_joint]`, one tensor per parameter id.
    pub grads: Vec<Tensor>,
    pub configurations: u128,
    /// Sum of the configuration probabilities (1 up to rounding).
    pub total_probability: f64,
}

/// Enumerates every joint configuration, weights its loss by
/// `prod_c p_start * p_stop * (p_c or 1 - p_c)`, and differentiates the sum.
pub fn exact_expectation(
    params: &EduceParams,
    tokens: &[u32],
    label: &Label,
    emb: &EmbeddingTable,
    objective: Objective,
    budget: u128,
) -> Result<ExactExpectation> {
    let cfg = &params.config;
    let concepts = cfg.concepts;
    let masks = SpanMasks::new(tokens, cfg.pad_id, cfg.window)?;
    let spans = masks.spans();
    let count = configuration_count(spans.len(), concepts);
    if count > budget {
        return Err(Error::Budget { count, budget });
    }

    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params)?;
    let inputs = embed(&mut tape, tokens, emb)?;
    let rows = encode_bidirectional(&mut tape, &inputs, &vars.fwd, &vars.bwd)?;
    let contextual = tape.stack_rows(&rows)?;
    let doc_emb = tape.constant(emb.gather(tokens)?);

    // Per concept and span: probability of the span, of presence and of
    // absence, and the concept classifier's log-probability.
    struct Cell {
        span_prob: Var,
        present: Var,
        absent: Var,
        concept_lp: Var,
    }
    let mut cells: Vec<Vec<Cell>> = Vec::with_capacity(concepts);
    for c in 0..concepts {
        let gs = tape.row(vars.gamma_start, c)?;
        let start_scores = tape.matvec(contextual, gs)?;
        let gt = tape.row(vars.gamma_stop, c)?;
        let stop_scores = tape.matvec(contextual, gt)?;
        let alpha = tape.row(vars.alpha, c)?;
        let mut row = Vec::with_capacity(spans.len());
        for s in &spans {
            let ls = tape.log_softmax_at(start_scores, Some(masks.start()), s.start)?;
            let lt = tape.log_softmax_at(stop_scores, Some(&masks.stop(s.start)), s.stop)?;
            let lp = tape.add(ls, lt)?;
            let span_prob = tape.exp(lp)?;
            let excerpt = tape.mean_range(doc_emb, s.start, s.stop + 1)?;
            let a = tape.dot(alpha, excerpt)?;
            let present = tape.sigmoid(a)?;
            let neg = tape.scale(a, -1.0)?;
            let absent = tape.sigmoid(neg)?;
            let logits = tape.matvec(vars.theta, excerpt)?;
            let concept_lp = tape.log_softmax_at(logits, None, c)?;
            row.push(Cell {
                span_prob,
                present,
                absent,
                concept_lp,
            });
        }
        cells.push(row);
    }

    // Output loss depends on the code only.
    let mut out_loss = Vec::with_capacity(1 << concepts);
    for bits in 0..(1usize << concepts) {
        let z: Vec<f64> = (0..concepts).map(|c| ((bits >> c) & 1) as f64).collect();
        let zc = tape.constant(Tensor::vector(z));
        let logits = tape.matvec(vars.delta, zc)?;
        out_loss.push(output_loss_on_tape(&mut tape, cfg.task, logits, label)?);
    }

    let mut total: Option<Var> = None;
    let mut total_probability = 0.0;
    let mut idx = vec![0usize; concepts];
    'configs: loop {
        for bits in 0..(1usize << concepts) {
            let mut weight: Option<Var> = None;
            let mut loss = out_loss[bits];
            let mut active = 0usize;
            for c in 0..concepts {
                let cell = &cells[c][idx[c]];
                let on = (bits >> c) & 1 == 1;
                let gate = if on { cell.present } else { cell.absent };
                let w = tape.mul(cell.span_prob, gate)?;
                weight = Some(match weight {
                    Some(acc) => tape.mul(acc, w)?,
                    None => w,
                });
                if on {
                    active += 1;
                    if objective.lambda != 0.0 {
                        let t = tape.scale(cell.concept_lp, -objective.lambda)?;
                        loss = tape.add(loss, t)?;
                    }
                }
            }
            if objective.lambda_l1 != 0.0 && active > 0 {
                let l1 = tape.constant(Tensor::scalar(objective.lambda_l1 * active as f64));
                loss = tape.add(loss, l1)?;
            }
            let weight = weight.expect("at least one concept");
            total_probability += tape.scalar(weight);
            let term = tape.mul(weight, loss)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        // Next span assignment, concept 0 varying fastest.
        for c in 0..concepts {
            idx[c] += 1;
            if idx[c] < spans.len() {
                continue 'configs;
            }
            idx[c] = 0;
        }
        break;
    }

    let total = total.expect("at least one configuration");
    let g = tape.backward(total)?;
    let grads = (0..params.store.len())
        .map(|id| g.param(id).expect("every parameter is registered"))
        .collect();
    Ok(ExactExpectation {
        loss: tape.scalar(total),
        grads,
        configurations: count,
        total_probability,
    })
}

/// A small random model and document for checking estimators against the
/// enumeration.
#[derive(Clone, Debug)]
pub struct TinyInstance {
    pub seed: u64,
    pub params: EduceParams,
    pub emb: EmbeddingTable,
    pub tokens: Vec<u32>,
    pub label: Label,
    pub objective: Objective,
    /// Presence pre-activations are pushed far from 0, where the
    /// straight-through bias vanishes.
    pub saturated: bool,
}

impl TinyInstance {
    /// `M = 7` tokens, `C = 2` concepts, `H = 3`, `d = 4`, 3 classes.
    pub fn random(seed: u64) -> Result<Self> {
        Self::build(seed, 7, 2, false)
    }

    /// As [`TinyInstance::random`] with every presence probability within
    /// about `1e-17` of 0 or 1.
    pub fn saturated(seed: u64) -> Result<Self> {
        Self::build(seed, 7, 2, true)
    }

    pub fn build(seed: u64, len: usize, concepts: usize, saturated: bool) -> Result<Self> {
        let (d, h, classes, vocab_size) = (4, 3, 3, 8);
        let mut r = rng::stream(&[seed, 0x7e57]);
        let names: Vec<alloc::string::String> = (0..vocab_size).map(|i| alloc::format!("v{i}")).collect();
        let vocab = Vocab::from_tokens(&names);
        let mut m = Tensor::zeros(&[vocab.len(), d]);
        for id in 1..vocab.len() {
            for (j, x) in m.row_mut(id).iter_mut().enumerate() {
                *x = rng::uniform(-1.0, 1.0, &mut r);
                if saturated && j == 0 {
                    *x = 1.0 + 0.25 * *x;
                }
            }
        }
        let emb = EmbeddingTable::from_matrix(m)?;
        let config = ModelConfig {
            embed_dim: d,
            hidden: h,
            concepts,
            task: Task::Classification { classes },
            window: SpanWindow::default(),
            pad_id: vocab.pad_id(),
        };
        let enc = BiLstmParams::init(d, h, &mut r);
        let mut head = |rows: usize, cols: usize, scale: f64| {
            Tensor::matrix(
                rows,
                cols,
                (0..rows * cols).map(|_| rng::uniform(-scale, scale, &mut r)).collect(),
            )
        };
        let gamma_start = head(concepts, 2 * h, 2.0)?;
        let gamma_stop = head(concepts, 2 * h, 2.0)?;
        let mut alpha = head(concepts, d, 1.5)?;
        let theta = head(concepts, d, 1.5)?;
        let delta = head(classes, concepts, 2.0)?;
        if saturated {
            // First embedding coordinate lies in [0.75, 1.25] for every token,
            // so every excerpt mean does too.
            for c in 0..concepts {
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                let row = alpha.row_mut(c);
                row.iter_mut().for_each(|x| *x = 0.0);
                row[0] = sign * 60.0;
            }
        }
        let params = EduceParams::from_parts(config, enc, [gamma_start, gamma_stop, alpha, theta, delta])?;
        let tokens = (0..len).map(|_| r.gen_range(2..vocab.len() as u32)).collect();
        let label = Label::Class(r.gen_range(0..classes));
        Ok(Self {
            seed,
            params,
            emb,
            tokens,
            label,
            objective: Objective {
                lambda: 0.5,
                lambda_l1: 0.1,
            },
            saturated,
        })
    }
}

/// Per-coordinate comparison of one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub block: &'static str,
    pub coordinates: usize,
    /// Coordinates whose Monte-Carlo mean lies within 3 standard errors.
    pub within: usize,
    /// Largest `|mean - exact| / se` over the block.
    pub max_z: f64,
    /// Largest `|mean - exact|` over the block.
    pub max_abs_dev: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnbiasednessReport {
    pub seed: u64,
    pub traces: usize,
    pub exact_loss: f64,
    pub mc_loss: f64,
    pub mc_loss_se: f64,
    pub loss_pass: bool,
    pub total_probability: f64,
    pub blocks: Vec<BlockCheck>,
}

impl UnbiasednessReport {
    pub fn pass(&self) -> bool {
        self.loss_pass && self.blocks.iter().all(|b| b.pass)
    }

    pub fn block(&self, name: &str) -> Option<&BlockCheck> {
        self.blocks.iter().find(|b| b.block == name)
    }
}

/// Welford accumulator over flattened gradient vectors.
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    fn se(&self, i: usize) -> f64 {
        libm::sqrt(self.m2[i] / (self.n - 1.0) / self.n)
    }
}

fn within(mean: f64, exact: f64, se: f64) -> bool {
    // The slack absorbs rounding when both sides are exactly determined.
    (mean - exact).abs() <= 3.0 * se + 1e-10 * (1.0 + exact.abs())
}

/// Compares the training estimator with the exact gradient of `E[L_joint]`
/// on `traces` sampled traces:
/// * the score-function term (`r = 1`, `b = 0`) for both gammas and the
///   encoder;
/// * the pathwise term (`r = 0`) for theta and delta, and for alpha when the
///   instance is saturated;
/// * the mean joint loss against `E[L_joint]`.
pub fn check_unbiasedness(inst: &TinyInstance, traces: usize, seed: u64) -> Result<UnbiasednessReport> {
    if traces < 2 {
        return Err(Error::EmptyInput("at least two traces are needed"));
    }
    let exact = exact_expectation(
        &inst.params,
        &inst.tokens,
        &inst.label,
        &inst.emb,
        inst.objective,
        DEFAULT_BUDGET,
    )?;
    let score_fn = EstimatorConfig {
        objective: inst.objective,
        r: 1.0,
        entropy_weight: 0.0,
    };
    let pathwise = EstimatorConfig { r: 0.0, ..score_fn };

    let mut blocks: Vec<(&'static str, Vec<usize>, bool)> = vec![
        ("gamma_start", vec![EduceParams::GAMMA_START], true),
        ("gamma_stop", vec![EduceParams::GAMMA_STOP], true),
        ("encoder", (0..6).collect(), true),
        ("theta", vec![EduceParams::THETA], false),
        ("delta", vec![EduceParams::DELTA], false),
    ];
    if inst.saturated {
        blocks.push(("alpha", vec![EduceParams::ALPHA], false));
    }
    let flat_len = |ids: &[usize]| ids.iter().map(|&i| inst.params.store.get(i).len()).sum::<usize>();
    let mut moments: Vec<Moments> = blocks.iter().map(|(_, ids, _)| Moments::new(flat_len(ids))).collect();
    let mut loss_moments = Moments::new(1);

    let ids: Vec<usize> = (0..traces).collect();
    for chunk in ids.chunks(4096) {
        let results = crate::par::map(chunk, |&t| {
            let stream = || rng::stream(&[seed, 0xb1a5, inst.seed, t as u64]);
            let mut r1 = stream();
            let sf = document_gradient(
                &inst.tokens,
                &inst.label,
                &inst.params,
                &inst.emb,
                &score_fn,
                0.0,
                Choices::Sample(&mut r1),
                t,
            )?;
            let mut r0 = stream();
            let pw = document_gradient(
                &inst.tokens,
                &inst.label,
                &inst.params,
                &inst.emb,
                &pathwise,
                0.0,
                Choices::Sample(&mut r0),
                t,
            )?;
            debug_assert_eq!(sf.trace, pw.trace);
            Ok((sf, pw))
        })?;
        for (sf, pw) in &results {
            loss_moments.push(&[sf.losses.joint]);
            for ((_, ids, use_sf), m) in blocks.iter().zip(&mut moments) {
                let src = if *use_sf { &sf.grads } else { &pw.grads };
                let flat: Vec<f64> = ids.iter().flat_map(|&i| src[i].data().iter().copied()).collect();
                m.push(&flat);
            }
        }
    }

    let checks = blocks
        .iter()
        .zip(&moments)
        .map(|((name, ids, _), m)| {
            let exact_flat: Vec<f64> = ids
                .iter()
                .flat_map(|&i| exact.grads[i].data().iter().copied())
                .collect();
            let mut ok = 0;
            let mut max_z: f64 = 0.0;
            let mut max_abs_dev: f64 = 0.0;
            for (i, &e) in exact_flat.iter().enumerate() {
                let se = m.se(i);
                if within(m.mean[i], e, se) {
                    ok += 1;
                }
                let dev = (m.mean[i] - e).abs();
                max_abs_dev = max_abs_dev.max(dev);
                if se > 0.0 {
                    max_z = max_z.max(dev / se);
                }
            }
            BlockCheck {
                block: name,
                coordinates: exact_flat.len(),
                within: ok,
                max_z,
                max_abs_dev,
                pass: ok == exact_flat.len(),
            }
        })
        .collect();
    let mc_loss_se = loss_moments.se(0);
    Ok(UnbiasednessReport {
        seed: inst.seed,
        traces,
        exact_loss: exact.loss,
        mc_loss: loss_moments.mean[0],
        mc_loss_se,
        loss_pass: within(loss_moments.mean[0], exact.loss, mc_loss_se),
        total_probability: exact.total_probability,
        blocks: checks,
    })
}
