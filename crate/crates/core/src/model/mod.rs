//! The concept-bottleneck pipeline: excerpt distributions and sampling,
//! excerpt pooling, presence heads, the concept classifier and the output head.

mod forward;
mod params;
mod span;

pub use forward::{
    forward, forward_with, register_params, trace_on_tape, Choices, ConceptExtraction, ForwardTrace, ParamVars,
    TraceVars,
};
pub use params::ParamStore;
pub use span::{Span, SpanMasks, SpanWindow};

use alloc::vec::Vec;

use rand::Rng;

use crate::encoder::{BiLstmParams, EncoderOutput, LstmCellParams};
use crate::error::{Error, Result};
use crate::numerics::{dot, masked_softmax, matvec, sigmoid, Tensor};
use crate::rng;
use crate::text::{EmbeddingTable, Task};

/// Architecture of an EDUCE model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub concepts: usize,
    pub task: Task,
    pub window: SpanWindow,
    pub pad_id: u32,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.embed_dim == 0 || self.hidden == 0 || self.concepts == 0 || self.task.outputs() == 0 {
            return Err(Error::Config(alloc::format!(
                "every model dimension must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// All trainable tensors. No head carries a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct EduceParams {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl EduceParams {
    pub const ENC_FWD: usize = 0;
    pub const ENC_BWD: usize = 3;
    pub const GAMMA_START: usize = 6;
    pub const GAMMA_STOP: usize = 7;
    pub const ALPHA: usize = 8;
    pub const THETA: usize = 9;
    pub const DELTA: usize = 10;

    pub const NAMES: [&'static str; 11] = [
        "encoder.fwd.w_ih",
        "encoder.fwd.w_hh",
        "encoder.fwd.bias",
        "encoder.bwd.w_ih",
        "encoder.bwd.w_hh",
        "encoder.bwd.bias",
        "gamma_start",
        "gamma_stop",
        "alpha",
        "theta",
        "delta",
    ];

    /// Encoder as in [`LstmCellParams::init`]; every head uniform in
    /// `+-1/sqrt(fan_in)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(&[seed, 0x1417]);
        let enc = BiLstmParams::init(config.embed_dim, config.hidden, &mut r);
        let c = config.concepts;
        let two_h = 2 * config.hidden;
        let d = config.embed_dim;
        let y = config.task.outputs();
        let mut head = |rows: usize, cols: usize| {
            let k = 1.0 / libm::sqrt(cols as f64);
            let data = (0..rows * cols).map(|_| rng::uniform(-k, k, &mut r)).collect();
            Tensor::matrix(rows, cols, data).expect("sized")
        };
        let gamma_start = head(c, two_h);
        let gamma_stop = head(c, two_h);
        let alpha = head(c, d);
        let theta = head(c, d);
        let delta = head(y, c);
        Self::from_parts(config, enc, [gamma_start, gamma_stop, alpha, theta, delta])
    }

    /// Assembles parameters from an encoder and the five heads in the order
    /// `gamma_start, gamma_stop, alpha, theta, delta`.
    pub fn from_parts(config: ModelConfig, enc: BiLstmParams, heads: [Tensor; 5]) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let tensors = [
            enc.fwd.w_ih,
            enc.fwd.w_hh,
            enc.fwd.bias,
            enc.bwd.w_ih,
            enc.bwd.w_hh,
            enc.bwd.bias,
        ]
        .into_iter()
        .chain(heads);
        for (name, t) in Self::NAMES.iter().zip(tensors) {
            store.push(name, t);
        }
        let p = Self { config, store };
        p.check_shapes()?;
        Ok(p)
    }

    /// Rebuilds parameters from a store whose names and shapes match `config`.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        if store.names().iter().map(|s| s.as_str()).ne(Self::NAMES.iter().copied()) {
            return Err(Error::Config(alloc::format!(
                "parameter names {:?} do not match the model layout",
                store.names()
            )));
        }
        let p = Self { config, store };
        p.check_shapes()?;
        Ok(p)
    }

    fn expected_shapes(&self) -> [[usize; 2]; 11] {
        let c = &self.config;
        let (h, d, k, y) = (c.hidden, c.embed_dim, c.concepts, c.task.outputs());
        [
            [4 * h, d],
            [4 * h, h],
            [4 * h, 0],
            [4 * h, d],
            [4 * h, h],
            [4 * h, 0],
            [k, 2 * h],
            [k, 2 * h],
            [k, d],
            [k, d],
            [y, k],
        ]
    }

    fn check_shapes(&self) -> Result<()> {
        for (i, want) in self.expected_shapes().iter().enumerate() {
            let got = self.store.get(i).shape();
            let ok = if want[1] == 0 {
                got == [want[0]]
            } else {
                got == &want[..]
            };
            if !ok {
                return Err(Error::Shape {
                    op: Self::NAMES[i],
                    left: got.to_vec(),
                    right: want.iter().copied().filter(|&x| x != 0).collect(),
                });
            }
        }
        Ok(())
    }

    pub fn encoder(&self) -> BiLstmParams {
        let cell = |base: usize| LstmCellParams {
            w_ih: self.store.get(base).clone(),
            w_hh: self.store.get(base + 1).clone(),
            bias: self.store.get(base + 2).clone(),
        };
        BiLstmParams {
            fwd: cell(Self::ENC_FWD),
            bwd: cell(Self::ENC_BWD),
        }
    }

    pub fn gamma_start(&self) -> &Tensor {
        self.store.get(Self::GAMMA_START)
    }

    pub fn gamma_stop(&self) -> &Tensor {
        self.store.get(Self::GAMMA_STOP)
    }

    pub fn alpha(&self) -> &Tensor {
        self.store.get(Self::ALPHA)
    }

    pub fn theta(&self) -> &Tensor {
        self.store.get(Self::THETA)
    }

    pub fn delta(&self) -> &Tensor {
        self.store.get(Self::DELTA)
    }
}

fn concept_row(m: &Tensor, c: usize) -> Result<Tensor> {
    if c >= m.rows() {
        return Err(Error::Index {
            index: c,
            len: m.rows(),
        });
    }
    Ok(Tensor::vector(m.row(c).to_vec()))
}

/// Scores `gamma[c] . h_k` for every position.
fn position_scores(enc: &EncoderOutput, gamma: &Tensor, c: usize) -> Result<Vec<f64>> {
    Ok(matvec(&enc.rows, &concept_row(gamma, c)?)?.into_data())
}

/// `p_start(k | x, c)`: softmax of the start scores over the valid starts.
pub fn start_distribution(enc: &EncoderOutput, gamma_start: &Tensor, c: usize, masks: &SpanMasks) -> Result<Vec<f64>> {
    masked_softmax(&position_scores(enc, gamma_start, c)?, masks.start())
}

/// `p_stop(k | x, c, start)`: softmax of the stop scores over the window
/// following `start`.
pub fn stop_distribution(
    enc: &EncoderOutput,
    gamma_stop: &Tensor,
    c: usize,
    start: usize,
    masks: &SpanMasks,
) -> Result<Vec<f64>> {
    if start >= masks.len() || !masks.start()[start] {
        return Err(Error::NoValidPosition("start position is not a valid start"));
    }
    masked_softmax(&position_scores(enc, gamma_stop, c)?, &masks.stop(start))
}

/// Samples a start, then a stop given the start. Returns the span with the
/// log-probabilities of both draws.
pub fn sample_excerpt<R: Rng + ?Sized>(
    enc: &EncoderOutput,
    params: &EduceParams,
    c: usize,
    masks: &SpanMasks,
    r: &mut R,
) -> Result<(Span, f64, f64)> {
    let p_start = start_distribution(enc, params.gamma_start(), c, masks)?;
    let start = rng::sample_categorical(&p_start, r);
    let p_stop = stop_distribution(enc, params.gamma_stop(), c, start, masks)?;
    let stop = rng::sample_categorical(&p_stop, r);
    Ok((Span { start, stop }, libm::log(p_start[start]), libm::log(p_stop[stop])))
}

/// Mean of the embedding rows of `tokens[start..=stop]`.
pub fn pool_excerpt(span: Span, emb: &EmbeddingTable, tokens: &[u32]) -> Result<Vec<f64>> {
    if span.stop >= tokens.len() || span.start > span.stop {
        return Err(Error::Index {
            index: span.stop,
            len: tokens.len(),
        });
    }
    let mut acc = alloc::vec![0.0; emb.dim()];
    for &t in &tokens[span.start..=span.stop] {
        if t as usize >= emb.rows() {
            return Err(Error::Index {
                index: t as usize,
                len: emb.rows(),
            });
        }
        for (a, x) in acc.iter_mut().zip(emb.row(t)) {
            *a += x;
        }
    }
    let k = span.len() as f64;
    for a in &mut acc {
        *a /= k;
    }
    Ok(acc)
}

/// `p_c = sigmoid(alpha_c . s_c)` and a Bernoulli draw from it.
pub fn presence_head<R: Rng + ?Sized>(excerpt: &[f64], alpha: &Tensor, c: usize, r: &mut R) -> Result<(f64, bool)> {
    let row = concept_row(alpha, c)?;
    if row.len() != excerpt.len() {
        return Err(Error::Shape {
            op: "presence_head",
            left: row.shape().to_vec(),
            right: alloc::vec![excerpt.len()],
        });
    }
    let p = sigmoid(dot(row.data(), excerpt));
    Ok((p, rng::sample_bernoulli(p, r)))
}

/// `softmax(theta s_c)`: which concept an excerpt was extracted for.
pub fn concept_classifier(theta: &Tensor, excerpt: &[f64]) -> Result<Vec<f64>> {
    let logits = matvec(theta, &Tensor::vector(excerpt.to_vec()))?;
    masked_softmax(logits.data(), &alloc::vec![true; logits.len()])
}

pub fn code_vector(code: &[bool]) -> Tensor {
    Tensor::vector(code.iter().map(|&z| if z { 1.0 } else { 0.0 }).collect())
}

/// Prediction from the binary code alone: `softmax(delta z)` for
/// classification, `sigmoid(delta z)` per target for regression.
pub fn output_head(delta: &Tensor, code: &[bool], task: Task) -> Result<Vec<f64>> {
    let logits = matvec(delta, &code_vector(code))?;
    output_from_logits(logits.data(), task)
}

pub(crate) fn output_from_logits(logits: &[f64], task: Task) -> Result<Vec<f64>> {
    match task {
        Task::Classification { .. } => masked_softmax(logits, &alloc::vec![true; logits.len()]),
        Task::Regression { .. } => Ok(logits.iter().map(|&v| sigmoid(v)).collect()),
    }
}
