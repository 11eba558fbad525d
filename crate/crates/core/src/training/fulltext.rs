//! Comparison model without a bottleneck: the BiLSTM states of the whole
//! document are averaged and fed to a linear head with a bias.

use alloc::vec::Vec;

use super::losses::output_loss_on_tape;
use crate::encoder::{embed, encode_bidirectional, BiLstmParams, LstmCellParams};
use crate::error::{Error, Result};
use crate::model::{output_from_logits, ParamStore};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng;
use crate::text::{EmbeddingTable, Label, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FullTextConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FullTextParams {
    pub config: FullTextConfig,
    pub store: ParamStore,
}

impl FullTextParams {
    pub const WEIGHT: usize = 6;
    pub const BIAS: usize = 7;

    pub const NAMES: [&'static str; 8] = [
        "encoder.fwd.w_ih",
        "encoder.fwd.w_hh",
        "encoder.fwd.bias",
        "encoder.bwd.w_ih",
        "encoder.bwd.w_hh",
        "encoder.bwd.bias",
        "head.weight",
        "head.bias",
    ];

    pub fn init(config: FullTextConfig, seed: u64) -> Result<Self> {
        if config.embed_dim == 0 || config.hidden == 0 || config.task.outputs() == 0 {
            return Err(Error::Config(alloc::format!(
                "every model dimension must be positive: {config:?}"
            )));
        }
        let mut r = rng::stream(&[seed, 0x1417]);
        let enc = BiLstmParams::init(config.embed_dim, config.hidden, &mut r);
        let y = config.task.outputs();
        let cols = 2 * config.hidden;
        let k = 1.0 / libm::sqrt(cols as f64);
        let weight = Tensor::matrix(y, cols, (0..y * cols).map(|_| rng::uniform(-k, k, &mut r)).collect())?;
        let mut store = ParamStore::new();
        let tensors = [
            enc.fwd.w_ih,
            enc.fwd.w_hh,
            enc.fwd.bias,
            enc.bwd.w_ih,
            enc.bwd.w_hh,
            enc.bwd.bias,
            weight,
            Tensor::zeros(&[y]),
        ];
        for (name, t) in Self::NAMES.iter().zip(tensors) {
            store.push(name, t);
        }
        Ok(Self { config, store })
    }

    /// Rebuilds parameters from a store; names and shapes must match `config`.
    pub fn from_store(config: FullTextConfig, store: ParamStore) -> Result<Self> {
        let reference = Self::init(config, 0)?;
        if store.names() != reference.store.names() {
            return Err(Error::Config(alloc::format!(
                "parameter names {:?} do not match the baseline layout",
                store.names()
            )));
        }
        for (i, (want, got)) in reference.store.tensors().iter().zip(store.tensors()).enumerate() {
            if want.shape() != got.shape() {
                return Err(Error::Shape {
                    op: Self::NAMES[i],
                    left: got.shape().to_vec(),
                    right: want.shape().to_vec(),
                });
            }
        }
        Ok(Self { config, store })
    }

    pub fn encoder(&self) -> BiLstmParams {
        let cell = |base: usize| LstmCellParams {
            w_ih: self.store.get(base).clone(),
            w_hh: self.store.get(base + 1).clone(),
            bias: self.store.get(base + 2).clone(),
        };
        BiLstmParams {
            fwd: cell(0),
            bwd: cell(3),
        }
    }
}

fn logits_on_tape(tape: &mut Tape, params: &FullTextParams, tokens: &[u32], emb: &EmbeddingTable) -> Result<Var> {
    let s = &params.store;
    let cell = |tape: &mut Tape, base: usize| {
        LstmCellParams {
            w_ih: s.get(base).clone(),
            w_hh: s.get(base + 1).clone(),
            bias: s.get(base + 2).clone(),
        }
        .register(tape, base)
    };
    let fwd = cell(tape, 0)?;
    let bwd = cell(tape, 3)?;
    let w = tape.param(FullTextParams::WEIGHT, s.get(FullTextParams::WEIGHT))?;
    let b = tape.param(FullTextParams::BIAS, s.get(FullTextParams::BIAS))?;
    let inputs = embed(tape, tokens, emb)?;
    let rows = encode_bidirectional(tape, &inputs, &fwd, &bwd)?;
    let stacked = tape.stack_rows(&rows)?;
    let pooled = tape.mean_range(stacked, 0, tokens.len())?;
    let wx = tape.matvec(w, pooled)?;
    tape.add(wx, b)
}

/// Class distribution (or per-target prediction) for one document.
pub fn fulltext_predict(params: &FullTextParams, tokens: &[u32], emb: &EmbeddingTable) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let logits = logits_on_tape(&mut tape, params, tokens, emb)?;
    output_from_logits(tape.value(logits).data(), params.config.task)
}

/// Loss and gradient (one tensor per parameter id) for one document.
pub fn fulltext_gradient(
    params: &FullTextParams,
    tokens: &[u32],
    label: &Label,
    emb: &EmbeddingTable,
    index: usize,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let logits = logits_on_tape(&mut tape, params, tokens, emb)?;
    let loss = output_loss_on_tape(&mut tape, params.config.task, logits, label)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            index,
            detail: alloc::format!("baseline output loss {value}"),
        });
    }
    let g = tape.backward(loss)?;
    let grads = (0..params.store.len())
        .map(|id| g.param(id).expect("every parameter is registered"))
        .collect();
    Ok((value, grads))
}
