//! Bidirectional LSTM producing one contextual row `h_k = [fwd_k; bwd_k]` per
//! token. Gate blocks are stacked in the order input, forget, cell, output.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng;
use crate::text::EmbeddingTable;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    /// `4H x input`
    pub w_ih: Tensor,
    /// `4H x H`
    pub w_hh: Tensor,
    /// `4H`
    pub bias: Tensor,
}

impl LstmCellParams {
    /// Weights from uniform(-1/sqrt(H), 1/sqrt(H)); forget-gate bias 1, other
    /// biases 0.
    pub fn init<R: Rng>(input: usize, hidden: usize, r: &mut R) -> Self {
        let k = 1.0 / libm::sqrt(hidden as f64);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng::uniform(-k, k, r)).collect() };
        let w_ih = Tensor::matrix(4 * hidden, input, draw(4 * hidden * input)).expect("sized");
        let w_hh = Tensor::matrix(4 * hidden, hidden, draw(4 * hidden * hidden)).expect("sized");
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        Self {
            w_ih,
            w_hh,
            bias: Tensor::vector(b),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.cols()
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden();
        let ok = self.w_hh.shape() == [4 * h, h]
            && self.w_ih.rank() == 2
            && self.w_ih.rows() == 4 * h
            && self.bias.shape() == [4 * h];
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                op: "lstm_cell",
                left: self.w_ih.shape().to_vec(),
                right: self.w_hh.shape().to_vec(),
            })
        }
    }

    pub fn register(&self, tape: &mut Tape, first_id: usize) -> Result<LstmCellVars> {
        self.check()?;
        Ok(LstmCellVars {
            w_ih: tape.param(first_id, &self.w_ih)?,
            w_hh: tape.param(first_id + 1, &self.w_hh)?,
            bias: tape.param(first_id + 2, &self.bias)?,
            hidden: self.hidden(),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmCellVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, hidden: usize) -> Self {
        Self {
            h: tape.constant(Tensor::zeros(&[hidden])),
            c: tape.constant(Tensor::zeros(&[hidden])),
        }
    }
}

/// One cell update: `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_step(tape: &mut Tape, state: LstmState, x: Var, cell: &LstmCellVars) -> Result<LstmState> {
    let h = cell.hidden;
    let from_input = tape.matvec(cell.w_ih, x)?;
    let from_state = tape.matvec(cell.w_hh, state.h)?;
    let pre = tape.add(from_input, from_state)?;
    let pre = tape.add(pre, cell.bias)?;
    let i = tape.slice(pre, 0, h)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice(pre, h, h)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice(pre, 2 * h, h)?;
    let g = tape.tanh(g)?;
    let o = tape.slice(pre, 3 * h, h)?;
    let o = tape.sigmoid(o)?;
    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let squashed = tape.tanh(c)?;
    let h = tape.mul(o, squashed)?;
    Ok(LstmState { h, c })
}

/// Runs both directions over `inputs` and returns `[fwd_k; bwd_k]` per position.
pub fn encode_bidirectional(
    tape: &mut Tape,
    inputs: &[Var],
    fwd: &LstmCellVars,
    bwd: &LstmCellVars,
) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("encoder input"));
    }
    let m = inputs.len();
    let mut forward = Vec::with_capacity(m);
    let mut s = LstmState::zeros(tape, fwd.hidden);
    for &x in inputs {
        s = lstm_step(tape, s, x, fwd)?;
        forward.push(s.h);
    }
    let mut backward = vec![forward[0]; m];
    let mut s = LstmState::zeros(tape, bwd.hidden);
    for k in (0..m).rev() {
        s = lstm_step(tape, s, inputs[k], bwd)?;
        backward[k] = s.h;
    }
    forward
        .iter()
        .zip(&backward)
        .map(|(&a, &b)| tape.concat(&[a, b]))
        .collect()
}

/// Embedding rows of `tokens` recorded as constants (the table is frozen).
pub fn embed(tape: &mut Tape, tokens: &[u32], emb: &EmbeddingTable) -> Result<Vec<Var>> {
    tokens
        .iter()
        .map(|&t| {
            if t as usize >= emb.rows() {
                return Err(Error::Index {
                    index: t as usize,
                    len: emb.rows(),
                });
            }
            Ok(tape.constant(Tensor::vector(emb.row(t).to_vec())))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub fwd: LstmCellParams,
    pub bwd: LstmCellParams,
}

impl BiLstmParams {
    pub fn init<R: Rng>(input: usize, hidden: usize, r: &mut R) -> Self {
        Self {
            fwd: LstmCellParams::init(input, hidden, r),
            bwd: LstmCellParams::init(input, hidden, r),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }
}

/// `M x 2H` matrix of contextual vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub rows: Tensor,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.rows.row(k)
    }
}

/// Value-level single step, for inspection and tests.
pub fn lstm_step_values(cell: &LstmCellParams, h: &[f64], c: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = cell.register(&mut tape, 0)?;
    let state = LstmState {
        h: tape.constant(Tensor::vector(h.to_vec())),
        c: tape.constant(Tensor::vector(c.to_vec())),
    };
    let x = tape.constant(Tensor::vector(x.to_vec()));
    let next = lstm_step(&mut tape, state, x, &vars)?;
    Ok((tape.value(next.h).data().to_vec(), tape.value(next.c).data().to_vec()))
}

pub fn encode(tokens: &[u32], emb: &EmbeddingTable, params: &BiLstmParams) -> Result<EncoderOutput> {
    let mut tape = Tape::new();
    let fwd = params.fwd.register(&mut tape, 0)?;
    let bwd = params.bwd.register(&mut tape, 3)?;
    let inputs = embed(&mut tape, tokens, emb)?;
    let rows = encode_bidirectional(&mut tape, &inputs, &fwd, &bwd)?;
    let stacked = tape.stack_rows(&rows)?;
    Ok(EncoderOutput {
        rows: tape.value(stacked).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use crate::text::Vocab;

    fn table(n: usize, d: usize, seed: u64) -> (Vocab, EmbeddingTable) {
        let toks: Vec<alloc::string::String> = (0..n).map(|i| alloc::format!("t{i}")).collect();
        let v = Vocab::from_tokens(&toks);
        let e = EmbeddingTable::random(&v, d, seed);
        (v, e)
    }

    #[test]
    fn zero_cell_keeps_zero_state() {
        let cell = LstmCellParams::zeros(3, 2);
        let (h, c) = lstm_step_values(&cell, &[0.0; 2], &[0.0; 2], &[0.4, -1.0, 2.0]).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut cell = LstmCellParams::zeros(2, 1);
        // i, f, g, o biases
        cell.bias = Tensor::vector(vec![-20.0, 20.0, -20.0, -20.0]);
        let (_, c) = lstm_step_values(&cell, &[0.0], &[10.0], &[1.0, 1.0]).unwrap();
        // f = sigmoid(20), i*g ~ sigmoid(-20)*tanh(-20)
        let expected = 10.0 * crate::numerics::sigmoid(20.0) - crate::numerics::sigmoid(-20.0) * libm::tanh(20.0);
        assert!((c[0] - expected).abs() < 1e-12);
        assert!((c[0] - 10.0).abs() < 1e-7);
    }

    #[test]
    fn step_rejects_wrong_input_width() {
        let cell = LstmCellParams::zeros(3, 2);
        assert!(matches!(
            lstm_step_values(&cell, &[0.0; 2], &[0.0; 2], &[1.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn step_gradient_matches_finite_differences() {
        let mut r = rng::stream(&[42]);
        let cell = LstmCellParams::init(3, 2, &mut r);
        let h0 = [0.3, -0.2];
        let c0 = [0.5, 0.1];
        let x = [0.7, -0.4, 0.9];
        let weights = [0.8, -1.3, 0.6, 0.25];
        let run = |p: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let cell = LstmCellParams {
                w_ih: p[0].clone(),
                w_hh: p[1].clone(),
                bias: p[2].clone(),
            };
            let mut tape = Tape::new();
            let vars = cell.register(&mut tape, 0)?;
            let state = LstmState {
                h: tape.constant(Tensor::vector(h0.to_vec())),
                c: tape.constant(Tensor::vector(c0.to_vec())),
            };
            let xv = tape.constant(Tensor::vector(x.to_vec()));
            let next = lstm_step(&mut tape, state, xv, &vars)?;
            let both = tape.concat(&[next.h, next.c])?;
            let w = tape.constant(Tensor::vector(weights.to_vec()));
            let loss = tape.dot(both, w)?;
            let g = tape.backward(loss)?;
            Ok((tape.scalar(loss), (0..3).map(|i| g.param(i).unwrap()).collect()))
        };
        let params = [cell.w_ih.clone(), cell.w_hh.clone(), cell.bias.clone()];
        let (_, analytic) = run(&params).unwrap();
        let err = finite_diff_check(|p| run(p).map(|r| r.0), &params, &analytic, 1e-5).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn zero_parameters_give_zero_rows() {
        let (_, e) = table(5, 4, 1);
        let p = BiLstmParams {
            fwd: LstmCellParams::zeros(4, 3),
            bwd: LstmCellParams::zeros(4, 3),
        };
        let out = encode(&[2, 3, 4], &e, &p).unwrap();
        assert_eq!(out.rows.shape(), &[3, 6]);
        assert!(out.rows.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_token_halves_are_single_steps() {
        let (_, e) = table(5, 4, 1);
        let p = BiLstmParams::init(4, 3, &mut rng::stream(&[7]));
        let out = encode(&[3], &e, &p).unwrap();
        let (hf, _) = lstm_step_values(&p.fwd, &[0.0; 3], &[0.0; 3], e.row(3)).unwrap();
        let (hb, _) = lstm_step_values(&p.bwd, &[0.0; 3], &[0.0; 3], e.row(3)).unwrap();
        assert_eq!(&out.row(0)[..3], &hf[..]);
        assert_eq!(&out.row(0)[3..], &hb[..]);
    }

    #[test]
    fn reversal_swaps_halves() {
        let (_, e) = table(8, 4, 2);
        let p = BiLstmParams::init(4, 3, &mut rng::stream(&[8]));
        let tokens = [2u32, 5, 3, 7, 9, 4];
        let rev: Vec<u32> = tokens.iter().rev().copied().collect();
        let swapped = BiLstmParams {
            fwd: p.bwd.clone(),
            bwd: p.fwd.clone(),
        };
        let a = encode(&tokens, &e, &p).unwrap();
        let b = encode(&rev, &e, &swapped).unwrap();
        let m = tokens.len();
        for k in 0..m {
            assert_eq!(&a.row(k)[..3], &b.row(m - 1 - k)[3..]);
            assert_eq!(&a.row(k)[3..], &b.row(m - 1 - k)[..3]);
        }
    }

    #[test]
    fn directions_are_causal() {
        let (_, e) = table(10, 4, 3);
        let p = BiLstmParams::init(4, 3, &mut rng::stream(&[9]));
        let base = [2u32, 3, 4, 5, 6, 7];
        let k = 2;
        let mut later = base;
        later[4] = 11;
        let mut earlier = base;
        earlier[0] = 11;
        let a = encode(&base, &e, &p).unwrap();
        let b = encode(&later, &e, &p).unwrap();
        let c = encode(&earlier, &e, &p).unwrap();
        assert_eq!(&a.row(k)[..3], &b.row(k)[..3]);
        assert_ne!(&a.row(k)[3..], &b.row(k)[3..]);
        assert_eq!(&a.row(k)[3..], &c.row(k)[3..]);
        assert_ne!(&a.row(k)[..3], &c.row(k)[..3]);
    }

    #[test]
    fn out_of_vocabulary_id_is_an_index_error() {
        let (_, e) = table(3, 4, 1);
        let p = BiLstmParams::init(4, 2, &mut rng::stream(&[1]));
        assert!(matches!(encode(&[2, 99], &e, &p), Err(Error::Index { .. })));
    }

    #[test]
    fn hidden_values_are_bounded() {
        let (_, e) = table(6, 4, 4);
        let p = BiLstmParams::init(4, 5, &mut rng::stream(&[10]));
        let out = encode(&[2, 3, 4, 5, 6, 7, 2], &e, &p).unwrap();
        assert!(out.rows.data().iter().all(|v| v.abs() <= 1.0));
    }
}
