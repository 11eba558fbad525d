use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{EduceParams, ForwardTrace, ParamStore};
use crate::numerics::{argmax, masked_softmax, matvec, Tensor};
use crate::rng;
use crate::text::{stratified_assign, Dataset, EmbeddingTable};
use crate::training::{adam_step, OptimizerState};

/// Budget of the freshly trained concept classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosterioriConfig {
    pub split_seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Share of each concept's excerpts used for training.
    pub train_fraction: f64,
}

impl Default for PosterioriConfig {
    fn default() -> Self {
        Self {
            split_seed: 0,
            epochs: 200,
            lr: 1e-2,
            batch_size: 32,
            train_fraction: 0.8,
        }
    }
}

/// `(s_c, c)` for every present excerpt, in document then concept order.
pub fn present_excerpts(traces: &[ForwardTrace]) -> Vec<(Vec<f64>, usize)> {
    traces
        .iter()
        .flat_map(|t| t.extractions.iter().filter(|e| e.present))
        .map(|e| (e.excerpt.clone(), e.concept))
        .collect()
}

/// Trains a new bias-free linear softmax classifier on a stratified share of
/// the excerpts and reports its accuracy on the rest. Concepts with a single
/// excerpt go to the training share.
pub fn posteriori_from_pairs(pairs: &[(Vec<f64>, usize)], concepts: usize, cfg: &PosterioriConfig) -> Result<f64> {
    let mut seen = alloc::vec![0usize; concepts];
    for (_, c) in pairs {
        if *c >= concepts {
            return Err(Error::Label {
                label: *c,
                classes: concepts,
            });
        }
        seen[*c] += 1;
    }
    let distinct = seen.iter().filter(|&&n| n > 0).count();
    if distinct < 2 {
        return Err(Error::Degenerate(format!(
            "{} present excerpts cover {distinct} concept(s); at least 2 are needed",
            pairs.len()
        )));
    }
    let split: Vec<usize> = (0..pairs.len()).filter(|&i| seen[pairs[i].1] >= 2).collect();
    let labels: Vec<usize> = split.iter().map(|&i| pairs[i].1).collect();
    let parts = stratified_assign(&labels, &[cfg.train_fraction, 1.0 - cfg.train_fraction], cfg.split_seed)?;
    let mut train: Vec<usize> = (0..pairs.len()).filter(|&i| seen[pairs[i].1] < 2).collect();
    let mut test = Vec::new();
    for (&i, &part) in split.iter().zip(&parts) {
        if part == 0 {
            train.push(i);
        } else {
            test.push(i);
        }
    }
    train.sort_unstable();
    if test.is_empty() {
        return Err(Error::Degenerate(format!("no held-out excerpts among {}", pairs.len())));
    }

    let d = pairs[0].0.len();
    let mut r = rng::stream(&[cfg.split_seed, 0xa9c0]);
    let k = 1.0 / libm::sqrt(d as f64);
    let w = Tensor::matrix(
        concepts,
        d,
        (0..concepts * d).map(|_| rng::uniform(-k, k, &mut r)).collect(),
    )?;
    let mut store = ParamStore::new();
    store.push("w", w);
    let mut opt = OptimizerState::new(&store, 0.9, 0.999);
    let all_valid = alloc::vec![true; concepts];
    for epoch in 0..cfg.epochs {
        let mut order = train.clone();
        rng::shuffle(&mut order, &mut rng::stream(&[cfg.split_seed, 0xa9c1, epoch as u64]));
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut g = Tensor::zeros(&[concepts, d]);
            for &i in batch {
                let (s, c) = &pairs[i];
                let logits = matvec(store.get(0), &Tensor::vector(s.clone()))?;
                let p = masked_softmax(logits.data(), &all_valid)?;
                for (j, pj) in p.iter().enumerate() {
                    let coef = pj - if j == *c { 1.0 } else { 0.0 };
                    for (gj, x) in g.row_mut(j).iter_mut().zip(s) {
                        *gj += coef * x;
                    }
                }
            }
            g.scale_in_place(1.0 / batch.len() as f64);
            adam_step(&mut store, core::slice::from_mut(&mut g), &mut opt, cfg.lr, 0.0)?;
        }
    }
    let mut hits = 0usize;
    for &i in &test {
        let (s, c) = &pairs[i];
        let logits = matvec(store.get(0), &Tensor::vector(s.clone()))?;
        hits += (argmax(logits.data()) == *c) as usize;
    }
    Ok(hits as f64 / test.len() as f64)
}

/// A-posteriori concept accuracy of a model on `data`, from one sampled pass
/// per document.
pub fn posteriori_concept_accuracy(
    params: &EduceParams,
    data: &Dataset,
    emb: &EmbeddingTable,
    eval_seed: u64,
    cfg: &PosterioriConfig,
) -> Result<f64> {
    let traces = super::sampled_traces(params, data, emb, eval_seed)?;
    posteriori_from_pairs(&present_excerpts(&traces), params.config.concepts, cfg)
}
