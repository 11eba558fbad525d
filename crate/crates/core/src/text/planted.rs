//! Synthetic corpus whose labels are a function of which signal trigram
//! families appear in a document.
//!
//! Family `f` owns 15 private tokens `f{f}t0 .. f{f}t14`, grouped into 5
//! trigrams. Filler positions draw from 200 shared tokens `w000 .. w199`.
//! A document of class `j` contains exactly one trigram of every family in
//! `classes[j]`, at non-overlapping random positions.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Dataset, Document, EmbeddingTable, Label, Task, Vocab};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

pub const FILLER_TOKENS: usize = 200;
pub const TRIGRAMS_PER_FAMILY: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSpec {
    pub families: usize,
    /// Family subset defining each class.
    pub classes: Vec<Vec<usize>>,
    pub docs_per_class: usize,
    pub doc_len: usize,
    pub seed: u64,
}

impl PlantedSpec {
    /// Every 2-subset of `families` as a class.
    pub fn pairs(families: usize, docs_per_class: usize, doc_len: usize, seed: u64) -> Self {
        Self {
            families,
            classes: all_subsets(families, 2),
            docs_per_class,
            doc_len,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedCorpus {
    pub spec: PlantedSpec,
    pub vocab: Vocab,
    pub dataset: Dataset,
    /// `trigrams[f][k]` are the token ids of trigram `k` of family `f`.
    pub trigrams: Vec<Vec<[u32; 3]>>,
}

/// All `k`-element subsets of `0..n` in lexicographic order.
pub fn all_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

fn family_token(f: usize, k: usize) -> String {
    format!("f{f}t{k}")
}

pub fn gen_planted(spec: &PlantedSpec) -> Result<PlantedCorpus> {
    if spec.families == 0 || spec.classes.is_empty() {
        return Err(Error::EmptyInput("planted corpus needs families and classes"));
    }
    let largest = spec.classes.iter().map(Vec::len).max().unwrap_or(0);
    if spec.doc_len < 3 * largest + 2 {
        return Err(Error::Capacity {
            needed: 3 * largest + 2,
            len: spec.doc_len,
        });
    }
    for set in &spec.classes {
        if set.iter().any(|&f| f >= spec.families) {
            return Err(Error::Config(format!("class {set:?} names an unknown family")));
        }
    }

    let mut names: Vec<String> = (0..FILLER_TOKENS).map(|i| format!("w{i:03}")).collect();
    for f in 0..spec.families {
        for k in 0..3 * TRIGRAMS_PER_FAMILY {
            names.push(family_token(f, k));
        }
    }
    let vocab = Vocab::from_tokens(&names);
    let filler: Vec<u32> = (0..FILLER_TOKENS).map(|i| vocab.id(&names[i])).collect();
    let trigrams: Vec<Vec<[u32; 3]>> = (0..spec.families)
        .map(|f| {
            (0..TRIGRAMS_PER_FAMILY)
                .map(|t| {
                    let id = |j| vocab.id(&family_token(f, 3 * t + j));
                    [id(0), id(1), id(2)]
                })
                .collect()
        })
        .collect();

    let mut r = rng::stream(&[spec.seed, 0x91A7]);
    let mut docs = Vec::with_capacity(spec.docs_per_class * spec.classes.len());
    for _ in 0..spec.docs_per_class {
        for (label, set) in spec.classes.iter().enumerate() {
            let tokens = place(set, spec.doc_len, &trigrams, &filler, &mut r);
            docs.push(Document::new(tokens, Label::Class(label), vocab.pad_id()));
        }
    }
    let dataset = Dataset::new(
        Task::Classification {
            classes: spec.classes.len(),
        },
        docs,
    )?;
    Ok(PlantedCorpus {
        spec: spec.clone(),
        vocab,
        dataset,
        trigrams,
    })
}

fn place<R: Rng>(set: &[usize], len: usize, trigrams: &[Vec<[u32; 3]>], filler: &[u32], r: &mut R) -> Vec<u32> {
    let mut families = set.to_vec();
    rng::shuffle(&mut families, r);
    // Lay out `len - 3k` filler slots and `k` blocks; pick which slots are blocks.
    let blocks = families.len();
    let slots = len - 3 * blocks + blocks;
    let mut order: Vec<usize> = (0..slots).collect();
    for i in 0..blocks {
        let j = r.gen_range(i..slots);
        order.swap(i, j);
    }
    let mut is_block = vec![false; slots];
    for &s in &order[..blocks] {
        is_block[s] = true;
    }
    let mut tokens = Vec::with_capacity(len);
    let mut next = families.iter();
    for b in is_block {
        if b {
            let f = *next.next().expect("one family per block");
            let tri = trigrams[f][r.gen_range(0..TRIGRAMS_PER_FAMILY)];
            tokens.extend_from_slice(&tri);
        } else {
            tokens.push(filler[r.gen_range(0..filler.len())]);
        }
    }
    tokens
}

/// Families whose trigrams occur contiguously in `tokens`, found by scanning
/// every window.
pub fn scan_families(corpus: &PlantedCorpus, tokens: &[u32]) -> Vec<usize> {
    let mut found = Vec::new();
    for (f, tris) in corpus.trigrams.iter().enumerate() {
        let hit = tokens.windows(3).any(|w| tris.iter().any(|t| t[..] == w[..]));
        if hit {
            found.push(f);
        }
    }
    found
}

/// Word vectors for the planted vocabulary: tokens of one family sit around
/// a random family direction of norm 3, filler sits near the origin, each
/// word adds uniform noise in [-0.25, 0.25], and pad is zero.
pub fn planted_embeddings(corpus: &PlantedCorpus, dim: usize, seed: u64) -> EmbeddingTable {
    const FAMILY_NORM: f64 = 3.0;
    const NOISE: f64 = 0.25;
    let mut r = rng::stream(&[seed, 0xE4B]);
    let centroids: Vec<Vec<f64>> = (0..corpus.spec.families)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng::uniform(-1.0, 1.0, &mut r)).collect();
            let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            v.into_iter().map(|x| FAMILY_NORM * x / n).collect()
        })
        .collect();
    let vocab = &corpus.vocab;
    let mut data = vec![0.0; vocab.len() * dim];
    for (id, tok) in vocab.tokens().iter().enumerate() {
        if id as u32 == vocab.pad_id() {
            continue;
        }
        let family = tok
            .strip_prefix('f')
            .and_then(|rest| rest.split('t').next())
            .and_then(|n| n.parse::<usize>().ok());
        let row = &mut data[id * dim..(id + 1) * dim];
        for (k, x) in row.iter_mut().enumerate() {
            *x = family.map_or(0.0, |f| centroids[f][k]) + rng::uniform(-NOISE, NOISE, &mut r);
        }
    }
    EmbeddingTable::from_matrix(Tensor::matrix(vocab.len(), dim, data).expect("sized above")).expect("rank 2")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_of_four_choose_two() {
        let s = all_subsets(4, 2);
        assert_eq!(s.len(), 6);
        assert_eq!(s[0], vec![0, 1]);
        assert_eq!(s[5], vec![2, 3]);
    }

    #[test]
    fn each_document_carries_exactly_its_families() {
        let spec = PlantedSpec::pairs(4, 25, 20, 7);
        let c = gen_planted(&spec).unwrap();
        assert_eq!(c.dataset.len(), 150);
        for d in &c.dataset.docs {
            assert_eq!(d.len(), 20);
            let label = d.label.class().unwrap();
            assert_eq!(scan_families(&c, &d.tokens), spec.classes[label]);
            // exactly one trigram per family: count signal tokens
            let signal = d
                .tokens
                .iter()
                .filter(|&&t| c.vocab.token(t).unwrap().starts_with('f'))
                .count();
            assert_eq!(signal, 6);
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = PlantedSpec::pairs(4, 5, 12, 3);
        assert_eq!(gen_planted(&spec).unwrap().dataset, gen_planted(&spec).unwrap().dataset);
    }

    #[test]
    fn too_short_documents_are_rejected() {
        let spec = PlantedSpec::pairs(4, 5, 7, 3);
        assert!(matches!(gen_planted(&spec), Err(Error::Capacity { .. })));
    }

    #[test]
    fn filler_and_signal_embeddings_are_separated() {
        let c = gen_planted(&PlantedSpec::pairs(4, 2, 12, 1)).unwrap();
        let e = planted_embeddings(&c, 16, 5);
        assert_eq!(e.rows(), c.vocab.len());
        assert!(e.row(c.vocab.pad_id()).iter().all(|x| *x == 0.0));
    }
}
