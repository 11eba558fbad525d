//! Vocabulary, documents, datasets and frozen embedding tables.

mod planted;
mod split;

pub use planted::{all_subsets, gen_planted, planted_embeddings, scan_families, PlantedCorpus, PlantedSpec};
pub use split::{random_split, stratified_assign, stratified_split};

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Documents shorter than this are right-padded so that at least one
/// start/stop pair exists under the 3..=10 offset window.
pub const MIN_DOC_LEN: usize = 4;

/// Lowercases and splits on whitespace.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(|t| t.to_lowercase()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    ids: BTreeMap<String, u32>,
    tokens: Vec<String>,
    pad_id: u32,
    unk_id: u32,
}

impl Vocab {
    /// Builds a vocabulary from text lines. Ids after the two specials follow
    /// first occurrence; tokens seen fewer than `min_count` times map to unk.
    pub fn build<'a, I>(lines: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for line in lines {
            for tok in tokenize(line) {
                let n = counts.entry(tok.clone()).or_insert(0);
                if *n == 0 {
                    order.push(tok);
                }
                *n += 1;
            }
        }
        if order.is_empty() {
            return Err(Error::EmptyInput("corpus has no tokens"));
        }
        let kept = order.into_iter().filter(|t| counts[t] >= min_count.max(1));
        Ok(Self::from_tokens(kept))
    }

    /// Vocabulary with the two specials followed by `tokens` in order.
    /// Duplicates and tokens equal to a special are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self {
            ids: BTreeMap::new(),
            tokens: Vec::new(),
            pad_id: 0,
            unk_id: 1,
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    fn insert(&mut self, tok: &str) {
        if self.ids.contains_key(tok) {
            return;
        }
        let id = self.tokens.len() as u32;
        self.ids.insert(tok.to_string(), id);
        self.tokens.push(tok.to_string());
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(self.unk_id)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, line: &str) -> Vec<u32> {
        tokenize(line).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK_TOKEN)).collect()
    }
}

/// Prediction task shared by every document of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification { classes: usize },
    Regression { targets: usize },
}

impl Task {
    /// Size of the output layer.
    pub fn outputs(&self) -> usize {
        match *self {
            Task::Classification { classes } => classes,
            Task::Regression { targets } => targets,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    Targets(Vec<f64>),
}

impl Label {
    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Targets(_) => None,
        }
    }
}

/// Annotated token range `[start, stop)` covering one aspect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GoldSpan {
    pub aspect: usize,
    pub start: usize,
    pub stop: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub tokens: Vec<u32>,
    pub label: Label,
    pub gold_spans: Vec<GoldSpan>,
    pub word_labels: Option<Vec<u32>>,
}

impl Document {
    /// Document whose tokens are right-padded with `pad_id` up to
    /// [`MIN_DOC_LEN`].
    pub fn new(mut tokens: Vec<u32>, label: Label, pad_id: u32) -> Self {
        while tokens.len() < MIN_DOC_LEN {
            tokens.push(pad_id);
        }
        Self {
            tokens,
            label,
            gold_spans: Vec::new(),
            word_labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub docs: Vec<Document>,
}

impl Dataset {
    /// Checks every label against the task's domain.
    pub fn new(task: Task, docs: Vec<Document>) -> Result<Self> {
        for d in &docs {
            check_label(task, &d.label)?;
        }
        Ok(Self { task, docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn class_labels(&self) -> Option<Vec<usize>> {
        self.docs.iter().map(|d| d.label.class()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            task: self.task,
            docs: indices.iter().map(|&i| self.docs[i].clone()).collect(),
        }
    }
}

pub fn check_label(task: Task, label: &Label) -> Result<()> {
    match (task, label) {
        (Task::Classification { classes }, Label::Class(c)) => {
            if *c >= classes {
                return Err(Error::Label { label: *c, classes });
            }
        }
        (Task::Regression { targets }, Label::Targets(t)) => {
            if t.len() != targets {
                return Err(Error::TaskMismatch("target vector length differs from the task"));
            }
            if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::TaskMismatch("regression targets must lie in [0, 1]"));
            }
        }
        _ => return Err(Error::TaskMismatch("label kind does not match the task")),
    }
    Ok(())
}

/// Frozen `vocab x d` word-vector matrix. Never part of any gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    matrix: Tensor,
}

impl EmbeddingTable {
    /// Every row drawn from a seeded uniform(-0.1, 0.1); the pad row is zero.
    pub fn random(vocab: &Vocab, dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(&[seed, 0xE3B]);
        let mut data: Vec<f64> = (0..vocab.len() * dim)
            .map(|_| rng::uniform(-0.1, 0.1, &mut r))
            .collect();
        let pad = vocab.pad_id() as usize;
        data[pad * dim..(pad + 1) * dim].fill(0.0);
        Self {
            matrix: Tensor::matrix(vocab.len(), dim, data).expect("sized above"),
        }
    }

    pub fn from_matrix(matrix: Tensor) -> Result<Self> {
        if matrix.rank() != 2 {
            return Err(Error::Shape {
                op: "embedding_table",
                left: matrix.shape().to_vec(),
                right: alloc::vec![],
            });
        }
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn row(&self, id: u32) -> &[f64] {
        self.matrix.row(id as usize)
    }

    pub fn set_row(&mut self, id: u32, values: &[f64]) -> Result<()> {
        if values.len() != self.dim() || id as usize >= self.rows() {
            return Err(Error::Index {
                index: id as usize,
                len: self.rows(),
            });
        }
        self.matrix.row_mut(id as usize).copy_from_slice(values);
        Ok(())
    }

    /// The `M x d` block of rows for a token sequence.
    pub fn gather(&self, tokens: &[u32]) -> Result<Tensor> {
        let d = self.dim();
        let mut data = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            if t as usize >= self.rows() {
                return Err(Error::Index {
                    index: t as usize,
                    len: self.rows(),
                });
            }
            data.extend_from_slice(self.row(t));
        }
        Tensor::matrix(tokens.len(), d, data)
    }
}
