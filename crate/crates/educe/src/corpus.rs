//! Tab-separated corpora: `label<TAB>text[<TAB>gold spans[<TAB>word labels]]`.
//!
//! The label is a class id or comma-separated regression targets. Gold spans
//! are `aspect:start-stop` items joined by `;` (0-based, stop exclusive), and
//! `-` or an empty field means none. Word labels are one integer per token.
//! Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::path::Path;

use educe_core::text::{tokenize, Dataset, Document, GoldSpan, Label, Task, Vocab, MIN_DOC_LEN};

use crate::error::{read_to_string, write_file, CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Regression,
}

/// One parsed line before the vocabulary is known.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDoc {
    pub line: usize,
    pub label: Label,
    pub tokens: Vec<String>,
    pub gold_spans: Vec<GoldSpan>,
    pub word_labels: Option<Vec<u32>>,
}

fn parse_label(field: &str, kind: TaskKind, path: &Path, line: usize) -> Result<Label> {
    match kind {
        TaskKind::Classification => field.trim().parse().map(Label::Class).map_err(|_| {
            CliError::parse(
                path,
                line,
                format!("class label {field:?} is not a non-negative integer"),
            )
        }),
        TaskKind::Regression => {
            let mut t = Vec::new();
            for v in field.split(',') {
                let x: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::parse(path, line, format!("target {v:?} is not a number")))?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(CliError::parse(path, line, format!("target {x} outside [0, 1]")));
                }
                t.push(x);
            }
            Ok(Label::Targets(t))
        }
    }
}

fn parse_spans(field: &str, path: &Path, line: usize) -> Result<Vec<GoldSpan>> {
    let field = field.trim();
    if field.is_empty() || field == "-" {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let bad = || CliError::parse(path, line, format!("gold span {item:?} is not aspect:start-stop"));
            let (aspect, range) = item.trim().split_once(':').ok_or_else(bad)?;
            let (start, stop) = range.split_once('-').ok_or_else(bad)?;
            let span = GoldSpan {
                aspect: aspect.parse().map_err(|_| bad())?,
                start: start.parse().map_err(|_| bad())?,
                stop: stop.parse().map_err(|_| bad())?,
            };
            if span.stop <= span.start {
                return Err(bad());
            }
            Ok(span)
        })
        .collect()
}

pub fn parse_corpus(text: &str, path: &Path, kind: TaskKind) -> Result<Vec<RawDoc>> {
    let mut docs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() < 2 || cols.len() > 4 {
            return Err(CliError::parse(
                path,
                line,
                format!("expected 2 to 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        let label = parse_label(cols[0], kind, path, line)?;
        let tokens = tokenize(cols[1]);
        if tokens.is_empty() {
            return Err(CliError::parse(path, line, "document has no tokens"));
        }
        let gold_spans = match cols.get(2) {
            Some(f) => parse_spans(f, path, line)?,
            None => Vec::new(),
        };
        if let Some(g) = gold_spans.iter().find(|g| g.stop > tokens.len().max(MIN_DOC_LEN)) {
            return Err(CliError::parse(
                path,
                line,
                format!("gold span {g:?} runs past the document"),
            ));
        }
        let word_labels = match cols.get(3) {
            Some(f) => {
                let w = f
                    .split_whitespace()
                    .map(|v| v.parse::<u32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| CliError::parse(path, line, "word labels must be non-negative integers"))?;
                if w.len() != tokens.len() {
                    return Err(CliError::parse(
                        path,
                        line,
                        format!("{} word labels for {} tokens", w.len(), tokens.len()),
                    ));
                }
                Some(w)
            }
            None => None,
        };
        docs.push(RawDoc {
            line,
            label,
            tokens,
            gold_spans,
            word_labels,
        });
    }
    Ok(docs)
}

pub fn read_corpus(path: &Path, kind: TaskKind) -> Result<Vec<RawDoc>> {
    parse_corpus(&read_to_string(path)?, path, kind)
}

/// Class count (largest label + 1) or target count of a parsed corpus.
pub fn infer_task(docs: &[RawDoc], kind: TaskKind) -> Option<Task> {
    match kind {
        TaskKind::Classification => docs
            .iter()
            .filter_map(|d| d.label.class())
            .max()
            .map(|m| Task::Classification { classes: m + 1 }),
        TaskKind::Regression => docs.first().and_then(|d| match &d.label {
            Label::Targets(t) => Some(Task::Regression { targets: t.len() }),
            Label::Class(_) => None,
        }),
    }
}

pub fn build_vocab(docs: &[RawDoc], min_count: usize) -> Result<Vocab> {
    let lines: Vec<String> = docs.iter().map(|d| d.tokens.join(" ")).collect();
    Ok(Vocab::build(lines.iter().map(String::as_str), min_count)?)
}

/// Maps tokens to ids and checks labels against `task`. Word labels of
/// padding positions take `pad_word_label`.
pub fn to_dataset(docs: &[RawDoc], path: &Path, task: Task, vocab: &Vocab, pad_word_label: u32) -> Result<Dataset> {
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        educe_core::text::check_label(task, &d.label).map_err(|e| CliError::parse(path, d.line, e.to_string()))?;
        let ids = d.tokens.iter().map(|t| vocab.id(t)).collect();
        let mut doc = Document::new(ids, d.label.clone(), vocab.pad_id());
        doc.gold_spans = d.gold_spans.clone();
        doc.word_labels = d.word_labels.as_ref().map(|w| {
            let mut w = w.clone();
            w.resize(doc.len(), pad_word_label);
            w
        });
        out.push(doc);
    }
    Ok(Dataset::new(task, out)?)
}

pub fn load_dataset(path: &Path, task: Task, vocab: &Vocab, pad_word_label: u32) -> Result<Dataset> {
    let kind = if task.is_classification() {
        TaskKind::Classification
    } else {
        TaskKind::Regression
    };
    to_dataset(&read_corpus(path, kind)?, path, task, vocab, pad_word_label)
}

/// Writes `data` in the format [`parse_corpus`] reads. Padding is dropped.
pub fn write_corpus(path: &Path, data: &Dataset, vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    for d in &data.docs {
        match &d.label {
            Label::Class(c) => write!(out, "{c}"),
            Label::Targets(t) => write!(out, "{}", t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")),
        }
        .expect("writing to a string");
        let len = d.tokens.iter().rposition(|&t| t != vocab.pad_id()).map_or(0, |k| k + 1);
        out.push('\t');
        out.push_str(&vocab.decode(&d.tokens[..len]).join(" "));
        if !d.gold_spans.is_empty() || d.word_labels.is_some() {
            let spans: Vec<String> = d
                .gold_spans
                .iter()
                .map(|g| format!("{}:{}-{}", g.aspect, g.start, g.stop))
                .collect();
            out.push('\t');
            out.push_str(if spans.is_empty() { "-" } else { "" });
            out.push_str(&spans.join(";"));
        }
        if let Some(w) = &d.word_labels {
            out.push('\t');
            out.push_str(&w[..len].iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "));
        }
        out.push('\n');
    }
    write_file(path, &out)
}
