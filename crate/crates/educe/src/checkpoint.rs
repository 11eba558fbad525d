//! Line-oriented checkpoint: a header naming the model kind and
//! architecture, the vocabulary, then one section per parameter tensor with
//! its shape. Values are written in shortest round-trip decimal form, so a
//! read gives back the exact bits.

use std::fmt::Write as _;
use std::path::Path;

use educe_core::model::{EduceParams, ModelConfig, ParamStore, SpanWindow};
use educe_core::text::{Task, Vocab};
use educe_core::training::{FullTextConfig, FullTextParams, Model, ModelKind};
use educe_core::Tensor;

use crate::error::{read_to_string, write_file, CliError, Result};

const MAGIC: &str = "educe-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub model: Model,
    pub vocab: Vocab,
}

fn task_line(task: Task) -> String {
    match task {
        Task::Classification { classes } => format!("task classification {classes}"),
        Task::Regression { targets } => format!("task regression {targets}"),
    }
}

pub fn checkpoint_to_string(ck: &Checkpoint) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "{MAGIC}").unwrap();
    writeln!(w, "kind {}", ck.kind).unwrap();
    match &ck.model {
        Model::Educe(p) => {
            let c = &p.config;
            writeln!(w, "{}", task_line(c.task)).unwrap();
            writeln!(
                w,
                "embed_dim {}\nhidden {}\nconcepts {}",
                c.embed_dim, c.hidden, c.concepts
            )
            .unwrap();
            writeln!(w, "span_offsets {} {}\npad_id {}", c.window.min, c.window.max, c.pad_id).unwrap();
        }
        Model::FullText(p) => {
            let c = &p.config;
            writeln!(w, "{}", task_line(c.task)).unwrap();
            writeln!(w, "embed_dim {}\nhidden {}", c.embed_dim, c.hidden).unwrap();
        }
    }
    writeln!(w, "vocab {}", ck.vocab.len()).unwrap();
    for t in ck.vocab.tokens() {
        writeln!(w, "{t}").unwrap();
    }
    for (name, t) in ck.model.store().iter() {
        let shape: Vec<String> = t.shape().iter().map(|s| s.to_string()).collect();
        writeln!(w, "param {name} {}", shape.join(" ")).unwrap();
        let cols = *t.shape().last().unwrap_or(&1);
        for row in t.data().chunks(cols.max(1)) {
            let vals: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{}", vals.join(" ")).unwrap();
        }
    }
    writeln!(w, "end").unwrap();
    out
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => Err(CliError::parse(
                self.path,
                self.last + 1,
                "unexpected end of checkpoint",
            )),
        }
    }

    fn err(&self, msg: impl Into<String>) -> CliError {
        CliError::parse(self.path, self.last, msg)
    }

    /// Next line as `key v1 v2 ...`.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut f = line.split_whitespace();
        if f.next() != Some(key) {
            return Err(self.err(format!("expected {key:?}, found {line:?}")));
        }
        Ok(f.collect())
    }

    fn number(&mut self, key: &str) -> Result<usize> {
        let v = self.keyed(key)?;
        match v.as_slice() {
            [n] => n.parse().map_err(|_| self.err(format!("{key} {n:?} is not a count"))),
            _ => Err(self.err(format!("{key} takes one value"))),
        }
    }
}

pub fn parse_checkpoint(text: &str, path: &Path) -> Result<Checkpoint> {
    let mut lines = Lines {
        path,
        inner: text.lines().enumerate(),
        last: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not an educe checkpoint (bad first line)"));
    }
    let kind: ModelKind = match lines.keyed("kind")?.as_slice() {
        [k] => k.parse().map_err(|e: educe_core::Error| lines.err(e.to_string()))?,
        _ => return Err(lines.err("kind takes one value")),
    };
    let task = match lines.keyed("task")?.as_slice() {
        ["classification", n] => Task::Classification {
            classes: n.parse().map_err(|_| lines.err("bad class count"))?,
        },
        ["regression", n] => Task::Regression {
            targets: n.parse().map_err(|_| lines.err("bad target count"))?,
        },
        _ => return Err(lines.err("task is `classification N` or `regression T`")),
    };
    let embed_dim = lines.number("embed_dim")?;
    let hidden = lines.number("hidden")?;
    let educe_config = if kind == ModelKind::FullText {
        None
    } else {
        let concepts = lines.number("concepts")?;
        let window = match lines.keyed("span_offsets")?.as_slice() {
            [a, b] => SpanWindow {
                min: a.parse().map_err(|_| lines.err("bad span offset"))?,
                max: b.parse().map_err(|_| lines.err("bad span offset"))?,
            },
            _ => return Err(lines.err("span_offsets takes two values")),
        };
        let pad_id = lines.number("pad_id")? as u32;
        Some(ModelConfig {
            embed_dim,
            hidden,
            concepts,
            task,
            window,
            pad_id,
        })
    };
    let n = lines.number("vocab")?;
    let mut tokens = Vec::with_capacity(n);
    for _ in 0..n {
        tokens.push(lines.next()?.to_string());
    }
    // The specials come first and are re-added by the constructor.
    let vocab = Vocab::from_tokens(tokens.iter().skip(2));
    if vocab.tokens() != tokens.as_slice() {
        return Err(lines.err("vocabulary section is not a valid vocabulary"));
    }

    let mut store = ParamStore::new();
    loop {
        let line = lines.next()?;
        if line == "end" {
            break;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 3 || f[0] != "param" {
            return Err(lines.err(format!("expected a param header or `end`, found {line:?}")));
        }
        let shape: Vec<usize> = f[2..]
            .iter()
            .map(|s| s.parse().map_err(|_| lines.err(format!("bad dimension {s:?}"))))
            .collect::<Result<_>>()?;
        let (rows, cols) = match shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(lines.err("tensors have rank 1 or 2")),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines.next()?;
            let before = data.len();
            for v in row.split_whitespace() {
                data.push(
                    v.parse::<f64>()
                        .map_err(|_| lines.err(format!("{v:?} is not a number")))?,
                );
            }
            if data.len() - before != cols {
                return Err(lines.err(format!("expected {cols} values in {}", f[1])));
            }
        }
        let t = if shape.len() == 1 {
            Tensor::vector(data)
        } else {
            Tensor::matrix(rows, cols, data)?
        };
        store.push(f[1], t);
    }

    let model = match educe_config {
        Some(cfg) => Model::Educe(EduceParams::from_store(cfg, store)?),
        None => Model::FullText(FullTextParams::from_store(
            FullTextConfig {
                embed_dim,
                hidden,
                task,
            },
            store,
        )?),
    };
    Ok(Checkpoint { kind, model, vocab })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, &checkpoint_to_string(ck))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&read_to_string(path)?, path)
}
