//! Plain-text word vectors: one `token v1 ... vd` line per word.

use std::fmt::Write as _;
use std::path::Path;

use educe_core::text::{EmbeddingTable, Vocab};

use crate::error::{read_to_string, write_file, CliError, Result};

/// Parses vectors for the words of `vocab`. Words missing from the text
/// (including unk) keep a seeded uniform(-0.1, 0.1) row and pad stays zero.
/// Words outside the vocabulary are skipped. A leading `count dim` header
/// line, as written by word2vec and fastText, is ignored.
pub fn parse_embeddings(text: &str, path: &Path, vocab: &Vocab, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab, dim, seed);
    let mut row = Vec::with_capacity(dim);
    for (i, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        if rest.len() != dim {
            return Err(CliError::parse(
                path,
                i + 1,
                format!("expected {dim} values after {token:?}, found {}", rest.len()),
            ));
        }
        if !vocab.contains(token) || vocab.id(token) == vocab.pad_id() {
            continue;
        }
        row.clear();
        for v in rest {
            let x: f64 = v
                .parse()
                .map_err(|_| CliError::parse(path, i + 1, format!("{v:?} is not a number")))?;
            if !x.is_finite() {
                return Err(CliError::parse(path, i + 1, format!("{v:?} is not finite")));
            }
            row.push(x);
        }
        table.set_row(vocab.id(token), &row)?;
    }
    Ok(table)
}

pub fn load_embeddings(path: &Path, vocab: &Vocab, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    parse_embeddings(&read_to_string(path)?, path, vocab, dim, seed)
}

/// Writes every row except pad; values use the shortest exact decimal form,
/// so reading the file back gives the same bits.
pub fn write_embeddings(path: &Path, vocab: &Vocab, table: &EmbeddingTable) -> Result<()> {
    let mut out = String::new();
    for (id, tok) in vocab.tokens().iter().enumerate() {
        if id as u32 == vocab.pad_id() {
            continue;
        }
        out.push_str(tok);
        for x in table.row(id as u32) {
            write!(out, " {x}").expect("writing to a string");
        }
        out.push('\n');
    }
    write_file(path, &out)
}
