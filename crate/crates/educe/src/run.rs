//! Data preparation and the train / eval / explain pipelines behind the CLI.

use std::path::{Path, PathBuf};
use std::time::Instant;

use educe_core::evaluation::{self, explain, metrics_report, Explanation, MetricsReport};
use educe_core::text::{
    gen_planted, planted_embeddings, random_split, stratified_split, Dataset, EmbeddingTable, PlantedSpec, Task, Vocab,
};
use educe_core::training::{run_training, Model, TrainConfig, TrainOutcome};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::config::{DataSource, RunConfig};
use crate::corpus::{build_vocab, infer_task, load_dataset, read_corpus, to_dataset};
use crate::embeddings::load_embeddings;
use crate::error::{write_file, CliError, Result};
use crate::report;

/// Everything a run reads, in memory.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub task: Task,
    pub vocab: Vocab,
    pub emb: EmbeddingTable,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
}

impl Prepared {
    pub fn split(&self, name: &str) -> Result<&Dataset> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => self
                .test
                .as_ref()
                .ok_or_else(|| CliError::Invalid("no test set: set `test` or `test_fraction`".into())),
            other => Err(CliError::Invalid(format!(
                "unknown split {other:?} (train, val or test)"
            ))),
        }
    }
}

/// Carves validation and test parts out of `all` when no file provides them.
fn carve(
    cfg: &RunConfig,
    all: Dataset,
    need_val: bool,
    need_test: bool,
) -> Result<(Dataset, Option<Dataset>, Option<Dataset>)> {
    let mut fractions = vec![1.0];
    if need_val {
        fractions.push(cfg.val_fraction);
    }
    if need_test {
        fractions.push(cfg.test_fraction);
    }
    fractions[0] = 1.0 - fractions[1..].iter().sum::<f64>();
    if fractions.len() == 1 {
        return Ok((all, None, None));
    }
    let mut parts = if all.task.is_classification() {
        stratified_split(&all, &fractions, cfg.split_seed)?
    } else {
        random_split(&all, &fractions, cfg.split_seed)?
    }
    .into_iter();
    let train = parts.next().expect("first part");
    let val = if need_val { parts.next() } else { None };
    let test = if need_test { parts.next() } else { None };
    Ok((train, val, test))
}

/// Reads or generates the data of `cfg`. A given `vocab` (from a checkpoint)
/// replaces the one built from the training corpus.
pub fn prepare(cfg: &RunConfig, vocab: Option<&Vocab>) -> Result<Prepared> {
    let d = cfg.train.embed_dim;
    let pad_word = cfg.neutral_label.unwrap_or(0);
    let (task, vocab, emb, all) = match cfg.source {
        DataSource::Planted => {
            let p = cfg.planted;
            let corpus = gen_planted(&PlantedSpec::pairs(p.families, p.docs_per_class, p.doc_len, p.seed))?;
            if vocab.is_some_and(|v| *v != corpus.vocab) {
                return Err(CliError::Invalid(
                    "checkpoint vocabulary differs from the planted corpus".into(),
                ));
            }
            let emb = planted_embeddings(&corpus, d, p.seed);
            (corpus.dataset.task, corpus.vocab, emb, corpus.dataset)
        }
        DataSource::Files => {
            let path = cfg.train_path.as_deref().expect("validated");
            let raw = read_corpus(path, cfg.task_kind)?;
            if raw.is_empty() {
                return Err(CliError::Invalid(format!("{} holds no documents", path.display())));
            }
            let task = match cfg.outputs {
                Some(n) => cfg.task_with(n),
                None => infer_task(&raw, cfg.task_kind).expect("non-empty corpus"),
            };
            let vocab = match vocab {
                Some(v) => v.clone(),
                None => build_vocab(&raw, cfg.min_count)?,
            };
            let emb = match &cfg.embeddings {
                Some(p) => load_embeddings(p, &vocab, d, cfg.embedding_seed)?,
                None => EmbeddingTable::random(&vocab, d, cfg.embedding_seed),
            };
            let all = to_dataset(&raw, path, task, &vocab, pad_word)?;
            (task, vocab, emb, all)
        }
    };
    let val_file = cfg.val_path.as_deref().filter(|_| cfg.source == DataSource::Files);
    let test_file = cfg.test_path.as_deref().filter(|_| cfg.source == DataSource::Files);
    let need_val = val_file.is_none();
    let need_test = test_file.is_none() && cfg.test_fraction > 0.0;
    let (train, val, test) = carve(cfg, all, need_val, need_test)?;
    let val = match val_file {
        Some(p) => load_dataset(p, task, &vocab, pad_word)?,
        None => val.expect("carved"),
    };
    let test = match test_file {
        Some(p) => Some(load_dataset(p, task, &vocab, pad_word)?),
        None => test,
    };
    Ok(Prepared {
        task,
        vocab,
        emb,
        train,
        val,
        test,
    })
}

/// Hyperparameters with the task settled by the data.
pub fn effective_config(cfg: &RunConfig, task: Task) -> TrainConfig {
    TrainConfig {
        task,
        ..cfg.train.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub seed: u64,
    pub eval_seed: u64,
    pub split_seed: u64,
    pub embedding_seed: u64,
    pub planted_seed: u64,
    pub posteriori_seed: u64,
}

/// Record of one training run; its `config` text alone re-creates the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: String,
    pub seeds: Seeds,
    /// File names relative to the output directory.
    pub checkpoint: String,
    pub metric_files: Vec<String>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RESOLVED_FILE: &str = "config.resolved";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))
}

pub struct TrainResult {
    pub outcome: TrainOutcome,
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
}

/// Trains per `cfg` and writes the checkpoint, logs, resolved config and
/// manifest into `cfg.out_dir`.
pub fn train_run(cfg: &RunConfig) -> Result<TrainResult> {
    let data = prepare(cfg, None)?;
    let tc = effective_config(cfg, data.task);
    let start = Instant::now();
    let timing = cfg.log_timing;
    let mut clock = || if timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let outcome = run_training(&tc, &data.train, &data.val, &data.emb, data.vocab.pad_id(), &mut clock)?;

    let out = &cfg.out_dir;
    create_dir(out)?;
    let ck = Checkpoint {
        kind: tc.kind,
        model: outcome.best.clone(),
        vocab: data.vocab.clone(),
    };
    write_checkpoint(&out.join(CHECKPOINT_FILE), &ck)?;
    report::write_training_log(&out.join("train_log.csv"), &outcome.log.epochs)?;
    report::write_batch_log(&out.join("batch_log.csv"), &outcome.log.batches)?;
    let resolved = cfg.render();
    write_file(&out.join(RESOLVED_FILE), &resolved)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: resolved,
        seeds: Seeds {
            seed: tc.seed,
            eval_seed: tc.eval_seed,
            split_seed: cfg.split_seed,
            embedding_seed: cfg.embedding_seed,
            planted_seed: cfg.planted.seed,
            posteriori_seed: cfg.posteriori.split_seed,
        },
        checkpoint: CHECKPOINT_FILE.into(),
        metric_files: vec!["train_log.csv".into(), "batch_log.csv".into()],
        best_epoch: outcome.best_epoch,
        best_score: outcome.best_score,
        epochs_run: outcome.log.epochs.len(),
        stopped_early: outcome.stopped_early,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("plain data serializes");
    write_file(&out.join(MANIFEST_FILE), &(json + "\n"))?;
    Ok(TrainResult {
        outcome,
        manifest,
        out_dir: out.clone(),
    })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = crate::error::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.line(), e.to_string()))
}

/// The dataset an eval or explain command runs on: a file read with the
/// checkpoint's vocabulary, or a named split of the configured data.
pub fn select_data(
    cfg: &RunConfig,
    ck: &Checkpoint,
    split: Option<&str>,
    file: Option<&Path>,
) -> Result<(Dataset, EmbeddingTable)> {
    let data = prepare(cfg, Some(&ck.vocab))?;
    if data.task != ck.model.task() {
        return Err(CliError::Invalid(format!(
            "checkpoint task {:?} differs from the configured data {:?}",
            ck.model.task(),
            data.task
        )));
    }
    let set = match file {
        Some(p) => load_dataset(p, data.task, &ck.vocab, cfg.neutral_label.unwrap_or(0))?,
        None => {
            let name = split.unwrap_or(if data.test.is_some() { "test" } else { "val" });
            data.split(name)?.clone()
        }
    };
    Ok((set, data.emb))
}

pub enum Evaluation {
    Full(MetricsReport),
    OutputOnly(evaluation::OutputMetric),
}

/// Computes the metrics of `ck` on `data` and writes `metrics.csv` (plus the
/// precision and repartition tables when the data supports them) to `out`.
pub fn eval_run(
    cfg: &RunConfig,
    ck: &Checkpoint,
    data: &Dataset,
    emb: &EmbeddingTable,
    out: &Path,
) -> Result<Evaluation> {
    create_dir(out)?;
    let seed = cfg.train.eval_seed;
    match &ck.model {
        Model::Educe(p) => {
            let rep = metrics_report(p, data, emb, seed, &cfg.posteriori, cfg.neutral_label)?;
            report::write_metrics(&out.join("metrics.csv"), &report::metric_rows(&rep))?;
            if let Some(r) = &rep.rationale {
                report::write_precision(&out.join("precision.csv"), r)?;
            }
            if let Some(r) = &rep.repartition {
                report::write_repartition(&out.join("repartition.csv"), r)?;
            }
            Ok(Evaluation::Full(rep))
        }
        m @ Model::FullText(_) => {
            let metric = evaluation::evaluate_output(m, data, emb, seed)?;
            let row = match metric {
                evaluation::OutputMetric::Accuracy(a) => ("output_accuracy".to_string(), a.to_string()),
                evaluation::OutputMetric::Mse(e) => ("output_mse".to_string(), e.to_string()),
            };
            report::write_metrics(&out.join("metrics.csv"), &[row])?;
            Ok(Evaluation::OutputOnly(metric))
        }
    }
}

pub fn explain_run(
    cfg: &RunConfig,
    ck: &Checkpoint,
    data: &Dataset,
    emb: &EmbeddingTable,
    argmax: bool,
    limit: Option<usize>,
) -> Result<Vec<Explanation>> {
    let Model::Educe(p) = &ck.model else {
        return Err(CliError::Invalid(
            "the full-text baseline has no excerpts to explain".into(),
        ));
    };
    let n = limit.unwrap_or(data.len()).min(data.len());
    (0..n)
        .map(|i| {
            let d = &data.docs[i];
            Ok(explain(
                p,
                i,
                &d.tokens,
                &d.label,
                emb,
                &ck.vocab,
                cfg.train.eval_seed,
                argmax,
            )?)
        })
        .collect()
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(path)
}
