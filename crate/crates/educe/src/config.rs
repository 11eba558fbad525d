//! Flat `key = value` run configuration. `#` starts a comment, strings are
//! unquoted, and unknown keys are errors. Relative paths are resolved
//! against the directory of the file that names them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use educe_core::evaluation::PosterioriConfig;
use educe_core::text::Task;
use educe_core::training::TrainConfig;

use crate::corpus::TaskKind;
use crate::error::{read_to_string, CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    Files,
    /// The synthetic planted-concept corpus, generated in process.
    Planted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlantedParams {
    pub families: usize,
    pub docs_per_class: usize,
    pub doc_len: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Hyperparameters. Its `task` is provisional until the data is read
    /// when `classes` or `targets` is left to inference.
    pub train: TrainConfig,
    pub task_kind: TaskKind,
    /// Class or target count; `None` infers it from the training corpus.
    pub outputs: Option<usize>,
    pub source: DataSource,
    pub planted: PlantedParams,
    pub train_path: Option<PathBuf>,
    pub val_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub embedding_seed: u64,
    pub min_count: usize,
    /// Shares carved out of the training corpus when no validation or test
    /// file is given.
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub out_dir: PathBuf,
    pub neutral_label: Option<u32>,
    pub posteriori: PosterioriConfig,
    /// Record wall-clock seconds in the training log. Off makes logs
    /// byte-identical across runs.
    pub log_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::new(Task::Classification { classes: 1 }, 300),
            task_kind: TaskKind::Classification,
            outputs: None,
            source: DataSource::Files,
            planted: PlantedParams {
                families: 4,
                docs_per_class: 500,
                doc_len: 20,
                seed: 0,
            },
            train_path: None,
            val_path: None,
            test_path: None,
            embeddings: None,
            embedding_seed: 0,
            min_count: 1,
            val_fraction: 0.2,
            test_fraction: 0.0,
            split_seed: 0,
            out_dir: PathBuf::from("runs"),
            neutral_label: None,
            posteriori: PosterioriConfig::default(),
            log_timing: true,
        }
    }
}

/// Every accepted key, in the order the resolved file lists them.
pub const KEYS: &[&str] = &[
    "kind",
    "task",
    "classes",
    "targets",
    "concepts",
    "embed_dim",
    "hidden",
    "lambda0",
    "lambda_growth",
    "r",
    "lr",
    "batch_size",
    "max_epochs",
    "seed",
    "clip",
    "entropy_weight",
    "lambda_l1",
    "patience",
    "min_offset",
    "max_offset",
    "beta1",
    "beta2",
    "eval_seed",
    "source",
    "planted_families",
    "planted_docs_per_class",
    "planted_doc_len",
    "planted_seed",
    "train",
    "val",
    "test",
    "embeddings",
    "embedding_seed",
    "min_count",
    "val_fraction",
    "test_fraction",
    "split_seed",
    "out_dir",
    "neutral_label",
    "posteriori_seed",
    "posteriori_epochs",
    "posteriori_lr",
    "posteriori_batch_size",
    "posteriori_train_fraction",
    "log_timing",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("{key}: {v:?} is not a valid {}", std::any::type_name::<T>()))
}

fn boolean(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: {v:?} is not a boolean")),
    }
}

fn optional_path(base: &Path, v: &str) -> Option<PathBuf> {
    match v {
        "" | "none" => None,
        p => Some(base.join(p)),
    }
}

impl RunConfig {
    /// Applies one key. `base` resolves relative paths.
    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "kind" => t.kind = v.parse().map_err(|e: educe_core::Error| e.to_string())?,
            "task" => {
                self.task_kind = match v {
                    "classification" => TaskKind::Classification,
                    "regression" => TaskKind::Regression,
                    _ => return Err(format!("task: {v:?} is neither classification nor regression")),
                }
            }
            "classes" | "targets" => {
                self.outputs = if v == "auto" { None } else { Some(num(key, v)?) };
            }
            "concepts" => t.concepts = num(key, v)?,
            "embed_dim" => t.embed_dim = num(key, v)?,
            "hidden" => t.hidden = num(key, v)?,
            "lambda0" => t.lambda0 = num(key, v)?,
            "lambda_growth" => t.lambda_growth = num(key, v)?,
            "r" => t.r = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "max_epochs" => t.max_epochs = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "clip" => t.clip = num(key, v)?,
            "entropy_weight" => t.entropy_weight = num(key, v)?,
            "lambda_l1" => t.lambda_l1 = num(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "min_offset" => t.window.min = num(key, v)?,
            "max_offset" => t.window.max = num(key, v)?,
            "beta1" => t.beta1 = num(key, v)?,
            "beta2" => t.beta2 = num(key, v)?,
            "eval_seed" => t.eval_seed = num(key, v)?,
            "source" => {
                self.source = match v {
                    "files" => DataSource::Files,
                    "planted" => DataSource::Planted,
                    _ => return Err(format!("source: {v:?} is neither files nor planted")),
                }
            }
            "planted_families" => self.planted.families = num(key, v)?,
            "planted_docs_per_class" => self.planted.docs_per_class = num(key, v)?,
            "planted_doc_len" => self.planted.doc_len = num(key, v)?,
            "planted_seed" => self.planted.seed = num(key, v)?,
            "train" => self.train_path = optional_path(base, v),
            "val" => self.val_path = optional_path(base, v),
            "test" => self.test_path = optional_path(base, v),
            "embeddings" => self.embeddings = optional_path(base, v),
            "embedding_seed" => self.embedding_seed = num(key, v)?,
            "min_count" => self.min_count = num(key, v)?,
            "val_fraction" => self.val_fraction = num(key, v)?,
            "test_fraction" => self.test_fraction = num(key, v)?,
            "split_seed" => self.split_seed = num(key, v)?,
            "out_dir" => self.out_dir = base.join(v),
            "neutral_label" => {
                self.neutral_label = if v == "none" { None } else { Some(num(key, v)?) };
            }
            "posteriori_seed" => self.posteriori.split_seed = num(key, v)?,
            "posteriori_epochs" => self.posteriori.epochs = num(key, v)?,
            "posteriori_lr" => self.posteriori.lr = num(key, v)?,
            "posteriori_batch_size" => self.posteriori.batch_size = num(key, v)?,
            "posteriori_train_fraction" => self.posteriori.train_fraction = num(key, v)?,
            "log_timing" => self.log_timing = boolean(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Range checks that do not need the data.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut probe = self.train.clone();
        probe.task = self.task_with(self.outputs.unwrap_or(1));
        probe.validate().map_err(|e| e.to_string())?;
        let f = |x: f64| (0.0..1.0).contains(&x);
        if !f(self.val_fraction) || !f(self.test_fraction) || self.val_fraction + self.test_fraction >= 1.0 {
            return Err(format!(
                "val_fraction {} and test_fraction {} must be in [0, 1) and sum below 1",
                self.val_fraction, self.test_fraction
            ));
        }
        if !(self.posteriori.train_fraction > 0.0 && self.posteriori.train_fraction < 1.0) {
            return Err("posteriori_train_fraction must lie in (0, 1)".into());
        }
        if self.posteriori.batch_size == 0 || !(self.posteriori.lr > 0.0) {
            return Err("posteriori_batch_size and posteriori_lr must be positive".into());
        }
        if self.outputs == Some(0) {
            return Err("classes/targets must be at least 1".into());
        }
        match self.source {
            DataSource::Files => {
                let Some(train) = &self.train_path else {
                    return Err("missing required key `train` (or set source = planted)".into());
                };
                for (key, p) in [
                    ("train", Some(train)),
                    ("val", self.val_path.as_ref()),
                    ("test", self.test_path.as_ref()),
                    ("embeddings", self.embeddings.as_ref()),
                ] {
                    if let Some(p) = p {
                        if !p.is_file() {
                            return Err(format!("{key}: {} does not exist", p.display()));
                        }
                    }
                }
            }
            DataSource::Planted => {
                if self.planted.families < 2 || self.planted.docs_per_class == 0 {
                    return Err("planted corpus needs at least 2 families and 1 document per class".into());
                }
                if self.task_kind != TaskKind::Classification {
                    return Err("the planted corpus is a classification task".into());
                }
            }
        }
        Ok(())
    }

    pub fn task_with(&self, outputs: usize) -> Task {
        match self.task_kind {
            TaskKind::Classification => Task::Classification { classes: outputs },
            TaskKind::Regression => Task::Regression { targets: outputs },
        }
    }

    /// Every key with its effective value. Parsing this text gives back the
    /// same configuration.
    pub fn render(&self) -> String {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let outputs = self.outputs.map_or("auto".to_string(), |n| n.to_string());
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("writing to a string");
        kv("kind", t.kind.to_string());
        kv(
            "task",
            match self.task_kind {
                TaskKind::Classification => "classification",
                TaskKind::Regression => "regression",
            }
            .into(),
        );
        kv(
            if self.task_kind == TaskKind::Classification {
                "classes"
            } else {
                "targets"
            },
            outputs,
        );
        kv("concepts", t.concepts.to_string());
        kv("embed_dim", t.embed_dim.to_string());
        kv("hidden", t.hidden.to_string());
        kv("lambda0", format!("{:?}", t.lambda0));
        kv("lambda_growth", format!("{:?}", t.lambda_growth));
        kv("r", format!("{:?}", t.r));
        kv("lr", format!("{:?}", t.lr));
        kv("batch_size", t.batch_size.to_string());
        kv("max_epochs", t.max_epochs.to_string());
        kv("seed", t.seed.to_string());
        kv("clip", format!("{:?}", t.clip));
        kv("entropy_weight", format!("{:?}", t.entropy_weight));
        kv("lambda_l1", format!("{:?}", t.lambda_l1));
        kv("patience", t.patience.to_string());
        kv("min_offset", t.window.min.to_string());
        kv("max_offset", t.window.max.to_string());
        kv("beta1", format!("{:?}", t.beta1));
        kv("beta2", format!("{:?}", t.beta2));
        kv("eval_seed", t.eval_seed.to_string());
        kv(
            "source",
            match self.source {
                DataSource::Files => "files",
                DataSource::Planted => "planted",
            }
            .into(),
        );
        kv("planted_families", self.planted.families.to_string());
        kv("planted_docs_per_class", self.planted.docs_per_class.to_string());
        kv("planted_doc_len", self.planted.doc_len.to_string());
        kv("planted_seed", self.planted.seed.to_string());
        kv("train", path(&self.train_path));
        kv("val", path(&self.val_path));
        kv("test", path(&self.test_path));
        kv("embeddings", path(&self.embeddings));
        kv("embedding_seed", self.embedding_seed.to_string());
        kv("min_count", self.min_count.to_string());
        kv("val_fraction", format!("{:?}", self.val_fraction));
        kv("test_fraction", format!("{:?}", self.test_fraction));
        kv("split_seed", self.split_seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv(
            "neutral_label",
            self.neutral_label.map_or("none".into(), |n| n.to_string()),
        );
        kv("posteriori_seed", self.posteriori.split_seed.to_string());
        kv("posteriori_epochs", self.posteriori.epochs.to_string());
        kv("posteriori_lr", format!("{:?}", self.posteriori.lr));
        kv("posteriori_batch_size", self.posteriori.batch_size.to_string());
        kv(
            "posteriori_train_fraction",
            format!("{:?}", self.posteriori.train_fraction),
        );
        kv("log_timing", self.log_timing.to_string());
        out
    }
}

/// Parses configuration text. `base` resolves relative paths and `origin`
/// names the source in errors. Each override is a `key=value` string
/// applied after the file.
pub fn parse_config_str(text: &str, origin: &Path, base: &Path, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<(String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            return Err(CliError::parse(
                origin,
                line,
                format!("expected `key = value`, found {content:?}"),
            ));
        };
        let (k, v) = (k.trim(), v.trim());
        if let Some((_, first)) = seen.iter().find(|(s, _)| s == k) {
            return Err(CliError::parse(
                origin,
                line,
                format!("key {k:?} already set on line {first}"),
            ));
        }
        seen.push((k.to_string(), line));
        cfg.set(k, v, base).map_err(|m| CliError::parse(origin, line, m))?;
    }
    let cwd = std::env::current_dir().unwrap_or_default();
    for (i, o) in overrides.iter().enumerate() {
        let Some((k, v)) = o.split_once('=') else {
            return Err(CliError::parse(
                Path::new("--set"),
                i + 1,
                format!("expected key=value, found {o:?}"),
            ));
        };
        cfg.set(k.trim(), v.trim(), &cwd)
            .map_err(|m| CliError::parse(Path::new("--set"), i + 1, m))?;
    }
    cfg.validate().map_err(CliError::Invalid)?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = read_to_string(path)?;
    let base = std::path::absolute(path)
        .ok()
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    parse_config_str(&text, path, &base, overrides)
}
