//! Command-line surface: `train`, `eval`, `explain`, `oracle` and `synth`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use educe_core::evaluation::{check_unbiasedness, TinyInstance};
use educe_core::text::{gen_planted, planted_embeddings, PlantedSpec};

use crate::config::{parse_config, parse_config_str, RunConfig};
use crate::corpus::write_corpus;
use crate::embeddings::write_embeddings;
use crate::error::{CliError, Result};
use crate::report;
use crate::run::{self, Evaluation};

#[derive(Debug, Parser)]
#[command(
    name = "educe",
    version,
    about = "Concept-bottleneck text classifier with sampled excerpts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Source {
    /// Run configuration; defaults to the `config.resolved` next to the
    /// checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override applied after the file (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Named part of the configured data: train, val or test.
    #[arg(long, conflicts_with = "data")]
    split: Option<String>,
    /// Corpus file to use instead of the configured data.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoint, logs and manifest.
    Train {
        #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
        config: Option<PathBuf>,
        /// Re-run the configuration recorded in a manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute metrics of a checkpoint.
    Eval {
        #[command(flatten)]
        source: Source,
        /// Output directory for the CSV files (defaults to `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump one JSON line per document with the extracted excerpts.
    Explain {
        #[command(flatten)]
        source: Source,
        /// Output file (defaults to `explanations.jsonl` in `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the most likely spans and `p >= 0.5` instead of sampling.
        #[arg(long)]
        argmax: bool,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compare the gradient estimator with exact enumeration on tiny instances.
    Oracle {
        #[arg(long, default_value_t = 100_000)]
        traces: usize,
        /// Seeds of the random instances.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Seeds of the saturated instances, where alpha is also checked.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        saturated_seeds: Vec<u64>,
        /// Seed of the Monte-Carlo streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a planted-concept corpus in the TSV format.
    Synth {
        #[arg(long, default_value_t = 4)]
        families: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        docs_per_class: usize,
        #[arg(long, default_value_t = 20)]
        doc_len: usize,
        /// Also write matching word vectors.
        #[arg(long)]
        emb_out: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        dim: usize,
    },
}

/// Sizes the global rayon pool from `EDUCE_THREADS` (default: all cores).
/// Only the first call in a process has an effect.
pub fn init_threads() {
    let n = std::env::var("EDUCE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n.filter(|&n| n > 0) {
        b = b.num_threads(n);
    }
    let _ = b.build_global();
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn source_config(src: &Source) -> Result<RunConfig> {
    let path = match &src.config {
        Some(p) => p.clone(),
        None => src
            .checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(run::RESOLVED_FILE),
    };
    parse_config(&path, &src.set)
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train {
            config,
            manifest,
            set,
            out,
        } => {
            let mut cfg = match (config, manifest) {
                (Some(c), _) => parse_config(&c, &set)?,
                (None, Some(m)) => {
                    let man = run::read_manifest(&m)?;
                    parse_config_str(&man.config, &m, Path::new("/"), &set)?
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            if let Some(o) = out {
                cfg.out_dir = std::path::absolute(&o).map_err(|e| CliError::output(&o, e))?;
            }
            let res = run::train_run(&cfg)?;
            println!(
                "trained {} for {} epochs; best epoch {} with validation score {:.4}; wrote {}",
                cfg.train.kind,
                res.manifest.epochs_run,
                res.manifest.best_epoch,
                res.manifest.best_score,
                res.out_dir.display()
            );
            Ok(0)
        }
        Command::Eval { source, out } => {
            let ck = run::load_checkpoint(&source.checkpoint)?;
            let cfg = source_config(&source)?;
            let (data, emb) = run::select_data(&cfg, &ck, source.split.as_deref(), source.data.as_deref())?;
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            match run::eval_run(&cfg, &ck, &data, &emb, &out)? {
                Evaluation::Full(rep) => {
                    for (k, v) in report::metric_rows(&rep) {
                        println!("{k},{v}");
                    }
                    if let Err(e) = &rep.posteriori {
                        eprintln!("warning: a-posteriori concept accuracy unavailable: {e}");
                    }
                    if rep.rationale.as_ref().is_some_and(|r| r.nothing_present) {
                        eprintln!("warning: no concept was present in any document");
                    }
                }
                Evaluation::OutputOnly(m) => println!("output,{}", m.value()),
            }
            Ok(0)
        }
        Command::Explain {
            source,
            out,
            argmax,
            limit,
        } => {
            let ck = run::load_checkpoint(&source.checkpoint)?;
            let cfg = source_config(&source)?;
            let (data, emb) = run::select_data(&cfg, &ck, source.split.as_deref(), source.data.as_deref())?;
            let xs = run::explain_run(&cfg, &ck, &data, &emb, argmax, limit)?;
            let path = match out {
                Some(p) => p,
                None => {
                    run::create_dir(&cfg.out_dir)?;
                    cfg.out_dir.join("explanations.jsonl")
                }
            };
            report::write_explanations(&path, &xs)?;
            println!("wrote {} explanations to {}", xs.len(), path.display());
            Ok(0)
        }
        Command::Oracle {
            traces,
            seeds,
            saturated_seeds,
            seed,
        } => {
            let mut instances = Vec::new();
            for &s in &seeds {
                instances.push((format!("random-{s}"), TinyInstance::random(s)?));
            }
            for &s in &saturated_seeds {
                instances.push((format!("saturated-{s}"), TinyInstance::saturated(s)?));
            }
            println!(
                "{:<14} {:<12} {:>6} {:>8} {:>8} {:>11}  result",
                "instance", "check", "coords", "within", "max_z", "max_dev"
            );
            let mut all = true;
            for (name, inst) in &instances {
                let rep = check_unbiasedness(inst, traces, seed)?;
                for b in &rep.blocks {
                    println!(
                        "{name:<14} {:<12} {:>6} {:>8} {:>8.2} {:>11.3e}  {}",
                        b.block,
                        b.coordinates,
                        b.within,
                        b.max_z,
                        b.max_abs_dev,
                        if b.pass { "PASS" } else { "FAIL" }
                    );
                }
                let z = (rep.mc_loss - rep.exact_loss).abs() / rep.mc_loss_se;
                println!(
                    "{name:<14} {:<12} {:>6} {:>8} {:>8.2} {:>11.3e}  {}",
                    "loss",
                    1,
                    rep.loss_pass as usize,
                    z,
                    (rep.mc_loss - rep.exact_loss).abs(),
                    if rep.loss_pass { "PASS" } else { "FAIL" }
                );
                all &= rep.pass();
            }
            println!("{}", if all { "all checks PASS" } else { "some checks FAIL" });
            Ok(if all { 0 } else { 2 })
        }
        Command::Synth {
            families,
            out,
            seed,
            docs_per_class,
            doc_len,
            emb_out,
            dim,
        } => {
            let corpus = gen_planted(&PlantedSpec::pairs(families, docs_per_class, doc_len, seed))?;
            write_corpus(&out, &corpus.dataset, &corpus.vocab)?;
            if let Some(p) = emb_out {
                write_embeddings(&p, &corpus.vocab, &planted_embeddings(&corpus, dim, seed))?;
            }
            println!(
                "wrote {} documents in {} classes to {}",
                corpus.dataset.len(),
                corpus.dataset.task.outputs(),
                out.display()
            );
            Ok(0)
        }
    }
}
