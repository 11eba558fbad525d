use alloc::vec::Vec;

use super::config::{ModelKind, TrainConfig};
use super::estimator::{estimate_gradients, BaselineState, EstimatorConfig};
use super::fulltext::{fulltext_gradient, FullTextConfig, FullTextParams};
use super::losses::Objective;
use super::optim::{adam_step, OptimizerState};
use crate::error::{Error, Result};
use crate::evaluation::{concept_consistency, output_metric, sampled_traces, OutputMetric};
use crate::model::{EduceParams, ParamStore};
use crate::numerics::Tensor;
use crate::rng;
use crate::text::{Dataset, EmbeddingTable, Task};

/// Trainable parameters of either architecture.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Educe(EduceParams),
    FullText(FullTextParams),
}

impl Model {
    /// Fresh parameters for `config.kind`.
    pub fn init(config: &TrainConfig, pad_id: u32) -> Result<Self> {
        config.validate()?;
        Ok(match config.kind {
            ModelKind::FullText => Model::FullText(FullTextParams::init(
                FullTextConfig {
                    embed_dim: config.embed_dim,
                    hidden: config.hidden,
                    task: config.task,
                },
                config.seed,
            )?),
            _ => Model::Educe(EduceParams::init(config.model_config(pad_id), config.seed)?),
        })
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Model::Educe(p) => &p.store,
            Model::FullText(p) => &p.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Educe(p) => &mut p.store,
            Model::FullText(p) => &mut p.store,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Model::Educe(p) => p.config.task,
            Model::FullText(p) => p.config.task,
        }
    }

    pub fn as_educe(&self) -> Option<&EduceParams> {
        match self {
            Model::Educe(p) => Some(p),
            Model::FullText(_) => None,
        }
    }
}

/// One line of the training log. Epochs are numbered from 1; `lambda` is the
/// weight used during that epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_output: f64,
    pub loss_concept: f64,
    /// Weighted auxiliary terms: `lambda_l1 * sum(z)` plus `w_H * L_entropy`.
    pub loss_aux: f64,
    pub lambda: f64,
    pub baseline_b: f64,
    pub val_score: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub step: usize,
    pub size: usize,
    /// Batch-mean joint loss; the value fed to the control variate.
    pub loss_joint: f64,
    pub baseline_before: f64,
    pub baseline_after: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub batches: Vec<BatchRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Best-scoring parameters (the initial ones if no epoch ran).
    pub best: Model,
    /// Epoch of `best`, 0 for the initial parameters.
    pub best_epoch: usize,
    pub best_score: f64,
    pub log: TrainingLog,
    pub stopped_early: bool,
}

/// Tracks the best validation score. A patience of 0 never stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_score: f64,
    /// 1-based epoch of the best score, 0 before any improvement.
    pub best_epoch: usize,
    pub epochs_seen: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_score: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_seen: 0,
            since_best: 0,
        }
    }

    /// Records the score of the next epoch. Returns whether it improved on
    /// the best so far and whether training should stop.
    pub fn observe(&mut self, score: f64) -> (bool, bool) {
        self.epochs_seen += 1;
        if score > self.best_score {
            self.best_score = score;
            self.best_epoch = self.epochs_seen;
            self.since_best = 0;
            return (true, false);
        }
        self.since_best += 1;
        (false, self.patience > 0 && self.since_best >= self.patience)
    }
}

/// Validation criterion: output accuracy (or negative MSE), plus
/// `lambda * concept accuracy` for the model trained with the concept loss.
pub fn validation_score(
    config: &TrainConfig,
    model: &Model,
    val: &Dataset,
    emb: &EmbeddingTable,
    lambda: f64,
) -> Result<f64> {
    let base = |m: OutputMetric| match m {
        OutputMetric::Accuracy(a) => a,
        OutputMetric::Mse(e) => -e,
    };
    match model {
        Model::FullText(_) => Ok(base(crate::evaluation::evaluate_output(
            model,
            val,
            emb,
            config.eval_seed,
        )?)),
        Model::Educe(p) => {
            let traces = sampled_traces(p, val, emb, config.eval_seed)?;
            let outputs: Vec<Vec<f64>> = traces.iter().map(|t| t.output.clone()).collect();
            let out = base(output_metric(val, &outputs)?);
            if config.kind.uses_concept_loss() {
                Ok(out + lambda * concept_consistency(&traces))
            } else {
                Ok(out)
            }
        }
    }
}

/// Trains from freshly initialized parameters.
pub fn run_training(
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    emb: &EmbeddingTable,
    pad_id: u32,
    clock: &mut dyn FnMut() -> f64,
) -> Result<TrainOutcome> {
    let model = Model::init(config, pad_id)?;
    run_training_from(config, model, train, val, emb, clock)
}

/// Epoch loop with seeded shuffling, Adam, the lambda schedule and early
/// stopping on the validation score. `clock` returns seconds since the start
/// of the run for the log.
pub fn run_training_from(
    config: &TrainConfig,
    mut model: Model,
    train: &Dataset,
    val: &Dataset,
    emb: &EmbeddingTable,
    clock: &mut dyn FnMut() -> f64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if val.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    if train.task != config.task || val.task != config.task || model.task() != config.task {
        return Err(Error::TaskMismatch(
            "datasets, model and configuration disagree on the task",
        ));
    }
    if emb.dim() != config.embed_dim {
        return Err(Error::Shape {
            op: "embedding dimension",
            left: alloc::vec![emb.dim()],
            right: alloc::vec![config.embed_dim],
        });
    }
    let mut opt = OptimizerState::new(model.store(), config.beta1, config.beta2);
    let mut baseline = BaselineState::new();
    let mut log = TrainingLog::default();
    let mut best = model.clone();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        let lambda = config.lambda_at(epoch);
        let est = EstimatorConfig {
            objective: Objective {
                lambda,
                lambda_l1: config.l1_weight(),
            },
            r: config.r,
            entropy_weight: config.entropy_weight,
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng::shuffle(&mut order, &mut rng::stream(&[config.seed, 0x5a0f, epoch as u64]));

        let (mut sum_out, mut sum_concept, mut sum_aux) = (0.0, 0.0, 0.0);
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let n = batch.len() as f64;
            let before = baseline.b();
            let (mut grads, loss_joint) = match &model {
                Model::Educe(p) => {
                    let key = [config.seed, epoch as u64, step as u64];
                    let bg = estimate_gradients(train, batch, p, emb, &est, &mut baseline, key)?;
                    sum_out += bg.losses.output * n;
                    sum_concept += bg.losses.concept * n;
                    sum_aux += (est.objective.lambda_l1 * bg.losses.l1 + config.entropy_weight * bg.losses.entropy) * n;
                    (bg.grads, bg.losses.joint)
                }
                Model::FullText(p) => {
                    let per_doc = crate::par::map(batch, |&i| {
                        fulltext_gradient(p, &train.docs[i].tokens, &train.docs[i].label, emb, i)
                    })?;
                    let mut grads: Vec<Tensor> = p.store.zeros_like();
                    let mut loss = 0.0;
                    for (l, g) in &per_doc {
                        loss += l;
                        for (acc, gi) in grads.iter_mut().zip(g) {
                            acc.add_assign(gi);
                        }
                    }
                    for g in &mut grads {
                        g.scale_in_place(1.0 / n);
                    }
                    sum_out += loss;
                    (grads, loss / n)
                }
            };
            let grad_norm = adam_step(model.store_mut(), &mut grads, &mut opt, config.lr, config.clip)?;
            log.batches.push(BatchRecord {
                epoch: epoch + 1,
                step,
                size: batch.len(),
                loss_joint,
                baseline_before: before,
                baseline_after: baseline.b(),
                grad_norm,
            });
        }

        let val_score = validation_score(config, &model, val, emb, lambda)?;
        let total = train.len() as f64;
        log.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss_output: sum_out / total,
            loss_concept: sum_concept / total,
            loss_aux: sum_aux / total,
            lambda,
            baseline_b: baseline.b(),
            val_score,
            elapsed_s: clock(),
        });
        let (improved, stop) = stopper.observe(val_score);
        if improved {
            best = model.clone();
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    let best_score = if stopper.best_epoch == 0 {
        validation_score(config, &best, val, emb, config.lambda_at(0))?
    } else {
        stopper.best_score
    };
    Ok(TrainOutcome {
        best,
        best_epoch: stopper.best_epoch,
        best_score,
        log,
        stopped_early,
    })
}
