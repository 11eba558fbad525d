use core::fmt;
use core::str::FromStr;

use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SpanWindow};
use crate::text::Task;

/// Which objective (and architecture) a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Output loss plus the concept-consistency loss weighted by lambda.
    Educe,
    /// Same architecture with lambda forced to 0.
    NoConcept,
    /// Lambda forced to 0, plus `lambda_l1 * sum(z)`.
    NoConceptL1,
    /// Mean-pooled BiLSTM with a linear head; no excerpts.
    FullText,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Educe => "educe",
            ModelKind::NoConcept => "no_concept",
            ModelKind::NoConceptL1 => "no_concept_l1",
            ModelKind::FullText => "fulltext_baseline",
        }
    }

    pub fn uses_concept_loss(&self) -> bool {
        matches!(self, ModelKind::Educe)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "educe" => Ok(ModelKind::Educe),
            "no_concept" => Ok(ModelKind::NoConcept),
            "no_concept_l1" => Ok(ModelKind::NoConceptL1),
            "fulltext_baseline" => Ok(ModelKind::FullText),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?} (expected educe, no_concept, no_concept_l1 or fulltext_baseline)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub task: Task,
    pub concepts: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lambda0: f64,
    pub lambda_growth: f64,
    /// Weight of the score-function term; the pathwise term gets `1 - r`.
    pub r: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip: f64,
    pub entropy_weight: f64,
    pub lambda_l1: f64,
    pub patience: usize,
    pub window: SpanWindow,
    pub beta1: f64,
    pub beta2: f64,
    /// Seed of the sampled forward passes used for validation.
    pub eval_seed: u64,
}

impl TrainConfig {
    pub fn new(task: Task, embed_dim: usize) -> Self {
        Self {
            kind: ModelKind::Educe,
            task,
            concepts: 10,
            embed_dim,
            hidden: 200,
            lambda0: 0.1,
            lambda_growth: 1.1,
            r: 0.1,
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 30,
            seed: 0,
            clip: 0.0,
            entropy_weight: 0.0,
            lambda_l1: 0.0,
            patience: 5,
            window: SpanWindow::default(),
            beta1: 0.9,
            beta2: 0.999,
            eval_seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.r) {
            return bad(format!("r must lie in [0, 1], got {}", self.r));
        }
        if !(self.lambda0 >= 0.0) || !self.lambda0.is_finite() {
            return bad(format!("lambda0 must be finite and >= 0, got {}", self.lambda0));
        }
        if !(self.lambda_growth > 0.0) || !self.lambda_growth.is_finite() {
            return bad(format!("lambda_growth must be positive, got {}", self.lambda_growth));
        }
        if self.concepts == 0 || self.embed_dim == 0 || self.hidden == 0 {
            return bad(String::from("concepts, embed_dim and hidden must be at least 1"));
        }
        if self.task.outputs() == 0 {
            return bad(String::from("the task needs at least one output"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad(String::from("batch_size must be at least 1"));
        }
        if !(self.clip >= 0.0) {
            return bad(format!("clip must be >= 0, got {}", self.clip));
        }
        if !(self.entropy_weight >= 0.0) || !(self.lambda_l1 >= 0.0) {
            return bad(String::from("entropy_weight and lambda_l1 must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            ));
        }
        self.window.validate()
    }

    pub fn model_config(&self, pad_id: u32) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            concepts: self.concepts,
            task: self.task,
            window: self.window,
            pad_id,
        }
    }

    /// Concept-loss weight in effect during `epoch` (0-based).
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if self.kind.uses_concept_loss() {
            lambda_schedule_with(self.lambda0, self.lambda_growth, epoch)
        } else {
            0.0
        }
    }

    pub fn l1_weight(&self) -> f64 {
        if self.kind == ModelKind::NoConceptL1 {
            self.lambda_l1
        } else {
            0.0
        }
    }
}

/// `lambda0 * 1.1^epoch`.
pub fn lambda_schedule(lambda0: f64, epoch: usize) -> f64 {
    lambda_schedule_with(lambda0, 1.1, epoch)
}

pub fn lambda_schedule_with(lambda0: f64, growth: f64, epoch: usize) -> f64 {
    let mut l = lambda0;
    for _ in 0..epoch {
        l *= growth;
    }
    l
}
