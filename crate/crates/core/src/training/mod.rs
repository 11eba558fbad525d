//! Losses, the mixed pathwise/score-function gradient estimator, Adam, the
//! concept-loss schedule and the training loop for every model kind.

mod config;
mod estimator;
mod fulltext;
mod losses;
mod optim;
mod trainer;

pub use config::{lambda_schedule, lambda_schedule_with, ModelKind, TrainConfig};
pub use estimator::{
    doc_stream, document_gradient, estimate_gradients, surrogate_value, BaselineState, BatchGradients, DocGradient,
    EstimatorConfig,
};
pub use fulltext::{fulltext_gradient, fulltext_predict, FullTextConfig, FullTextParams};
pub use losses::{
    batch_entropy, batch_entropy_slopes, compute_losses, losses_on_tape, output_loss, output_loss_on_tape, LossVars,
    Losses, Objective,
};
pub use optim::{adam_step, clip_global_norm, global_norm, OptimizerState};
pub use trainer::{
    run_training, run_training_from, validation_score, BatchRecord, EarlyStopping, EpochRecord, Model, TrainOutcome,
    TrainingLog,
};
