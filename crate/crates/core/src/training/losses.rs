use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, TraceVars};
use crate::numerics::{Tape, Tensor, Var};
use crate::text::{Label, Task};

/// Weights of the per-document objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub lambda: f64,
    pub lambda_l1: f64,
}

/// Per-document loss terms. `entropy` is a batch quantity and is always 0
/// here; see [`batch_entropy`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Losses {
    pub output: f64,
    pub concept: f64,
    pub l1: f64,
    pub entropy: f64,
    pub joint: f64,
}

fn check_task(task: Task, label: &Label) -> Result<()> {
    match (task, label) {
        (Task::Classification { classes }, Label::Class(c)) => {
            if *c >= classes {
                return Err(Error::Label { label: *c, classes });
            }
            Ok(())
        }
        (Task::Regression { targets }, Label::Targets(t)) => {
            if t.len() != targets {
                return Err(Error::Shape {
                    op: "regression targets",
                    left: alloc::vec![t.len()],
                    right: alloc::vec![targets],
                });
            }
            Ok(())
        }
        (Task::Classification { .. }, _) => Err(Error::TaskMismatch("classification trace with regression label")),
        (Task::Regression { .. }, _) => Err(Error::TaskMismatch("regression trace with class label")),
    }
}

/// Output loss from a prediction: `-ln p[y]`, or the mean squared error over
/// the targets.
pub fn output_loss(task: Task, output: &[f64], label: &Label) -> Result<f64> {
    check_task(task, label)?;
    Ok(match label {
        Label::Class(y) => -libm::log(output[*y]),
        Label::Targets(t) => {
            let se: f64 = output.iter().zip(t).map(|(p, y)| (p - y) * (p - y)).sum();
            se / t.len() as f64
        }
    })
}

/// Loss terms of one sampled trace.
pub fn compute_losses(trace: &ForwardTrace, label: &Label, objective: Objective) -> Result<Losses> {
    let output = output_loss(trace.task, &trace.output, label)?;
    let mut concept = 0.0;
    for e in &trace.extractions {
        if e.present {
            concept -= libm::log(e.concept_probs[e.concept]);
        }
    }
    let l1 = trace.sparsity() as f64;
    let joint = output + objective.lambda * concept + objective.lambda_l1 * l1;
    Ok(Losses {
        output,
        concept,
        l1,
        entropy: 0.0,
        joint,
    })
}

/// Tape handles of the per-document loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub output: Var,
    pub concept: Var,
    pub l1: Var,
    pub joint: Var,
}

/// Output loss on the tape from the `delta z` logits.
pub fn output_loss_on_tape(tape: &mut Tape, task: Task, logits: Var, label: &Label) -> Result<Var> {
    check_task(task, label)?;
    match label {
        Label::Class(y) => {
            let lp = tape.log_softmax_at(logits, None, *y)?;
            tape.scale(lp, -1.0)
        }
        Label::Targets(t) => {
            let pred = tape.sigmoid(logits)?;
            let target = tape.constant(Tensor::vector(t.clone()));
            let diff = tape.sub(pred, target)?;
            let sq = tape.mul(diff, diff)?;
            let total = tape.sum(sq)?;
            tape.scale(total, 1.0 / t.len() as f64)
        }
    }
}

/// Records the loss terms of a trace. The presence bits enter through their
/// straight-through nodes, so gradients reach alpha through every term that
/// uses `z`.
pub fn losses_on_tape(
    tape: &mut Tape,
    task: Task,
    vars: &TraceVars,
    label: &Label,
    objective: Objective,
) -> Result<LossVars> {
    let output = output_loss_on_tape(tape, task, vars.logits, label)?;
    let z = tape.concat(&vars.code)?;
    let lps = tape.concat(&vars.concept_log_probs)?;
    let gated = tape.dot(z, lps)?;
    let concept = tape.scale(gated, -1.0)?;
    let l1 = tape.sum(z)?;
    let mut joint = output;
    if objective.lambda != 0.0 {
        let t = tape.scale(concept, objective.lambda)?;
        joint = tape.add(joint, t)?;
    }
    if objective.lambda_l1 != 0.0 {
        let t = tape.scale(l1, objective.lambda_l1)?;
        joint = tape.add(joint, t)?;
    }
    Ok(LossVars {
        output,
        concept,
        l1,
        joint,
    })
}

fn binary_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * libm::log(p);
    }
    if p < 1.0 {
        h -= (1.0 - p) * libm::log(1.0 - p);
    }
    h
}

/// `-sum_c H(mean_i p_ic) / C` over a batch of presence probabilities
/// (`presences[i][c]`).
pub fn batch_entropy(presences: &[Vec<f64>]) -> f64 {
    let Some(first) = presences.first() else {
        return 0.0;
    };
    let c = first.len();
    let n = presences.len() as f64;
    let mut total = 0.0;
    for k in 0..c {
        let mean = presences.iter().map(|p| p[k]).sum::<f64>() / n;
        total += binary_entropy(mean);
    }
    -total / c as f64
}

/// Derivative of [`batch_entropy`] with respect to each mean presence.
pub fn batch_entropy_slopes(presences: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = presences.first() else {
        return Vec::new();
    };
    let c = first.len();
    let n = presences.len() as f64;
    (0..c)
        .map(|k| {
            // Clamped so a saturated mean gives a large finite slope.
            let mean = (presences.iter().map(|p| p[k]).sum::<f64>() / n).clamp(1e-12, 1.0 - 1e-12);
            -libm::log((1.0 - mean) / mean) / c as f64
        })
        .collect()
}
