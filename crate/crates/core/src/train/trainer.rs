use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::scalar::Real;
use crate::tape::{Tape, Tensor};

use super::adam::Adam;
use super::config::{ModelConfig, TrainConfig};
use super::model::{Model, ModelInput};

/// Mean negative log-likelihood over the nodes selected by `mask`.
pub fn masked_cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Tensor, labels: &[usize], mask: &[bool]) -> Result<Tensor> {
    if mask.len() != logits.rows() {
        return Err(Error::shape(
            "masked_cross_entropy",
            format!("mask of length {} for {} rows", mask.len(), logits.rows()),
        ));
    }
    let rows: Vec<usize> = indices(mask);
    tape.masked_cross_entropy(logits, labels, &rows)
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

pub struct TrainOutcome<T> {
    /// Parameters and running statistics from the best validation epoch.
    pub model: Model<T>,
    pub history: History,
    /// Zero-based epoch of the restored model; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: f64,
}

/// Eval-mode outputs over the whole graph.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    /// Fraction of masked nodes whose arg-max logit equals the label.
    pub accuracy: f64,
    pub logits: Matrix<T>,
    /// Last hidden representation (input of the output layer).
    pub hidden: Matrix<T>,
}

/// Full-batch training with Adam and early stopping on validation accuracy.
///
/// Model initialization and dropout draw from one ChaCha8 stream seeded by
/// `train_cfg.seed`, so identical inputs give identical histories.
pub fn train<T: Real>(model_cfg: &ModelConfig, train_cfg: &TrainConfig, g: &Graph) -> Result<TrainOutcome<T>> {
    let input = ModelInput::new(g);
    train_with_input(model_cfg, train_cfg, g, &input)
}

pub fn train_with_input<T: Real>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    g: &Graph,
    input: &ModelInput<T>,
) -> Result<TrainOutcome<T>> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let masks = g.masks();
    let train_rows = masks.train_indices();
    let val_rows = masks.val_indices();
    if train_rows.is_empty() {
        return Err(Error::param("training mask selects no nodes"));
    }
    if val_rows.is_empty() {
        return Err(Error::param("validation mask selects no nodes"));
    }
    let mut seen = alloc::vec![false; g.num_classes()];
    for &r in &train_rows {
        seen[g.labels()[r]] = true;
    }
    let missing = seen.iter().filter(|&&s| !s).count();
    if missing > 0 {
        log::warn!("{missing} of {} classes have no training node", g.num_classes());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut model: Model<T> = Model::new(model_cfg, g.num_features(), g.num_classes(), train_cfg.dropout, &mut rng)?;
    let mut adam = Adam::new(&model.params(), train_cfg.lr, train_cfg.weight_decay);
    let mut history = History::default();
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Diverged { epoch, loss: f64::NAN },
            other => other,
        };
        let (loss, grads, stats) = {
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, input, true, &mut rng).map_err(diverged)?;
            let loss = tape.masked_cross_entropy(fwd.logits, g.labels(), &train_rows).map_err(diverged)?;
            let loss_value = tape.scalar(loss).as_f64();
            if !loss_value.is_finite() {
                return Err(Error::Diverged { epoch, loss: loss_value });
            }
            let grads = tape.backward(loss).map_err(diverged)?;
            let per_param: Vec<Option<Matrix<T>>> = model.params().into_iter().map(|p| grads.param(p)).collect();
            (loss_value, per_param, fwd.stats)
        };
        model.update_running(&stats);
        adam.step(&mut model.params_mut(), &grads)?;
        if model.params().iter().any(|p| !p.value().all_finite()) {
            return Err(Error::Diverged { epoch, loss });
        }

        let val = evaluate_rows(&model, input, g.labels(), &val_rows).map_err(diverged)?.accuracy;
        history.train_loss.push(loss);
        history.val_accuracy.push(val);
        if val > best_val {
            best_val = val;
            best = model.clone();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience {
                break;
            }
        }
    }
    if best_epoch.is_none() {
        best_val = evaluate_rows(&best, input, g.labels(), &val_rows)?.accuracy;
    }
    Ok(TrainOutcome { model: best, history, best_epoch, best_val_accuracy: best_val })
}

/// Eval-mode forward pass; accuracy is measured on `mask`.
pub fn evaluate<T: Real>(model: &Model<T>, g: &Graph, mask: &[bool]) -> Result<Evaluation<T>> {
    let input = ModelInput::new(g);
    if mask.len() != g.num_nodes() {
        return Err(Error::shape("evaluate", format!("mask of length {} for {} nodes", mask.len(), g.num_nodes())));
    }
    evaluate_rows(model, &input, g.labels(), &indices(mask))
}

pub fn evaluate_rows<T: Real>(model: &Model<T>, input: &ModelInput<T>, labels: &[usize], rows: &[usize]) -> Result<Evaluation<T>> {
    if rows.is_empty() {
        return Err(Error::param("evaluation mask selects no nodes"));
    }
    let mut tape = Tape::new();
    // Eval mode draws no random numbers; the generator is only a placeholder.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fwd = model.forward(&mut tape, input, false, &mut rng)?;
    let logits = tape.value(fwd.logits).clone();
    let predicted = logits.argmax_rows();
    let correct = rows.iter().filter(|&&r| predicted[r] == labels[r]).count();
    Ok(Evaluation {
        accuracy: correct as f64 / rows.len() as f64,
        logits,
        hidden: tape.value(fwd.hidden).clone(),
    })
}
