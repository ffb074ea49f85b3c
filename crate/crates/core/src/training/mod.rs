//! The multi-task objective, batch construction and the optimization loop
//! with validation-based model selection.

mod dataset;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dataset::{clamp_index, make_balanced_batch, Dataset, LabeledRecording, Sample};

use crate::aggregate::{fuse_grid, scatter_flat, VotingRule};
use crate::error::{Error, Result};
use crate::network::{batch_input, forward_batch, init_params, predict_batch, register_params, ModelParams, ModelSpec};
use crate::numeric::{adam_step, AdamState, Tape, LOG_FLOOR};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Passes over the training data; a pass is `max(1, N / batch_size)` steps.
    pub passes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_reg: f64,
    pub dropout: f64,
    pub balanced_batching: bool,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            passes: 200,
            batch_size: 200,
            learning_rate: 1e-4,
            lambda_reg: 1e-3,
            dropout: 0.2,
            balanced_batching: true,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::invalid("at least one training pass is needed"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::invalid(format!(
                "regularization weight {} must be non-negative",
                self.lambda_reg
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Per-sample loss: the sum over output slots of the cross-entropy between
/// the one-hot target and the posterior.
pub fn multitask_loss(posteriors: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if posteriors.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} posterior slots for {} targets",
            posteriors.len(),
            targets.len()
        )));
    }
    let mut loss = 0.0;
    for (p, &y) in posteriors.iter().zip(targets) {
        if y >= p.len() {
            return Err(Error::invalid(format!("target class {y} outside 0..{}", p.len())));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("posterior has negative or non-finite entries"));
        }
        loss -= p[y].max(LOG_FLOOR).ln();
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PassRecord {
    pub pass: usize,
    /// Mean objective (data term plus penalty) over the pass's steps.
    pub train_loss: f64,
    /// Validation accuracy of the classification slot.
    pub val_center_accuracy: f64,
    /// Validation accuracy after multiplicative voting.
    pub val_aggregated_accuracy: f64,
    /// Whether this pass became the retained model.
    pub best: bool,
}

pub fn history_csv(history: &[PassRecord]) -> String {
    let mut s = String::from("pass,train_loss,val_center_accuracy,val_aggregated_accuracy,best\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.pass, r.train_loss, r.val_center_accuracy, r.val_aggregated_accuracy, r.best
        );
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The spec with the configured dropout and regularization applied.
    pub spec: ModelSpec,
    /// Parameters of the best validation pass, rounded to single precision.
    pub params: ModelParams,
    pub history: Vec<PassRecord>,
    pub best_pass: usize,
}

const PREDICT_CHUNK: usize = 256;

/// Inference outputs for every sample, flattened `N x slots x Y`.
pub fn predict_dataset(spec: &ModelSpec, params: &ModelParams, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len() * spec.context().n_outputs() * spec.n_classes());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let inputs = chunk.iter().map(|&i| data.input(i)).collect::<Result<Vec<_>>>()?;
        let views: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        out.extend(predict_batch(spec, params, &views)?);
    }
    Ok(out)
}

/// Centre-slot and multiplicatively fused accuracy over a dataset, given its
/// flattened outputs.
pub fn dataset_accuracies(spec: &ModelSpec, data: &Dataset, outputs: &[f64]) -> Result<(f64, f64)> {
    let ctx = spec.context();
    let (slots, y) = (ctx.n_outputs(), spec.n_classes());
    let tau = ctx.output_tau();
    let (mut center_ok, mut fused_ok) = (0usize, 0usize);
    for r in 0..data.recordings().len() {
        let range = data.recording_range(r);
        let rec_out = &outputs[range.start * slots * y..range.end * slots * y];
        let labels = &data.recordings()[r].labels;
        for (n, l) in labels.iter().enumerate() {
            let at = (n * slots + tau) * y;
            if crate::aggregate::argmax(&rec_out[at..at + y]) == l.index() {
                center_ok += 1;
            }
        }
        let grid = scatter_flat(rec_out, tau, labels.len(), y)?;
        for (f, l) in fuse_grid(&grid, VotingRule::Multiplicative)?.iter().zip(labels) {
            if f.argmax() == l.index() {
                fused_ok += 1;
            }
        }
    }
    let n = data.len().max(1) as f64;
    Ok((center_ok as f64 / n, fused_ok as f64 / n))
}

/// Trains from a fresh initialization and keeps the parameters with the best
/// validation centre-slot accuracy (earliest on ties).
pub fn train(
    spec: &ModelSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    train_with_progress(spec, train_set, val_set, config, |_| {})
}

pub fn train_with_progress(
    spec: &ModelSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainingConfig,
    mut on_pass: impl FnMut(&PassRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut spec = spec.clone();
    spec.set_dropout(config.dropout);
    spec.set_lambda_reg(config.lambda_reg);
    spec.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    for d in [train_set, val_set] {
        if d.context() != spec.context() {
            return Err(Error::invalid("dataset context differs from the model's"));
        }
        let (p, bins, t) = spec.epoch_dims();
        if d.dims() != (p, bins, t) {
            return Err(Error::shape(format!(
                "dataset images {:?}, model expects {:?}",
                d.dims(),
                (p, bins, t)
            )));
        }
    }
    let mut params = init_params(&spec, config.seed)?;
    let mut adam = AdamState::new(&params.tensors);
    let bank = params.index_of("bank");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let steps = (train_set.len() / config.batch_size).max(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();

    let mut history = Vec::with_capacity(config.passes);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for pass in 1..=config.passes {
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let batch = if config.balanced_batching {
                make_balanced_batch(train_set, config.batch_size, &mut rng)?
            } else {
                let mut b = Vec::with_capacity(config.batch_size);
                while b.len() < config.batch_size.min(train_set.len()) {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    b.push(order[cursor]);
                    cursor += 1;
                }
                b
            };
            let loss = sgd_step(
                &spec,
                &mut params,
                &mut adam,
                train_set,
                &batch,
                config.learning_rate,
                &mut rng,
            )
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence {
                    pass,
                    step,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Divergence { pass, step, loss });
            }
            if let Some(b) = bank {
                params.tensors[b].data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            loss_sum += loss;
        }
        let outputs = predict_dataset(&spec, &params, val_set)?;
        let (center, fused) = dataset_accuracies(&spec, val_set, &outputs)?;
        let improved = best.as_ref().is_none_or(|(acc, _, _)| center > *acc);
        if improved {
            best = Some((center, pass, params.clone()));
        }
        let record = PassRecord {
            pass,
            train_loss: loss_sum / steps as f64,
            val_center_accuracy: center,
            val_aggregated_accuracy: fused,
            best: improved,
        };
        on_pass(&record);
        history.push(record);
    }
    let (_, best_pass, mut params) = best.expect("at least one pass ran");
    params.round_to_f32();
    Ok(TrainOutcome {
        spec,
        params,
        history,
        best_pass,
    })
}

/// One Adam step on `batch`; returns the objective before the update.
fn sgd_step(
    spec: &ModelSpec,
    params: &mut ModelParams,
    adam: &mut AdamState,
    data: &Dataset,
    batch: &[usize],
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let inputs = batch.iter().map(|&i| data.input(i)).collect::<Result<Vec<_>>>()?;
    let views: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let targets: Vec<usize> = batch.iter().flat_map(|&i| data.targets(i)).collect();
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, true)?;
    let x = batch_input(&mut tape, spec, &views)?;
    let probs = forward_batch(spec, params, &mut tape, &vars, x, Some(rng))?;
    let data_term = tape.cross_entropy(probs, &targets, spec.n_classes())?;
    let objective = if spec.lambda_reg() > 0.0 {
        let pen = tape.sum_squares(&vars, spec.lambda_reg() / 2.0)?;
        tape.add(data_term, pen)?
    } else {
        data_term
    };
    let loss = tape.value(objective).item();
    let grads = tape.backward(objective)?;
    let g: Vec<_> = vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();
    adam_step(&mut params.tensors, &g, adam, lr)?;
    Ok(loss)
}

#[cfg(test)]
mod tests;
