use rand::seq::SliceRandom;
use rand::Rng;
use rerank_tensor::{Adam, AdamConfig, Tape};
use serde::{Deserialize, Serialize};

use super::model::{Mode, Qanet};
use super::Encoded;
use crate::corpus::TrainingExample;
use crate::seeds;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Learning-rate multiplier applied after every epoch.
    pub epoch_decay: f64,
    pub l2_lambda: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Share of examples held out to pick the best checkpoint.
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            epoch_decay: 0.99,
            l2_lambda: 3e-7,
            steps: 42_000,
            batch_size: 64,
            dev_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("epsilon", self.epsilon),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("adam betas must be below 1".into()));
        }
        if !(self.epoch_decay > 0.0 && self.epoch_decay <= 1.0) {
            return Err(Error::Config(format!("epoch_decay {} outside (0, 1]", self.epoch_decay)));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::Config(format!("l2_lambda {} must be non-negative", self.l2_lambda)));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config(format!("dev_fraction {} outside [0, 1)", self.dev_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    /// Mean binary cross-entropy.
    pub loss: f64,
    pub count: usize,
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev accuracy, or the last
    /// epoch when there is no dev split.
    pub model: Qanet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub dev_size: usize,
}

fn encode(model: &Qanet, ex: &TrainingExample) -> Result<(Encoded, Encoded)> {
    let c = model.config();
    Ok((
        Encoded::new(&ex.question_ids, c.max_q_len, None)?,
        Encoded::new(&ex.answer_ids, c.max_a_len, None)?,
    ))
}

fn bce(p: f64, label: u8) -> f64 {
    let p = p.clamp(rerank_tensor::BCE_CLAMP, 1.0 - rerank_tensor::BCE_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Accuracy at threshold 0.5 (`p ≥ 0.5` predicts good).
pub fn evaluate_accuracy(model: &Qanet, examples: &[TrainingExample]) -> Result<Accuracy> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus("no examples to evaluate"));
    }
    let mut acc = Accuracy {
        accuracy: 0.0,
        loss: 0.0,
        count: examples.len(),
        true_positive: 0,
        true_negative: 0,
        false_positive: 0,
        false_negative: 0,
    };
    for ex in examples {
        let (q, a) = encode(model, ex)?;
        let p = model.probability(&q, &a)?;
        acc.loss += bce(p, ex.label);
        match (p >= 0.5, ex.label == 1) {
            (true, true) => acc.true_positive += 1,
            (false, false) => acc.true_negative += 1,
            (true, false) => acc.false_positive += 1,
            (false, true) => acc.false_negative += 1,
        }
    }
    acc.loss /= examples.len() as f64;
    acc.accuracy = (acc.true_positive + acc.true_negative) as f64 / examples.len() as f64;
    Ok(acc)
}

/// Mean BCE loss of one batch as a scalar on `tape`, with parameters bound
/// as `vars`.
pub(crate) fn batch_loss(
    model: &Qanet,
    tape: &mut Tape,
    vars: &[rerank_tensor::Var],
    batch: &[(Encoded, Encoded, u8, Mode)],
) -> Result<rerank_tensor::Var> {
    let mut losses = Vec::with_capacity(batch.len());
    for (q, a, label, mode) in batch {
        let logit = model.forward(tape, vars, q, a, *mode)?;
        let p = tape.sigmoid(logit);
        losses.push(tape.bce_loss(p, f64::from(*label))?);
    }
    Ok(tape.mean_of(&losses)?)
}

/// Mean BCE of `examples` computed as one batch on a tape, dropout off.
pub fn batch_mean_loss(model: &Qanet, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus("no examples to evaluate"));
    }
    let batch = examples
        .iter()
        .map(|ex| encode(model, ex).map(|(q, a)| (q, a, ex.label, Mode::Eval)))
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let loss = batch_loss(model, &mut tape, &vars, &batch)?;
    Ok(tape.value(loss).item())
}

/// Adam training with per-epoch learning-rate decay and best-dev
/// checkpoint selection. `on_epoch` sees every history record as it is
/// produced.
pub fn train(
    mut model: Qanet,
    examples: &[TrainingExample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus("no training examples"));
    }
    let encoded = examples
        .iter()
        .map(|ex| encode(&model, ex).map(|(q, a)| (q, a, ex.label)))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut seeds::rng(config.seed, seeds::SPLIT));
    let n_dev = if config.dev_fraction > 0.0 && examples.len() >= 2 {
        ((config.dev_fraction * examples.len() as f64).round() as usize).clamp(1, examples.len() - 1)
    } else {
        0
    };
    let dev: Vec<TrainingExample> = order[..n_dev].iter().map(|&i| examples[i].clone()).collect();
    let mut train_idx: Vec<usize> = order[n_dev..].to_vec();

    let mut shuffle_rng = seeds::rng(config.seed, seeds::SHUFFLE);
    let mut dropout_rng = seeds::rng(config.seed, seeds::DROPOUT);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        },
        &model.params().iter().collect::<Vec<_>>(),
    );
    let frozen_table = model
        .is_embedding_frozen()
        .then(|| model.params()[model.embedding_index()].clone());

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<rerank_tensor::Tensor>)> = None;
    let mut epoch = 0;
    let mut pos = 0;
    let mut epoch_losses = Vec::new();
    train_idx.shuffle(&mut shuffle_rng);

    for step in 1..=config.steps {
        let end = (pos + config.batch_size).min(train_idx.len());
        let batch: Vec<_> = train_idx[pos..end]
            .iter()
            .map(|&i| {
                let (q, a, label) = &encoded[i];
                (q.clone(), a.clone(), *label, Mode::Train { seed: dropout_rng.random() })
            })
            .collect();
        pos = end;

        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true);
        let loss = batch_loss(&model, &mut tape, &vars, &batch)?;
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss_value} at step {step} (epoch {})", epoch + 1)));
        }
        epoch_losses.push(loss_value);
        tape.backward(loss)?;
        let mut grads: Vec<Vec<f64>> = vars
            .iter()
            .zip(model.params())
            .map(|(v, p)| tape.grad(*v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
            .collect();
        drop(tape);
        for (i, g) in grads.iter_mut().enumerate() {
            model.mask_frozen_grad(i, g);
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at step {step}",
                    model.param_names()[i]
                )));
            }
        }
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut params: Vec<&mut rerank_tensor::Tensor> = model.params_mut().iter_mut().collect();
        adam.step(&mut params, &grad_refs, config.l2_lambda)?;
        if let Some(table) = &frozen_table {
            restore_frozen_rows(&mut model, table);
        }

        let epoch_done = pos >= train_idx.len();
        if epoch_done || step == config.steps {
            epoch += 1;
            let record = finish_epoch(&model, &dev, epoch, step, adam.config.learning_rate, &epoch_losses)?;
            let score = record.dev_accuracy.unwrap_or(f64::NEG_INFINITY);
            if dev.is_empty() || best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.params().to_vec()));
            }
            on_epoch(&record);
            history.push(record);
            epoch_losses.clear();
            adam.config.learning_rate *= config.epoch_decay;
            pos = 0;
            train_idx.shuffle(&mut shuffle_rng);
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch is recorded");
    model.params_mut().clone_from_slice(&params);
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        dev_size: dev.len(),
    })
}

fn restore_frozen_rows(model: &mut Qanet, table: &rerank_tensor::Tensor) {
    let dim = model.config().word_dim;
    let idx = model.embedding_index();
    let data = model.params_mut()[idx].data_mut();
    for (row, (dst, src)) in data.chunks_mut(dim).zip(table.data().chunks(dim)).enumerate() {
        if row != crate::corpus::UNK_ID {
            dst.copy_from_slice(src);
        }
    }
}

fn finish_epoch(
    model: &Qanet,
    dev: &[TrainingExample],
    epoch: usize,
    step: usize,
    learning_rate: f64,
    losses: &[f64],
) -> Result<EpochRecord> {
    let dev_eval = if dev.is_empty() { None } else { Some(evaluate_accuracy(model, dev)?) };
    Ok(EpochRecord {
        epoch,
        step,
        learning_rate,
        train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
        dev_loss: dev_eval.as_ref().map(|a| a.loss),
        dev_accuracy: dev_eval.map(|a| a.accuracy),
    })
}
