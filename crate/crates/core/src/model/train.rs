use std::collections::BTreeMap;

use super::forward::{batch_loss_on_tape, example_on_tape};
use super::optim::Adam;
use super::{Checkpoint, ModelConfig, ModelError, Params, TrainMetadata};
use crate::attention::Dropout;
use crate::corpus::{encode, shuffled_batches, Batch, Example, Sentence, Vocabulary};
use crate::numerics::{Tape, Tensor};

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
}

/// Classification metrics over a split. `accuracy` is a percentage.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub predictions: Vec<usize>,
}

/// Mixes a run seed with a stream tag so the shuffle, dropout, and init
/// streams are independent.
fn stream_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_labels(examples: &[Example], num_classes: usize) -> Result<(), ModelError> {
    for e in examples {
        match e.label {
            None => return Err(ModelError::MissingLabel(e.sentence_id.clone())),
            Some(l) if l >= num_classes => {
                return Err(ModelError::LabelOutOfRange {
                    id: e.sentence_id.clone(),
                    label: l,
                    num_classes,
                })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Mean loss and parameter gradients for one batch, without dropout.
pub fn batch_gradients(
    params: &Params,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<(f64, BTreeMap<String, Tensor>), ModelError> {
    gradients_with(params, cfg, batch, None)
}

fn gradients_with(
    params: &Params,
    cfg: &ModelConfig,
    batch: &Batch,
    dropout: Option<&mut Dropout>,
) -> Result<(f64, BTreeMap<String, Tensor>), ModelError> {
    let mut tape = Tape::new();
    let pv = params.record(&mut tape, true);
    let recorded = batch_loss_on_tape(&mut tape, &pv, cfg, batch, dropout);
    if let Some(bad) = tape.first_non_finite() {
        return Err(ModelError::NonFinite {
            epoch: 0,
            batch: 0,
            node: bad.node,
            op: bad.op,
            param: pv
                .iter()
                .find(|(_, v)| v.index() == bad.node)
                .map(|(name, _)| name.to_string()),
            shape: bad.shape,
        });
    }
    let (loss, _) = recorded?;
    let grads = tape.backward(loss)?;
    let map = pv
        .iter()
        .map(|(name, v)| (name.to_string(), grads.wrt(v)))
        .collect();
    Ok((tape.value(loss).item(), map))
}

/// Mean loss for one batch, without dropout.
pub fn batch_loss(params: &Params, cfg: &ModelConfig, batch: &Batch) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let pv = params.record(&mut tape, false);
    let (loss, _) = batch_loss_on_tape(&mut tape, &pv, cfg, batch, None)?;
    Ok(tape.value(loss).item())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Dropout-free predictions and mean cross-entropy over encoded examples.
pub fn score_examples(
    params: &Params,
    cfg: &ModelConfig,
    examples: &[Example],
) -> Result<Metrics, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptySplit("evaluation"));
    }
    let mut correct = 0;
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(examples.len());
    for ex in examples {
        let mut tape = Tape::new();
        let pv = params.record(&mut tape, false);
        let out = example_on_tape(&mut tape, &pv, cfg, ex, None)?;
        let pred = argmax(tape.value(out.logits).data());
        predictions.push(pred);
        if let Some(label) = ex.label {
            let ce = tape.cross_entropy(out.logits, label)?;
            loss_sum += tape.value(ce).item();
            correct += usize::from(pred == label);
        }
    }
    let total = examples.len();
    Ok(Metrics {
        correct,
        total,
        accuracy: 100.0 * correct as f64 / total as f64,
        loss: loss_sum / total as f64,
        predictions,
    })
}

/// Trains with Adam on mean cross-entropy and keeps the parameters of the
/// epoch with the best dev accuracy (earliest on ties). The vocabulary is
/// built from `train` only.
pub fn train(cfg: &ModelConfig, train: &[Sentence], dev: &[Sentence]) -> Result<Checkpoint, ModelError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(ModelError::EmptySplit("dev"));
    }
    let vocab = Vocabulary::build(train)?;
    let roles = cfg.mask_roles();
    let train_ex = encode(train, &vocab, cfg.max_len, &roles)?;
    let dev_ex = encode(dev, &vocab, cfg.max_len, &roles)?;
    check_labels(&train_ex, cfg.num_classes)?;
    check_labels(&dev_ex, cfg.num_classes)?;

    let mut params = Params::init(cfg, vocab.size());
    let mut adam = Adam::new(cfg.learning_rate);
    let mut dropout = Dropout::new(cfg.dropout, stream_seed(cfg.seed, 1));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Params)> = None;

    for epoch in 1..=cfg.epochs {
        let shuffle = stream_seed(cfg.seed, 2 + epoch as u64);
        let batches = shuffled_batches(&train_ex, cfg.batch_size, Some(shuffle))?;
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let (loss, grads) = gradients_with(&params, cfg, batch, Some(&mut dropout))
                .map_err(|e| e.at(epoch, b))?;
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut params, &grads);
        }
        let dev_metrics = score_examples(&params, cfg, &dev_ex)?;
        let record = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_ex.len() as f64,
            dev_loss: dev_metrics.loss,
            dev_accuracy: dev_metrics.accuracy,
        };
        if best.as_ref().is_none_or(|(acc, _, _)| record.dev_accuracy > *acc) {
            best = Some((record.dev_accuracy, epoch, params.clone()));
        }
        history.push(record);
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(Checkpoint {
        config: cfg.clone(),
        vocab_hash: vocab.hash(),
        vocab,
        params: best_params,
        meta: TrainMetadata {
            seed: cfg.seed,
            best_epoch,
            epochs_run: cfg.epochs,
            history,
        },
    })
}

/// Scores `data` with a trained checkpoint.
pub fn evaluate(ckpt: &Checkpoint, data: &[Sentence]) -> Result<Metrics, ModelError> {
    let examples = encode(data, &ckpt.vocab, ckpt.config.max_len, &ckpt.config.mask_roles())?;
    check_labels(&examples, ckpt.config.num_classes)?;
    score_examples(&ckpt.params, &ckpt.config, &examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn stream_seeds_differ() {
        assert_ne!(stream_seed(1, 1), stream_seed(1, 2));
        assert_ne!(stream_seed(1, 1), stream_seed(2, 1));
    }
}
