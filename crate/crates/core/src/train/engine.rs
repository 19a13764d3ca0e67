use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, loss_ce_grad, OptimConfig, Optimizer};
use crate::data::{bin_records, Batch, BinningConfig, DatasetSplit, SpikeTensor};
use crate::delay::{delay_stats, round_half_up, DelayStats, SpreadConfig};
use crate::error::{invalid, Error, Result};
use crate::network::{Mode, NetworkConfig, NetworkModel};

/// A split binned once up front.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: SpikeTensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn from_split(split: &DatasetSplit, binning: &BinningConfig) -> Result<Self> {
        split.validate()?;
        let Batch { inputs, labels } = bin_records(&split.records, split.channels as usize, binning)?;
        Ok(Self {
            inputs,
            labels,
            classes: split.classes as usize,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let x = &self.inputs;
        let stride = x.time * x.channels;
        let mut data = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            data.extend_from_slice(x.sample(i));
        }
        Batch {
            inputs: SpikeTensor::from_vec(idx.len(), x.time, x.channels, data).expect("consistent shape"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Learnable,
    /// Every delay frozen at 1.
    FixedUnit,
    FixedValue {
        value: f64,
    },
}

impl Ablation {
    /// Freezes the model's delays as the mode requires.
    pub fn apply(&self, model: &mut NetworkModel) {
        match *self {
            Ablation::Learnable => {}
            Ablation::FixedUnit => model.freeze_delays(1.0),
            Ablation::FixedValue { value } => model.freeze_delays(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub sigma_init: f64,
    pub sigma_decay: f64,
    pub ablation: Ablation,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        SpreadConfig::new(self.sigma_init, self.sigma_decay)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    pub accuracy: f64,
    pub loss: f64,
    /// `confusion[label][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub sigma: f64,
    pub batches: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_accuracy: Option<f64>,
    pub spike_rates: Vec<f64>,
    pub delay_stats: Vec<DelayStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: serde_json::Value,
    pub epochs: Vec<EpochRecord>,
    pub test: Option<Evaluation>,
}

impl TrainingReport {
    pub fn test_accuracy(&self) -> Option<f64> {
        self.test.as_ref().map(|t| t.accuracy)
    }
}

/// Eval-mode accuracy, mean loss and confusion counts.
pub fn evaluate(model: &NetworkModel, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    let classes = model.config.classes;
    if data.inputs.channels != model.config.input_channels {
        return Err(Error::Shape(format!(
            "data has {} channels, model expects {}",
            data.inputs.channels, model.config.input_channels
        )));
    }
    let mut confusion = vec![vec![0; classes]; classes];
    let mut loss = 0.0;
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.gather(chunk);
        let logits = model.forward_eval(&batch.inputs)?;
        let out = loss_ce_grad(&logits, &batch.labels, classes)?;
        loss += out.loss * chunk.len() as f64;
        correct += out.correct;
        for (row, &label) in logits.chunks_exact(classes).zip(&batch.labels) {
            let pred = argmax(row);
            confusion[label][pred] += 1;
        }
    }
    let n = data.len();
    Ok(Evaluation {
        samples: n,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        loss: if n == 0 { 0.0 } else { loss / n as f64 },
        confusion,
    })
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch as u64 + 1)
}

/// Mini-batch training with one optimizer step per batch and the spread
/// width annealed once per epoch.
pub fn train(
    model: &mut NetworkModel,
    train_set: &Dataset,
    valid: Option<&Dataset>,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainingReport> {
    cfg.validate()?;
    if train_set.classes > model.config.classes {
        return Err(Error::Shape(format!(
            "data has {} classes, model has {}",
            train_set.classes, model.config.classes
        )));
    }
    cfg.ablation.apply(model);
    model.reseed(cfg.seed);
    model.set_mode(Mode::Train);
    let spread = SpreadConfig::new(cfg.sigma_init, cfg.sigma_decay)?;
    let mut optimizer = Optimizer::new(cfg.optimizer)?;
    let classes = model.config.classes;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let sigma = spread.at_epoch(epoch).sigma;
        model.sigma = sigma;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));

        let (mut loss_sum, mut correct, mut batches) = (0.0, 0, 0);
        let mut rates = vec![0.0; model.layers.len()];
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.gather(chunk);
            let diverged = |e: Error| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch, batch: b },
                other => other,
            };
            let (logits, tape) = model.forward_train(&batch.inputs).map_err(diverged)?;
            let out = loss_ce_grad(&logits, &batch.labels, classes)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            let grads = backward(model, &tape, &out.grad)?;
            if !grads.l2_norm().is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            optimizer.step(model, &grads)?;
            loss_sum += out.loss * chunk.len() as f64;
            correct += out.correct;
            batches += 1;
            for (r, v) in rates.iter_mut().zip(tape.spike_rates()) {
                *r += v;
            }
        }

        let n = train_set.len().max(1) as f64;
        for r in &mut rates {
            *r /= batches.max(1) as f64;
        }
        let valid_accuracy = match valid {
            Some(v) => Some(evaluate(model, v, cfg.batch_size)?.accuracy),
            None => None,
        };
        epochs.push(EpochRecord {
            epoch,
            sigma,
            batches,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            valid_accuracy,
            spike_rates: rates,
            delay_stats: model
                .layers
                .iter()
                .map(|l| delay_stats(&l.delays))
                .collect::<Result<_>>()?,
        });
    }

    model.set_mode(Mode::Eval);
    let test = match test {
        Some(t) => Some(evaluate(model, t, cfg.batch_size)?),
        None => None,
    };
    Ok(TrainingReport {
        config: serde_json::json!({ "network": model.config, "train": cfg }),
        epochs,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelaySummary {
    Mean,
    Median,
}

/// Mean or median of every hidden layer's rounded delays.
pub fn summarize_delays(model: &NetworkModel, how: DelaySummary) -> Result<f64> {
    let mut all: Vec<f64> = model
        .layers
        .iter()
        .flat_map(|l| l.delays.values.iter().map(|&d| round_half_up(d)))
        .collect();
    if all.is_empty() {
        return Err(Error::EmptyDelays);
    }
    all.sort_by(f64::total_cmp);
    Ok(match how {
        DelaySummary::Mean => all.iter().sum::<f64>() / all.len() as f64,
        DelaySummary::Median => {
            let m = all.len() / 2;
            if all.len() % 2 == 1 {
                all[m]
            } else {
                (all[m - 1] + all[m]) / 2.0
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseReport {
    pub learnable: TrainingReport,
    pub summary: DelaySummary,
    pub fixed_value: f64,
    pub fixed: TrainingReport,
}

/// Trains with learnable delays, then retrains a freshly initialized model
/// with every delay frozen at the mean or median of the learned ones.
pub fn two_phase(
    network: &NetworkConfig,
    model_seed: u64,
    train_set: &Dataset,
    valid: Option<&Dataset>,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    summary: DelaySummary,
) -> Result<TwoPhaseReport> {
    let mut first = NetworkModel::new(network.clone(), model_seed)?;
    let learn_cfg = TrainConfig {
        ablation: Ablation::Learnable,
        ..*cfg
    };
    let learnable = train(&mut first, train_set, valid, test, &learn_cfg)?;
    let fixed_value = summarize_delays(&first, summary)?;
    let mut second = NetworkModel::new(network.clone(), model_seed)?;
    let fixed_cfg = TrainConfig {
        ablation: Ablation::FixedValue { value: fixed_value },
        ..*cfg
    };
    let fixed = train(&mut second, train_set, valid, test, &fixed_cfg)?;
    Ok(TwoPhaseReport {
        learnable,
        summary,
        fixed_value,
        fixed,
    })
}
