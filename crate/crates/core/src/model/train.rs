//! Mini-batch training with cross-entropy loss.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ToyClassifier, NUM_CLASSES, PARAM_COUNT};
use crate::error::{Error, Result};
use crate::interchange::{LoadedManifest, Split};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "sgd_momentum" => Ok(Optimizer::SgdMomentum),
            other => Err(Error::validation(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            optimizer: Optimizer::SgdMomentum,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean cross-entropy of every mini-batch, in order.
    pub batch_losses: Vec<f64>,
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    /// Trailing moving average of the batch losses.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        self.batch_losses
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let lo = (i + 1).saturating_sub(w);
                let s = &self.batch_losses[lo..=i];
                s.iter().sum::<f64>() / s.len() as f64
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:e},{:e}\n", e.epoch, e.mean_loss, e.accuracy));
        }
        s
    }
}

/// A training example.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: Matrix,
    pub class: usize,
}

fn cross_entropy(logits: [f64; NUM_CLASSES], class: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[class]
}

pub fn train(examples: &[Example], cfg: &TrainConfig) -> Result<(ToyClassifier, TrainLog)> {
    cfg.validate()?;
    let mut seen = [false; NUM_CLASSES];
    for e in examples {
        super::validate_class(e.class)?;
        seen[e.class] = true;
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::validation(
            "training set must contain both classes; refusing to train a single-class model",
        ));
    }

    let mut model = ToyClassifier::init(cfg.seed);
    let mut velocity = vec![0.0; PARAM_COUNT];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(cfg.seed, "train-shuffle", epoch as u64);
        order.shuffle(&mut r);
        let (mut loss_sum, mut correct) = (0.0, 0usize);

        for batch in order.chunks(cfg.batch_size) {
            let per_sample: Vec<Result<(Vec<f64>, f64, bool)>> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &examples[i];
                    let cache = model.forward_cached(&ex.input)?;
                    let mut grad = vec![0.0; PARAM_COUNT];
                    let mut dlogits = cache.probs;
                    dlogits[ex.class] -= 1.0;
                    model.backward(
                        &cache,
                        dlogits,
                        super::ReluRule::Gradient,
                        Some(&mut grad),
                        false,
                    );
                    let pred = usize::from(cache.probs[1] > cache.probs[0]);
                    Ok((
                        grad,
                        cross_entropy(cache.logits, ex.class),
                        pred == ex.class,
                    ))
                })
                .collect();
            // Reduce in batch order so results do not depend on scheduling.
            let mut grad = vec![0.0; PARAM_COUNT];
            let mut batch_loss = 0.0;
            for item in per_sample {
                let (g, loss, ok) = item?;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
                batch_loss += loss;
                correct += usize::from(ok);
            }
            let scale = 1.0 / batch.len() as f64;
            loss_sum += batch_loss;
            log.batch_losses.push(batch_loss * scale);

            let params = model.params_mut();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g * scale;
                    }
                }
                Optimizer::SgdMomentum => {
                    for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                        *v = cfg.momentum * *v + g * scale;
                        *p -= cfg.learning_rate * *v;
                    }
                }
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / examples.len() as f64,
            accuracy: correct as f64 / examples.len() as f64,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} accuracy {:.4}",
            stats.mean_loss,
            stats.accuracy
        );
        log.epochs.push(stats);
    }
    Ok((model, log))
}

/// Loads every example of `split` from a manifest.
pub fn load_examples(manifest: &LoadedManifest, split: Split) -> Result<Vec<Example>> {
    manifest
        .manifest
        .usable(Some(split))
        .map(|e| {
            Ok(Example {
                input: manifest.load_spectrogram(e)?.into_data(),
                class: e.label.class_index(),
            })
        })
        .collect()
}

/// Trains on the manifest's `train` split.
pub fn train_on_manifest(
    manifest: &LoadedManifest,
    cfg: &TrainConfig,
) -> Result<(ToyClassifier, TrainLog)> {
    train(&load_examples(manifest, Split::Train)?, cfg)
}

/// Fraction of examples whose argmax prediction matches the label.
pub fn accuracy(model: &ToyClassifier, examples: &[Example]) -> Result<f64> {
    let hits: Vec<bool> = examples
        .par_iter()
        .map(|e| {
            let p = model.forward(&e.input)?;
            Ok(usize::from(p[1] > p[0]) == e.class)
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / examples.len().max(1) as f64)
}
