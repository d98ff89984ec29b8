use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{invalid, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: bool,
}

impl Sample {
    pub fn new(input: Vec<f64>, label: bool) -> Self {
        Self { input, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Multiplier applied to raw watts before they reach a sequence model.
    /// `None` means 1 / (mean training reading).
    pub input_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 32,
            optimizer: Optimizer::adam(),
            seed: 0,
            input_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero rate is accepted: it is the "evaluate only" configuration.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(invalid(format!("learning rate {} is not usable", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if let Some(s) = self.input_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid("input scale must be positive"));
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(invalid("adam hyper-parameters out of range"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Mean per-sample loss of each epoch, measured while the epoch ran.
    pub loss_history: Vec<f64>,
}

/// Mini-batch training on binary cross-entropy.
///
/// The sample order of every epoch is a seeded shuffle, so a given
/// `(model, dataset, cfg)` always produces the same weights.
pub fn train<M: Model>(model: M, dataset: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    let mut model = model;
    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let n_params = model.param_count();
    let mut m1 = vec![0.0; n_params];
    let mut m2 = vec![0.0; n_params];
    let mut step_count = 0i32;
    let mut losses = vec![0.0; dataset.len()];
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = model.zeros_like();
            for &idx in batch {
                let sample = &dataset[idx];
                let (loss, grad) = model.param_gradients(&sample.input, sample.label)?;
                losses[idx] = loss;
                for (a, g) in acc.params_mut().into_iter().zip(grad.params()) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            step_count += 1;
            apply_update(&mut model, &acc, scale, cfg, step_count, &mut m1, &mut m2);
        }
        // summed in dataset order so the value does not depend on the shuffle
        history.push(losses.iter().sum::<f64>() / dataset.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

fn apply_update<M: Model>(
    model: &mut M,
    grad_sum: &M,
    scale: f64,
    cfg: &TrainConfig,
    step: i32,
    m1: &mut [f64],
    m2: &mut [f64],
) {
    let lr = cfg.learning_rate;
    if lr == 0.0 {
        return;
    }
    let grads = grad_sum.params();
    let mut k = 0;
    for (block, gblock) in model.params_mut().into_iter().zip(grads) {
        for (p, g) in block.iter_mut().zip(gblock) {
            let g = g * scale;
            match cfg.optimizer {
                super::Optimizer::Sgd => *p -= lr * g,
                super::Optimizer::Adam { beta1, beta2, eps } => {
                    m1[k] = beta1 * m1[k] + (1.0 - beta1) * g;
                    m2[k] = beta2 * m2[k] + (1.0 - beta2) * g * g;
                    let mhat = m1[k] / (1.0 - beta1.powi(step));
                    let vhat = m2[k] / (1.0 - beta2.powi(step));
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{DenseNetwork, SequenceClassifier};

    fn toy_sequences() -> Vec<Sample> {
        (0..40)
            .map(|k| {
                let label = k % 2 == 0;
                Sample::new(vec![if label { 1.0 } else { 0.0 }; 5], label)
            })
            .collect()
    }

    fn accuracy<M: Model>(m: &M, data: &[Sample]) -> f64 {
        let hits = data
            .iter()
            .filter(|s| (m.predict(&s.input).unwrap() >= 0.5) == s.label)
            .count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn separable_sequences_are_learned() {
        let data = toy_sequences();
        let model = SequenceClassifier::random(4, 1, &mut seed::rng(11));
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(model, &data, &cfg).unwrap();
        assert_eq!(out.loss_history.len(), 50);
        assert!(accuracy(&out.model, &data) >= 0.95);
        assert!(out.loss_history.last().unwrap() < out.loss_history.first().unwrap());
    }

    #[test]
    fn plain_sgd_also_descends() {
        let data = toy_sequences();
        let model = DenseNetwork::classifier(5, &[6], &mut seed::rng(2));
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 0.5,
            optimizer: Optimizer::Sgd,
            ..TrainConfig::default()
        };
        let out = train(model, &data, &cfg).unwrap();
        assert!(out.loss_history.last().unwrap() < out.loss_history.first().unwrap());
    }

    #[test]
    fn zero_learning_rate_freezes_model() {
        let data = toy_sequences();
        let model = SequenceClassifier::random(4, 1, &mut seed::rng(11));
        let cfg = TrainConfig {
            epochs: 4,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &data, &cfg).unwrap();
        assert_eq!(out.model, model);
        assert!(out.loss_history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data = toy_sequences();
        let model = SequenceClassifier::random(3, 1, &mut seed::rng(1));
        let cfg = TrainConfig {
            epochs: 3,
            seed: 99,
            ..TrainConfig::default()
        };
        let a = train(model.clone(), &data, &cfg).unwrap();
        let b = train(model, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn rejects_empty_data_and_bad_config() {
        let model = SequenceClassifier::zeros(2, 1);
        assert!(train(model.clone(), &[], &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(train(model.clone(), &toy_sequences(), &bad).is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(model, &toy_sequences(), &bad).is_err());
    }
}
