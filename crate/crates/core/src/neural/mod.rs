//! A small f64 neural engine: dense layers and a single-layer LSTM sequence
//! classifier, both with exact backpropagation to parameters and inputs.
//!
//! Everything here is a binary classifier emitting one probability and
//! trained with binary cross-entropy.

mod codec;
mod dense;
mod lstm;
mod matrix;
mod train;

pub use codec::{load_weights, peek_kind, save_weights, ModelBytes, ModelKind};
pub(crate) use codec::read_dim;
pub use dense::{dense_forward, DenseLayer, DenseNetwork};
pub use lstm::{lstm_step, Gate, LstmCell, SequenceClassifier};
pub use matrix::Matrix;
pub use train::{train, Optimizer, Sample, TrainConfig, TrainOutcome};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy with the probability clamped away from 0 and 1.
pub fn bce_loss(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// d loss / d logit for a sigmoid output. Zero where the clamp is active,
/// matching the loss as actually computed.
pub(crate) fn bce_logit_grad(p: f64, label: bool) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    p - if label { 1.0 } else { 0.0 }
}

/// A trainable binary classifier whose gradients share its own shape.
pub trait Model: Clone {
    /// Occupancy probability for one input.
    fn predict(&self, input: &[f64]) -> Result<f64>;

    /// Loss at `label` and its gradient with respect to every parameter,
    /// laid out as a copy of the model.
    fn param_gradients(&self, input: &[f64], label: bool) -> Result<(f64, Self)>;

    /// Loss gradient with respect to each input component.
    fn input_gradient(&self, input: &[f64], label: bool) -> Result<Vec<f64>>;

    /// Parameter blocks in serialization order.
    fn params(&self) -> Vec<&[f64]>;

    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Same shape, every parameter zero.
    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for block in out.params_mut() {
            block.fill(0.0);
        }
        out
    }

    fn flat_params(&self) -> Vec<f64> {
        self.params().concat()
    }
}

pub(crate) fn uniform_init(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_values() {
        assert!((bce_loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.5, false) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(1.0 - 1e-12, true) - 1e-12).abs() < 1e-15);
        assert!((bce_loss(0.0, true) - 27.631021115928547).abs() < 1e-9);
        assert!(bce_loss(1.0, false).is_finite());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0).is_finite());
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn activation_codes_round_trip() {
        for a in [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
            assert_eq!(Activation::from_code(a.code()), Some(a));
        }
        assert_eq!(Activation::from_code(9), None);
    }
}
