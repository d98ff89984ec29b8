use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bce_logit_grad, bce_loss, Activation, Matrix, Model};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(invalid(format!(
                "{} biases for {} outputs",
                biases.len(),
                weights.rows()
            )));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn random(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Self {
            weights: Matrix::random(outputs, inputs, rng),
            biases: super::uniform_init(rng, outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.pre_activation(x)?;
        Ok(z.into_iter().map(|z| self.activation.apply(z)).collect())
    }

    pub(crate) fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs() {
            return Err(invalid(format!(
                "layer expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        let mut z = self.biases.clone();
        self.weights.mul_vec_add(x, &mut z);
        Ok(z)
    }
}

/// `activation(W·x + b)`
pub fn dense_forward(layer: &DenseLayer, x: &[f64]) -> Result<Vec<f64>> {
    layer.forward(x)
}

/// Feed-forward classifier: a stack of dense layers ending in one sigmoid unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
}

impl DenseNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(invalid("network needs at least one layer"));
        };
        if last.outputs() != 1 || last.activation != Activation::Sigmoid {
            return Err(invalid("final layer must be a single sigmoid unit"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(invalid(format!(
                    "layer emits {} values but next layer takes {}",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random network with ReLU hidden layers of the given widths.
    pub fn classifier(inputs: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = inputs;
        for &width in hidden {
            layers.push(DenseLayer::random(fan_in, width, Activation::Relu, rng));
            fan_in = width;
        }
        layers.push(DenseLayer::random(fan_in, 1, Activation::Sigmoid, rng));
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Pre-activations and activations of every layer; `acts[0]` is the input.
    fn forward_trace(&self, x: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let z = layer.pre_activation(acts.last().expect("non-empty"))?;
            acts.push(z.iter().map(|z| layer.activation.apply(*z)).collect());
            pre.push(z);
        }
        Ok((pre, acts))
    }

    /// Returns the loss, the parameter gradient and the input gradient.
    fn backward(&self, x: &[f64], label: bool) -> Result<(f64, Self, Vec<f64>)> {
        let (pre, acts) = self.forward_trace(x)?;
        let p = acts.last().expect("non-empty")[0];
        let loss = bce_loss(p, label);
        let mut grads = self.zeros_like();
        let mut delta = vec![bce_logit_grad(p, label)];
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let g = &mut grads.layers[k];
            g.weights.add_outer(&delta, &acts[k]);
            for (b, d) in g.biases.iter_mut().zip(&delta) {
                *b += d;
            }
            let mut upstream = vec![0.0; layer.inputs()];
            layer.weights.t_mul_vec_add(&delta, &mut upstream);
            if k > 0 {
                let below = &self.layers[k - 1];
                for ((u, z), a) in upstream.iter_mut().zip(&pre[k - 1]).zip(&acts[k]) {
                    *u *= below.activation.derivative(*z, *a);
                }
            }
            delta = upstream;
        }
        Ok((loss, grads, delta))
    }
}

impl Model for DenseNetwork {
    fn predict(&self, input: &[f64]) -> Result<f64> {
        let mut a = input.to_vec();
        for layer in &self.layers {
            a = layer.forward(&a)?;
        }
        Ok(a[0])
    }

    fn param_gradients(&self, input: &[f64], label: bool) -> Result<(f64, Self)> {
        self.backward(input, label).map(|(l, g, _)| (l, g))
    }

    fn input_gradient(&self, input: &[f64], label: bool) -> Result<Vec<f64>> {
        self.backward(input, label).map(|(_, _, dx)| dx)
    }

    fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
            .collect()
    }
}
