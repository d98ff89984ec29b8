use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bce_logit_grad, bce_loss, sigmoid, Activation, DenseLayer, Matrix, Model};
use crate::error::{invalid, Result};

/// LSTM gates in storage and serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];
}

/// One LSTM layer: per gate an input matrix `w` (H×D), a recurrent matrix
/// `u` (H×H) and a bias (H), indexed by [`Gate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w: [Matrix; 4],
    pub u: [Matrix; 4],
    pub b: [Vec<f64>; 4],
}

struct StepTrace {
    c: Vec<f64>,
    h: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Matrix::zeros(hidden, input)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    pub fn random(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let mut cell = Self::zeros(hidden, input);
        for g in 0..4 {
            cell.w[g] = Matrix::random(hidden, input, rng);
            cell.u[g] = Matrix::random(hidden, hidden, rng);
            cell.b[g] = super::uniform_init(rng, hidden);
        }
        cell
    }

    pub fn from_parts(w: [Matrix; 4], u: [Matrix; 4], b: [Vec<f64>; 4]) -> Result<Self> {
        let hidden = b[0].len();
        let input = w[0].cols();
        for g in 0..4 {
            if w[g].rows() != hidden
                || w[g].cols() != input
                || u[g].rows() != hidden
                || u[g].cols() != hidden
                || b[g].len() != hidden
            {
                return Err(invalid("LSTM gate shapes disagree"));
            }
        }
        Ok(Self { w, u, b })
    }

    pub fn hidden(&self) -> usize {
        self.b[0].len()
    }

    pub fn input(&self) -> usize {
        self.w[0].cols()
    }

    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let hd = self.hidden();
        if x.len() != self.input() || h.len() != hd || c.len() != hd {
            return Err(invalid(format!(
                "lstm_step expects x:{}, h:{hd}, c:{hd}; got x:{}, h:{}, c:{}",
                self.input(),
                x.len(),
                h.len(),
                c.len()
            )));
        }
        let t = self.step_trace(x, h, c);
        Ok((t.h, t.c))
    }

    fn step_trace(&self, x: &[f64], h: &[f64], c: &[f64]) -> StepTrace {
        let gates: [Vec<f64>; 4] = std::array::from_fn(|g| {
            let mut z = self.b[g].clone();
            self.w[g].mul_vec_add(x, &mut z);
            self.u[g].mul_vec_add(h, &mut z);
            if g == Gate::Candidate as usize {
                z.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            z
        });
        let [i, f, o, g] = &gates;
        let c_new: Vec<f64> = (0..c.len()).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let h_new = (0..c.len()).map(|k| o[k] * c_new[k].tanh()).collect();
        StepTrace { c: c_new, h: h_new }
    }
}

/// `(h', c')` after one step of the gate equations.
pub fn lstm_step(cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    cell.step(x, h, c)
}

/// LSTM over a window followed by a sigmoid head on the final hidden state.
///
/// A window is the flattened sequence `x_1 .. x_T`, each of length D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceClassifier {
    pub cell: LstmCell,
    pub head: DenseLayer,
}

impl SequenceClassifier {
    pub fn new(cell: LstmCell, head: DenseLayer) -> Result<Self> {
        if head.inputs() != cell.hidden() || head.outputs() != 1 || head.activation != Activation::Sigmoid {
            return Err(invalid("head must map the hidden state to one sigmoid unit"));
        }
        Ok(Self { cell, head })
    }

    pub fn random(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let cell = LstmCell::random(hidden, input, rng);
        let head = DenseLayer::random(hidden, 1, Activation::Sigmoid, rng);
        Self { cell, head }
    }

    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            cell: LstmCell::zeros(hidden, input),
            head: DenseLayer {
                weights: Matrix::zeros(1, hidden),
                biases: vec![0.0],
                activation: Activation::Sigmoid,
            },
        }
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden()
    }

    pub fn input(&self) -> usize {
        self.cell.input()
    }

    fn check_window(&self, window: &[f64]) -> Result<usize> {
        let d = self.input();
        if window.is_empty() || window.len() % d != 0 {
            return Err(invalid(format!(
                "window of {} values is not a non-empty sequence of {d}-vectors",
                window.len()
            )));
        }
        Ok(window.len() / d)
    }

    pub fn classify(&self, window: &[f64]) -> Result<f64> {
        self.check_window(window)?;
        let hd = self.hidden();
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        for x in window.chunks_exact(self.input()) {
            let t = self.cell.step_trace(x, &h, &c);
            h = t.h;
            c = t.c;
        }
        Ok(self.head.forward(&h)?[0])
    }

    /// Backpropagation through the whole window.
    ///
    /// Works on flat per-step buffers: `acts[t*4H + g*H + k]` holds gate `g`
    /// of unit `k` at step `t` after its nonlinearity.
    fn backward(&self, window: &[f64], label: bool, want_params: bool) -> Result<(f64, Option<Self>, Vec<f64>)> {
        let steps = self.check_window(window)?;
        let (hd, d) = (self.hidden(), self.input());
        let gate_stride = 4 * hd;

        let mut acts = vec![0.0; steps * gate_stride];
        let mut hs = vec![0.0; (steps + 1) * hd];
        let mut cs = vec![0.0; (steps + 1) * hd];
        let mut tanh_c = vec![0.0; steps * hd];
        for t in 0..steps {
            let x = &window[t * d..(t + 1) * d];
            let (h_prev, h_rest) = hs[t * hd..].split_at_mut(hd);
            let a = &mut acts[t * gate_stride..(t + 1) * gate_stride];
            for g in 0..4 {
                let z = &mut a[g * hd..(g + 1) * hd];
                z.copy_from_slice(&self.cell.b[g]);
                self.cell.w[g].mul_vec_add(x, z);
                self.cell.u[g].mul_vec_add(h_prev, z);
                if g == Gate::Candidate as usize {
                    z.iter_mut().for_each(|v| *v = v.tanh());
                } else {
                    z.iter_mut().for_each(|v| *v = sigmoid(*v));
                }
            }
            let (c_prev, c_rest) = cs[t * hd..].split_at_mut(hd);
            for k in 0..hd {
                let c = a[hd + k] * c_prev[k] + a[k] * a[3 * hd + k];
                c_rest[k] = c;
                let tc = c.tanh();
                tanh_c[t * hd + k] = tc;
                h_rest[k] = a[2 * hd + k] * tc;
            }
        }
        let h_last = &hs[steps * hd..];
        let p = self.head.forward(h_last)?[0];
        let loss = bce_loss(p, label);
        let dz = bce_logit_grad(p, label);

        let mut grads = want_params.then(|| self.zeros_like());
        if let Some(g) = grads.as_mut() {
            g.head.weights.add_outer(&[dz], h_last);
            g.head.biases[0] += dz;
        }
        let mut dh: Vec<f64> = self.head.weights.as_slice().iter().map(|w| w * dz).collect();
        let mut dh_prev = vec![0.0; hd];
        let mut dc = vec![0.0; hd];
        let mut dx = vec![0.0; window.len()];
        let mut dpre = vec![0.0; gate_stride];

        for t in (0..steps).rev() {
            let a = &acts[t * gate_stride..(t + 1) * gate_stride];
            let c_prev = &cs[t * hd..(t + 1) * hd];
            let tc = &tanh_c[t * hd..(t + 1) * hd];
            for k in 0..hd {
                let (i, f, o, g) = (a[k], a[hd + k], a[2 * hd + k], a[3 * hd + k]);
                let d_o = dh[k] * tc[k];
                dc[k] += dh[k] * o * (1.0 - tc[k] * tc[k]);
                dpre[k] = dc[k] * g * i * (1.0 - i);
                dpre[hd + k] = dc[k] * c_prev[k] * f * (1.0 - f);
                dpre[2 * hd + k] = d_o * o * (1.0 - o);
                dpre[3 * hd + k] = dc[k] * i * (1.0 - g * g);
                dc[k] *= f;
            }
            let x_t = &window[t * d..(t + 1) * d];
            let h_prev = &hs[t * hd..(t + 1) * hd];
            let dx_t = &mut dx[t * d..(t + 1) * d];
            dh_prev.fill(0.0);
            for gi in 0..4 {
                let dp = &dpre[gi * hd..(gi + 1) * hd];
                self.cell.w[gi].t_mul_vec_add(dp, dx_t);
                self.cell.u[gi].t_mul_vec_add(dp, &mut dh_prev);
                if let Some(gr) = grads.as_mut() {
                    gr.cell.w[gi].add_outer(dp, x_t);
                    gr.cell.u[gi].add_outer(dp, h_prev);
                    for (b, v) in gr.cell.b[gi].iter_mut().zip(dp) {
                        *b += v;
                    }
                }
            }
            std::mem::swap(&mut dh, &mut dh_prev);
        }
        Ok((loss, grads, dx))
    }
}

impl Model for SequenceClassifier {
    fn predict(&self, input: &[f64]) -> Result<f64> {
        self.classify(input)
    }

    fn param_gradients(&self, input: &[f64], label: bool) -> Result<(f64, Self)> {
        let (loss, grads, _) = self.backward(input, label, true)?;
        Ok((loss, grads.expect("requested")))
    }

    fn input_gradient(&self, input: &[f64], label: bool) -> Result<Vec<f64>> {
        Ok(self.backward(input, label, false)?.2)
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(14);
        for g in 0..4 {
            out.push(self.cell.w[g].as_slice());
            out.push(self.cell.u[g].as_slice());
            out.push(self.cell.b[g].as_slice());
        }
        out.push(self.head.weights.as_slice());
        out.push(self.head.biases.as_slice());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let LstmCell { w, u, b } = &mut self.cell;
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(14);
        for ((w, u), b) in w.iter_mut().zip(u.iter_mut()).zip(b.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(u.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out.push(self.head.weights.as_mut_slice());
        out.push(self.head.biases.as_mut_slice());
        out
    }
}
