//! Backpropagation checked against central finite differences.

use amlb::neural::{bce_loss, DenseNetwork, Model, SequenceClassifier};
use amlb::seed;
use rand::Rng;

const STEP: f64 = 1e-4;

fn loss<M: Model>(m: &M, x: &[f64], y: bool) -> f64 {
    bce_loss(m.predict(x).unwrap(), y)
}

/// Central differences over every parameter, independent of the backward pass.
fn numeric_param_grad<M: Model>(m: &M, x: &[f64], y: bool) -> Vec<f64> {
    let n = m.param_count();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut plus = m.clone();
        let mut minus = m.clone();
        nudge(&mut plus, k, STEP);
        nudge(&mut minus, k, -STEP);
        out.push((loss(&plus, x, y) - loss(&minus, x, y)) / (2.0 * STEP));
    }
    out
}

fn nudge<M: Model>(m: &mut M, mut k: usize, by: f64) {
    for block in m.params_mut() {
        if k < block.len() {
            block[k] += by;
            return;
        }
        k -= block.len();
    }
    unreachable!("parameter index out of range");
}

fn numeric_input_grad<M: Model>(m: &M, x: &[f64], y: bool) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[k] += STEP;
            b[k] -= STEP;
            (loss(m, &a, y) - loss(m, &b, y)) / (2.0 * STEP)
        })
        .collect()
}

/// Largest elementwise relative error; components where both sides are
/// below 1e-7 in magnitude are compared on that absolute scale instead.
fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-7))
        .fold(0.0, f64::max)
}

fn random_lstm(rng: &mut impl Rng, hidden: usize) -> SequenceClassifier {
    let mut m = SequenceClassifier::random(hidden, 1, rng);
    // widen the default ±0.1 init so gradients are not all tiny
    for block in m.params_mut() {
        for p in block.iter_mut() {
            *p *= 8.0;
        }
    }
    m
}

#[test]
fn lstm_parameter_gradients_match_finite_differences() {
    let mut rng = seed::rng(2024);
    let m = random_lstm(&mut rng, 4);
    let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for y in [false, true] {
        let (_, g) = m.param_gradients(&x, y).unwrap();
        let err = max_rel_err(&g.flat_params(), &numeric_param_grad(&m, &x, y));
        assert!(err < 1e-4, "max relative error {err}");
    }
}

#[test]
fn lstm_input_gradients_match_finite_differences() {
    let mut rng = seed::rng(7);
    for t in [2usize, 6, 10] {
        let m = random_lstm(&mut rng, 5);
        let x: Vec<f64> = (0..t).map(|_| rng.gen_range(0.0..1.0)).collect();
        let g = m.input_gradient(&x, true).unwrap();
        let err = max_rel_err(&g, &numeric_input_grad(&m, &x, true));
        assert!(err < 1e-4, "T={t}: max relative error {err}");
    }
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut rng = seed::rng(99);
    let net = DenseNetwork::classifier(7, &[32, 16], &mut rng);
    let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (_, g) = net.param_gradients(&x, true).unwrap();
    assert!(max_rel_err(&g.flat_params(), &numeric_param_grad(&net, &x, true)) < 1e-4);
    let gi = net.input_gradient(&x, false).unwrap();
    assert!(max_rel_err(&gi, &numeric_input_grad(&net, &x, false)) < 1e-4);
}

#[test]
fn duplicated_sample_doubles_gradient() {
    let mut rng = seed::rng(3);
    let m = random_lstm(&mut rng, 3);
    let x = [0.2, 0.9, 0.4];
    let (l, g) = m.param_gradients(&x, false).unwrap();
    let mut twice = g.clone();
    for (t, one) in twice.params_mut().into_iter().zip(g.params()) {
        for (a, b) in t.iter_mut().zip(one) {
            *a += b;
        }
    }
    for (a, b) in twice.flat_params().iter().zip(g.flat_params()) {
        assert_eq!(*a, 2.0 * b);
    }
    assert_eq!(l, loss(&m, &x, false));
}

#[test]
fn fuzzed_inputs_never_produce_non_finite_outputs() {
    let mut rng = seed::rng(11);
    for _ in 0..200 {
        let h = rng.gen_range(1..=8);
        let t = rng.gen_range(1..=20);
        let m = random_lstm(&mut rng, h);
        let x: Vec<f64> = (0..t).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let p = m.classify(&x).unwrap();
        assert!(p.is_finite() && (0.0..=1.0).contains(&p));
        assert!(m.input_gradient(&x, true).unwrap().iter().all(|v| v.is_finite()));
    }
}
