//! Meter-side defense: billing-neutral noise crafted against a local LSTM
//! surrogate of the (unknown) occupancy detector.
//!
//! Noise lives in the set of perturbations that
//! * sum to zero over every complete billing window,
//! * keep each reading within `epsilon × mean power` of the original,
//! * never make a reading negative.
//!
//! Inside that set, [`perturb`] runs projected gradient ascent on the
//! surrogate's loss at the household's true occupancy.

use serde::{Deserialize, Serialize};

use crate::bytes::{len_u32, put_f64s, put_u32, Reader};
use crate::error::{invalid, Error, Result};
use crate::neural::{self, read_dim, Model, ModelBytes, ModelKind, Sample, SequenceClassifier, TrainConfig};
use crate::seed;
use crate::timeseries::{check_window_len, compute_bill, LoadProfile, Tariff};

/// Rounds of alternating projection before a window's noise is halved.
const PROJECTION_ROUNDS: usize = 50;
/// Halvings before a window gives up and carries no noise at all.
const MAX_HALVINGS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivacyLevel {
    Off,
    Low,
    Medium,
    High,
}

impl PrivacyLevel {
    pub const ALL: [PrivacyLevel; 4] = [
        PrivacyLevel::Off,
        PrivacyLevel::Low,
        PrivacyLevel::Medium,
        PrivacyLevel::High,
    ];

    /// L∞ noise bound relative to the stream's mean power.
    pub fn epsilon(self) -> f64 {
        match self {
            PrivacyLevel::Off => 0.0,
            PrivacyLevel::Low => 0.05,
            PrivacyLevel::Medium => 0.15,
            PrivacyLevel::High => 0.30,
        }
    }

    /// Gradient iterations.
    pub fn steps(self) -> usize {
        match self {
            PrivacyLevel::Off => 0,
            PrivacyLevel::Low => 5,
            PrivacyLevel::Medium => 10,
            PrivacyLevel::High => 20,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrivacyLevel::Off => "off",
            PrivacyLevel::Low => "low",
            PrivacyLevel::Medium => "medium",
            PrivacyLevel::High => "high",
        }
    }
}

impl std::str::FromStr for PrivacyLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PrivacyLevel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| invalid(format!("unknown privacy level `{s}` (off, low, medium, high)")))
    }
}

impl std::fmt::Display for PrivacyLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The defender's local occupancy model over short context windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub classifier: SequenceClassifier,
    /// Watts → model input multiplier.
    pub input_scale: f64,
    /// Samples per context window.
    pub context_len: usize,
    trained: bool,
}

impl SurrogateModel {
    /// A randomly initialised model that [`perturb`] refuses to use.
    pub fn untrained(hidden: usize, context_len: usize, input_scale: f64, seed: u64) -> Self {
        Self {
            classifier: SequenceClassifier::random(hidden, 1, &mut seed::rng(seed)),
            input_scale,
            context_len,
            trained: false,
        }
    }

    /// Wraps an already-fitted classifier (e.g. one received from the ledger).
    pub fn from_trained(classifier: SequenceClassifier, input_scale: f64, context_len: usize) -> Self {
        Self {
            classifier,
            input_scale,
            context_len,
            trained: true,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn probability(&self, window_w: &[f64]) -> Result<f64> {
        self.classifier.classify(&self.scale(window_w))
    }

    fn scale(&self, window_w: &[f64]) -> Vec<f64> {
        window_w.iter().map(|w| w * self.input_scale).collect()
    }

    /// Held-out accuracy on a profile's context windows.
    pub fn accuracy(&self, profile: &LoadProfile) -> Result<f64> {
        let samples = context_samples(profile, self.context_len, self.input_scale)?;
        if samples.is_empty() {
            return Err(invalid("profile shorter than one context window"));
        }
        let mut hits = 0usize;
        for s in &samples {
            if (self.classifier.classify(&s.input)? >= 0.5) == s.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    }
}

impl ModelBytes for SurrogateModel {
    const KIND: ModelKind = ModelKind::Surrogate;

    fn write_body(&self, out: &mut Vec<u8>) {
        put_u32(out, len_u32(self.context_len));
        put_f64s(out, &[self.input_scale]);
        self.classifier.write_body(out);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let context_len = read_dim(r, "context length")?;
        let input_scale = r.f64()?;
        if !(input_scale.is_finite() && input_scale > 0.0) {
            return Err(Error::Codec(format!("bad input scale {input_scale}")));
        }
        let classifier = SequenceClassifier::read_body(r)?;
        Ok(Self::from_trained(classifier, input_scale, context_len))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub hidden: usize,
    pub context_len: usize,
    pub train: TrainConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            context_len: 30,
            train: TrainConfig {
                learning_rate: 0.01,
                epochs: 3,
                batch_size: 32,
                ..TrainConfig::default()
            },
        }
    }
}

/// Scaled context windows labelled by majority occupancy.
pub fn context_samples(profile: &LoadProfile, context_len: usize, input_scale: f64) -> Result<Vec<Sample>> {
    if context_len == 0 {
        return Err(invalid("context length must be positive"));
    }
    Ok(profile
        .readings()
        .chunks_exact(context_len)
        .zip(profile.occupancy().chunks_exact(context_len))
        .map(|(r, o)| {
            let label = 2 * o.iter().filter(|x| **x).count() >= context_len;
            Sample::new(r.iter().map(|w| w * input_scale).collect(), label)
        })
        .collect())
}

/// 1 / mean reading, or 1 for an all-zero history.
pub fn default_input_scale<'a>(readings: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (sum, n) = readings.into_iter().fold((0.0, 0usize), |(s, n), w| (s + w, n + 1));
    if sum > 0.0 {
        n as f64 / sum
    } else {
        1.0
    }
}

/// Fits the surrogate on the household's own labelled history, optionally
/// starting from a published population model (whose input scale is kept).
pub fn train_surrogate(
    history: &LoadProfile,
    cfg: &SurrogateConfig,
    warm_start: Option<&SurrogateModel>,
) -> Result<SurrogateModel> {
    let occupied = history.occupancy().iter().filter(|o| **o).count();
    if occupied == 0 || occupied == history.len() {
        return Err(invalid("surrogate history must contain both occupancy classes"));
    }
    let (init, input_scale, context_len) = match warm_start {
        Some(base) => (base.classifier.clone(), base.input_scale, base.context_len),
        None => {
            let scale = cfg
                .train
                .input_scale
                .unwrap_or_else(|| default_input_scale(history.readings()));
            let mut rng = seed::rng(seed::derive_seed(cfg.train.seed, "surrogate-init", 0));
            (SequenceClassifier::random(cfg.hidden, 1, &mut rng), scale, cfg.context_len)
        }
    };
    let samples = context_samples(history, context_len, input_scale)?;
    let outcome = neural::train(init, &samples, &cfg.train)?;
    Ok(SurrogateModel::from_trained(outcome.model, input_scale, context_len))
}

/// Subtracts each complete window's mean; the residual tail is copied.
pub fn zero_sum_project(noise: &[f64], window_len: usize) -> Result<Vec<f64>> {
    check_window_len(window_len)?;
    let mut out = noise.to_vec();
    for w in out.chunks_exact_mut(window_len) {
        let mean = w.iter().sum::<f64>() / window_len as f64;
        w.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedStream {
    pub readings: Vec<f64>,
    /// `(original sum, perturbed sum)` for every complete billing window.
    pub per_window_delta: Vec<(f64, f64)>,
    /// Absolute per-sample noise bound in watts.
    pub noise_bound_w: f64,
    pub window_len: usize,
}

impl PerturbedStream {
    pub fn max_window_delta(&self) -> f64 {
        self.per_window_delta
            .iter()
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Re-checks the three stream invariants against `original`, returning
    /// a description of the first violation.
    pub fn check_invariants(&self, original: &[f64]) -> std::result::Result<(), String> {
        if self.readings.len() != original.len() {
            return Err(format!("length {} != {}", self.readings.len(), original.len()));
        }
        let complete = original.len() / self.window_len * self.window_len;
        if let Some(i) = self.readings.iter().position(|r| !(*r >= 0.0)) {
            return Err(format!("reading {i} is negative ({})", self.readings[i]));
        }
        if self.readings[complete..] != original[complete..] {
            return Err("residual tail was modified".into());
        }
        let slack = 1e-9 * self.noise_bound_w.max(1.0);
        for (t, (a, b)) in original[..complete].iter().zip(&self.readings).enumerate() {
            if (a - b).abs() > self.noise_bound_w + slack {
                return Err(format!(
                    "sample {t} moved by {} W, bound {} W",
                    (a - b).abs(),
                    self.noise_bound_w
                ));
            }
        }
        for (k, (a, b)) in original[..complete]
            .chunks_exact(self.window_len)
            .zip(self.readings.chunks_exact(self.window_len))
            .enumerate()
        {
            let before: f64 = a.iter().sum();
            let after: f64 = b.iter().sum();
            if (before - after).abs() > 1e-9 * before.abs().max(1.0) {
                return Err(format!("window {k} sum changed from {before} to {after}"));
            }
        }
        Ok(())
    }
}

/// Projected gradient ascent on the surrogate's loss at the true label.
///
/// The stream is processed in context windows of whole billing windows.
/// Each step moves every billing window by `epsilon·mean/steps` along its
/// zero-sum gradient component (scaled so its largest entry has that size),
/// then restores feasibility by alternating projection.
pub fn perturb(
    surrogate: &SurrogateModel,
    readings: &[f64],
    occupancy_hint: &[bool],
    level: PrivacyLevel,
    window_len: usize,
) -> Result<PerturbedStream> {
    check_window_len(window_len)?;
    if !surrogate.is_trained() {
        return Err(Error::State("surrogate has not been trained".into()));
    }
    if occupancy_hint.len() != readings.len() {
        return Err(invalid("occupancy hint length differs from readings"));
    }
    if let Some(i) = readings.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Domain(format!("reading {i} is not a non-negative number")));
    }

    let mean_power = crate::timeseries::mean(readings);
    let bound = level.epsilon() * mean_power;
    let steps = level.steps();
    let complete = readings.len() / window_len * window_len;
    let mut noise = vec![0.0; readings.len()];

    if bound > 0.0 && steps > 0 {
        let alpha = bound / steps as f64;
        let lower: Vec<f64> = readings.iter().map(|r| (-bound).max(-r)).collect();
        let context = (surrogate.context_len / window_len).max(1) * window_len;
        let mut start = 0;
        while start < complete {
            let end = (start + context).min(complete);
            let hint = &occupancy_hint[start..end];
            let label = 2 * hint.iter().filter(|o| **o).count() >= hint.len();
            ascend_chunk(
                surrogate,
                &readings[start..end],
                &mut noise[start..end],
                &lower[start..end],
                bound,
                label,
                steps,
                alpha,
                window_len,
            )?;
            start = end;
        }
    }

    let mut out = readings.to_vec();
    for (o, n) in out[..complete].iter_mut().zip(&noise) {
        *o = (*o + n).max(0.0);
    }
    let per_window_delta = readings[..complete]
        .chunks_exact(window_len)
        .zip(out.chunks_exact(window_len))
        .map(|(a, b)| (a.iter().sum(), b.iter().sum()))
        .collect();
    Ok(PerturbedStream {
        readings: out,
        per_window_delta,
        noise_bound_w: bound,
        window_len,
    })
}

#[allow(clippy::too_many_arguments)]
fn ascend_chunk(
    surrogate: &SurrogateModel,
    readings: &[f64],
    noise: &mut [f64],
    lower: &[f64],
    upper: f64,
    label: bool,
    steps: usize,
    alpha: f64,
    window_len: usize,
) -> Result<()> {
    let mut input = vec![0.0; readings.len()];
    for _ in 0..steps {
        for ((x, r), n) in input.iter_mut().zip(readings).zip(noise.iter()) {
            *x = (r + n) * surrogate.input_scale;
        }
        let grad = surrogate.classifier.input_gradient(&input, label)?;
        let grad = zero_sum_project(&grad, window_len)?;
        for (n, g) in noise.chunks_exact_mut(window_len).zip(grad.chunks_exact(window_len)) {
            let peak = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if peak > 0.0 {
                for (n, g) in n.iter_mut().zip(g) {
                    *n += alpha * g / peak;
                }
            }
        }
        for ((n, lo), r) in noise
            .chunks_exact_mut(window_len)
            .zip(lower.chunks_exact(window_len))
            .zip(readings.chunks_exact(window_len))
        {
            project_window(n, lo, upper, r.iter().sum());
        }
    }
    Ok(())
}

/// Makes `noise` sum to ~0 while staying inside `[lower, upper]`.
///
/// Zero is always feasible (`lower <= 0 <= upper`), so halving the noise
/// eventually succeeds; after [`MAX_HALVINGS`] the window is zeroed outright.
fn project_window(noise: &mut [f64], lower: &[f64], upper: f64, window_sum: f64) {
    // all readings zero: the only feasible noise is zero
    if lower.iter().all(|lo| *lo == 0.0) {
        noise.fill(0.0);
        return;
    }
    let tol = 1e-10 * window_sum.abs().max(1.0);
    for _ in 0..MAX_HALVINGS {
        for _ in 0..PROJECTION_ROUNDS {
            let mean = noise.iter().sum::<f64>() / noise.len() as f64;
            for (n, lo) in noise.iter_mut().zip(lower) {
                *n = (*n - mean).clamp(*lo, upper);
            }
            if noise.iter().sum::<f64>().abs() <= tol {
                return;
            }
        }
        noise.iter_mut().for_each(|n| *n *= 0.5);
    }
    noise.fill(0.0);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BillingReport {
    pub bill_before: f64,
    pub bill_after: f64,
    pub relative_delta: f64,
    pub max_window_delta: f64,
}

pub fn verify_billing(original: &LoadProfile, perturbed: &PerturbedStream, tariff: &Tariff) -> Result<BillingReport> {
    if original.len() != perturbed.readings.len() {
        return Err(invalid(format!(
            "original has {} samples, perturbed {}",
            original.len(),
            perturbed.readings.len()
        )));
    }
    let bill_before = compute_bill(original, tariff)?;
    let bill_after = compute_bill(&original.with_readings(perturbed.readings.clone())?, tariff)?;
    let relative_delta = if bill_before == 0.0 {
        bill_after.abs()
    } else {
        (bill_after - bill_before).abs() / bill_before.abs()
    };
    Ok(BillingReport {
        bill_before,
        bill_after,
        relative_delta,
        max_window_delta: perturbed.max_window_delta(),
    })
}
