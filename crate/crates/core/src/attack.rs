//! The honest-but-curious utility's occupancy detector.
//!
//! The utility sees raw meter readings, cuts them into fixed analysis
//! windows, summarizes each window with a handful of statistics and feeds
//! those to a small feed-forward network. A raw-sequence LSTM detector is
//! available as a second attacker for transferability probes.

use serde::{Deserialize, Serialize};

use crate::bytes::{len_u32, put_f64s, put_u32, Reader};
use crate::error::{invalid, Error, Result};
use crate::neural::{self, DenseNetwork, Model, ModelBytes, ModelKind, Sample, SequenceClassifier, TrainConfig};
use crate::seed;
use crate::timeseries::LoadProfile;

pub const FEATURE_COUNT: usize = 7;
pub const DEFAULT_ATTACK_WINDOW: usize = 60;
pub const HIDDEN_WIDTHS: [usize; 2] = [32, 16];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean_w: f64,
    pub std_w: f64,
    pub min_w: f64,
    pub max_w: f64,
    pub range_w: f64,
    pub sum_abs_diff_w: f64,
    pub onoff_events: u32,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.mean_w,
            self.std_w,
            self.min_w,
            self.max_w,
            self.range_w,
            self.sum_abs_diff_w,
            f64::from(self.onoff_events),
        ]
    }
}

pub fn extract_features(window: &[f64], onoff_threshold_w: f64) -> Result<FeatureVector> {
    let Some(&first) = window.first() else {
        return Err(invalid("cannot extract features from an empty window"));
    };
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let (min, max) = window
        .iter()
        .fold((first, first), |(lo, hi), r| (lo.min(*r), hi.max(*r)));
    let sum_abs_diff = window.windows(2).map(|p| (p[1] - p[0]).abs()).sum();
    let onoff_events = window
        .windows(2)
        .filter(|p| (p[0] > onoff_threshold_w) != (p[1] > onoff_threshold_w))
        .count() as u32;
    Ok(FeatureVector {
        mean_w: mean,
        std_w: var.sqrt(),
        min_w: min,
        max_w: max,
        range_w: max - min,
        sum_abs_diff_w: sum_abs_diff,
        onoff_events,
    })
}

/// Non-overlapping analysis windows of a profile, each labelled occupied
/// when at least half its samples are. A trailing partial window is dropped.
pub fn labelled_windows(profile: &LoadProfile, window_len: usize) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    if window_len == 0 {
        return Err(invalid("analysis window must be non-empty"));
    }
    let windows = profile
        .readings()
        .chunks_exact(window_len)
        .map(<[f64]>::to_vec)
        .collect();
    let labels = profile
        .occupancy()
        .chunks_exact(window_len)
        .map(|occ| 2 * occ.iter().filter(|o| **o).count() >= window_len)
        .collect();
    Ok((windows, labels))
}

/// Per-feature standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &[[f64; FEATURE_COUNT]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("cannot fit a scaler on no data"));
        }
        let n = rows.len() as f64;
        let means: Vec<f64> = (0..FEATURE_COUNT)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let stds = (0..FEATURE_COUNT)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
                // constant features pass through centred but unscaled
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { means, stds })
    }

    pub fn transform(&self, row: &[f64; FEATURE_COUNT]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub window_len: usize,
    pub onoff_threshold_w: f64,
    pub train: TrainConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            window_len: DEFAULT_ATTACK_WINDOW,
            onoff_threshold_w: crate::timeseries::GeneratorParams::default().onoff_threshold_w(),
            train: TrainConfig {
                learning_rate: 0.005,
                epochs: 15,
                batch_size: 64,
                ..TrainConfig::default()
            },
        }
    }
}

/// Anything that maps a raw watt window to an occupancy probability.
pub trait OccupancyDetector {
    fn probability(&self, window: &[f64]) -> Result<f64>;
}

/// Feature-based DNN detector: 7 features → 32 → 16 → 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackModel {
    pub scaler: FeatureScaler,
    pub network: DenseNetwork,
    pub onoff_threshold_w: f64,
}

impl OccupancyDetector for AttackModel {
    fn probability(&self, window: &[f64]) -> Result<f64> {
        let f = extract_features(window, self.onoff_threshold_w)?;
        self.network.predict(&self.scaler.transform(&f.to_array()))
    }
}

fn check_training_set(windows: &[Vec<f64>], labels: &[bool]) -> Result<()> {
    if windows.len() != labels.len() {
        return Err(invalid(format!("{} windows but {} labels", windows.len(), labels.len())));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 || positives == labels.len() {
        return Err(invalid("training data must contain both occupancy classes"));
    }
    Ok(())
}

pub fn train_attacker(windows: &[Vec<f64>], labels: &[bool], cfg: &AttackConfig) -> Result<AttackModel> {
    check_training_set(windows, labels)?;
    let rows = windows
        .iter()
        .map(|w| extract_features(w, cfg.onoff_threshold_w).map(|f| f.to_array()))
        .collect::<Result<Vec<_>>>()?;
    let scaler = FeatureScaler::fit(&rows)?;
    let samples: Vec<Sample> = rows
        .iter()
        .zip(labels)
        .map(|(r, l)| Sample::new(scaler.transform(r), *l))
        .collect();
    let mut rng = seed::rng(seed::derive_seed(cfg.train.seed, "attack-init", 0));
    let network = DenseNetwork::classifier(FEATURE_COUNT, &HIDDEN_WIDTHS, &mut rng);
    let network = neural::train(network, &samples, &cfg.train)?.model;
    Ok(AttackModel {
        scaler,
        network,
        onoff_threshold_w: cfg.onoff_threshold_w,
    })
}

impl ModelBytes for AttackModel {
    const KIND: ModelKind = ModelKind::FeatureAttacker;

    fn write_body(&self, out: &mut Vec<u8>) {
        put_u32(out, len_u32(self.scaler.means.len()));
        put_f64s(out, &self.scaler.means);
        put_f64s(out, &self.scaler.stds);
        put_f64s(out, &[self.onoff_threshold_w]);
        self.network.write_body(out);
    }

    fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.u32()? as usize;
        if n != FEATURE_COUNT {
            return Err(Error::Codec(format!("expected {FEATURE_COUNT} features, found {n}")));
        }
        let means = r.f64s(n)?;
        let stds = r.f64s(n)?;
        let onoff_threshold_w = r.f64()?;
        let network = DenseNetwork::read_body(r)?;
        if network.inputs() != n {
            return Err(Error::Codec("network input width does not match scaler".into()));
        }
        Ok(Self {
            scaler: FeatureScaler { means, stds },
            network,
            onoff_threshold_w,
        })
    }
}

/// Raw-sequence attacker: an LSTM over the scaled window.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceAttacker {
    pub classifier: SequenceClassifier,
    pub input_scale: f64,
}

impl OccupancyDetector for SequenceAttacker {
    fn probability(&self, window: &[f64]) -> Result<f64> {
        let scaled: Vec<f64> = window.iter().map(|w| w * self.input_scale).collect();
        self.classifier.classify(&scaled)
    }
}

pub fn train_sequence_attacker(
    windows: &[Vec<f64>],
    labels: &[bool],
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<SequenceAttacker> {
    check_training_set(windows, labels)?;
    let input_scale = cfg.input_scale.unwrap_or_else(|| {
        let peak = windows.iter().flatten().fold(0.0f64, |a, b| a.max(*b));
        if peak > 0.0 {
            1.0 / peak
        } else {
            1.0
        }
    });
    let samples: Vec<Sample> = windows
        .iter()
        .zip(labels)
        .map(|(w, l)| Sample::new(w.iter().map(|v| v * input_scale).collect(), *l))
        .collect();
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, "sequence-attack-init", 0));
    let classifier = SequenceClassifier::random(hidden, 1, &mut rng);
    let classifier = neural::train(classifier, &samples, cfg)?.model;
    Ok(SequenceAttacker {
        classifier,
        input_scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Metrics {
    /// Ratios with a zero denominator are defined as 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            tn,
        }
    }

    pub fn from_predictions(predicted: &[bool], labels: &[bool]) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(invalid("prediction and label counts differ"));
        }
        if labels.is_empty() {
            return Err(invalid("cannot score an empty test set"));
        }
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (p, y) in predicted.iter().zip(labels) {
            match (p, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        Ok(Self::from_counts(tp, fp, fn_, tn))
    }
}

pub fn evaluate<D: OccupancyDetector + ?Sized>(
    model: &D,
    windows: &[Vec<f64>],
    labels: &[bool],
    decision_threshold: f64,
) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(invalid("cannot evaluate on an empty test set"));
    }
    let predicted = windows
        .iter()
        .map(|w| model.probability(w).map(|p| p >= decision_threshold))
        .collect::<Result<Vec<_>>>()?;
    Metrics::from_predictions(&predicted, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{load_weights, save_weights};
    use proptest::prelude::*;

    #[test]
    fn feature_examples() {
        let f = extract_features(&[5.0, 5.0, 5.0, 5.0], 10.0).unwrap();
        assert_eq!(
            f,
            FeatureVector {
                mean_w: 5.0,
                std_w: 0.0,
                min_w: 5.0,
                max_w: 5.0,
                range_w: 0.0,
                sum_abs_diff_w: 0.0,
                onoff_events: 0
            }
        );
        let f = extract_features(&[0.0, 10.0], 5.0).unwrap();
        assert_eq!(f.sum_abs_diff_w, 10.0);
        assert_eq!(f.onoff_events, 1);
        let f = extract_features(&[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!((f.mean_w, f.range_w, f.sum_abs_diff_w), (2.0, 2.0, 2.0));
        assert!(extract_features(&[], 0.0).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = Metrics::from_counts(2, 1, 1, 6);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.accuracy - 0.8).abs() < 1e-15);

        let labels = [true, false, true, false];
        let perfect = Metrics::from_predictions(&labels, &labels).unwrap();
        assert_eq!((perfect.accuracy, perfect.f1), (1.0, 1.0));

        let all_pos = Metrics::from_predictions(&[true; 4], &labels).unwrap();
        assert_eq!((all_pos.accuracy, all_pos.recall), (0.5, 1.0));

        let none = Metrics::from_counts(0, 0, 0, 5);
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert!(Metrics::from_predictions(&[], &[]).is_err());
    }

    struct Oracle;
    impl OccupancyDetector for Oracle {
        fn probability(&self, window: &[f64]) -> Result<f64> {
            Ok(if window[0] > 0.5 { 1.0 } else { 0.0 })
        }
    }

    #[test]
    fn evaluate_thresholds_probabilities() {
        let windows = vec![vec![1.0], vec![0.0], vec![1.0]];
        let m = evaluate(&Oracle, &windows, &[true, false, false], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (1, 1, 0, 1));
        assert!(evaluate(&Oracle, &[], &[], 0.5).is_err());
    }

    fn toy_windows() -> (Vec<Vec<f64>>, Vec<bool>) {
        (0..200)
            .map(|k| {
                let occupied = k % 3 != 0;
                let level = if occupied { 400.0 } else { 120.0 };
                let w = (0..12).map(|i| level + ((i * 7 + k) % 5) as f64).collect();
                (w, occupied)
            })
            .unzip()
    }

    #[test]
    fn attacker_learns_separable_windows_and_round_trips() {
        let (w, l) = toy_windows();
        let cfg = AttackConfig {
            train: TrainConfig {
                epochs: 20,
                seed: 5,
                ..AttackConfig::default().train
            },
            ..AttackConfig::default()
        };
        let model = train_attacker(&w, &l, &cfg).unwrap();
        assert!(evaluate(&model, &w, &l, 0.5).unwrap().accuracy > 0.95);
        let again = train_attacker(&w, &l, &cfg).unwrap();
        assert_eq!(again, model);

        let bytes = save_weights(&model);
        let back: AttackModel = load_weights(&bytes).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn single_class_training_is_rejected() {
        let w = vec![vec![1.0; 4]; 3];
        assert!(train_attacker(&w, &[true; 3], &AttackConfig::default()).is_err());
        assert!(train_sequence_attacker(&w, &[false; 3], 4, &TrainConfig::default()).is_err());
    }

    #[test]
    fn sequence_attacker_learns_levels() {
        let (w, l) = toy_windows();
        let cfg = TrainConfig {
            epochs: 10,
            seed: 1,
            ..TrainConfig::default()
        };
        let model = train_sequence_attacker(&w, &l, 4, &cfg).unwrap();
        assert!(evaluate(&model, &w, &l, 0.5).unwrap().accuracy > 0.9);
    }

    #[test]
    fn window_labels_use_majority() {
        let p = LoadProfile::new(
            "h",
            1,
            vec![1.0; 9],
            vec![true, true, false, false, false, true, true, true, true],
        )
        .unwrap();
        let (w, l) = labelled_windows(&p, 4).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(l, vec![true, true]);
    }

    proptest! {
        #[test]
        fn metric_identities(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
            prop_assume!(tp + fp + fn_ + tn > 0);
            let m = Metrics::from_counts(tp, fp, fn_, tn);
            let total = (tp + fp + fn_ + tn) as f64;
            prop_assert!((m.accuracy - (tp + tn) as f64 / total).abs() < 1e-15);
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if m.precision + m.recall > 0.0 {
                let h = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                prop_assert!((m.f1 - h).abs() < 1e-15);
            } else {
                prop_assert_eq!(m.f1, 0.0);
            }
        }

        #[test]
        fn feature_invariants(window in proptest::collection::vec(0.0f64..3000.0, 1..80)) {
            let f = extract_features(&window, 135.0).unwrap();
            prop_assert!(f.std_w >= 0.0);
            prop_assert_eq!(f.range_w, f.max_w - f.min_w);
            prop_assert!(f.sum_abs_diff_w >= 0.0);
            prop_assert!(f.onoff_events as usize <= window.len().saturating_sub(1));
        }
    }
}
