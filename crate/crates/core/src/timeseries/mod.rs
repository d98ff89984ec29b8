//! Household consumption series: the [`LoadProfile`] value type, billing
//! windows, tariffs, a synthetic generator and CSV ingest/export.

mod csv;
mod generator;

pub use self::csv::{export_csv, export_csv_many, ingest_csv, read_csv, write_csv};
pub use self::generator::{generate_profile, Appliance, GeneratorParams};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Billing window used when nothing else is configured: two samples, i.e. a
/// two-second zero-sum horizon at 1 Hz sampling.
pub const DEFAULT_WINDOW_LEN: usize = 2;

/// A household's power trace with per-sample occupancy ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    household_id: String,
    sampling_period_s: u32,
    readings: Vec<f64>,
    occupancy: Vec<bool>,
}

impl LoadProfile {
    pub fn new(
        household_id: impl Into<String>,
        sampling_period_s: u32,
        readings: Vec<f64>,
        occupancy: Vec<bool>,
    ) -> Result<Self> {
        if sampling_period_s == 0 {
            return Err(invalid("sampling period must be at least 1 s"));
        }
        if readings.len() != occupancy.len() {
            return Err(invalid(format!(
                "{} readings but {} occupancy labels",
                readings.len(),
                occupancy.len()
            )));
        }
        if let Some((i, w)) = readings
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::Domain(format!("reading {i} is {w} W; readings must be finite and >= 0")));
        }
        Ok(Self {
            household_id: household_id.into(),
            sampling_period_s,
            readings,
            occupancy,
        })
    }

    pub fn household_id(&self) -> &str {
        &self.household_id
    }

    pub fn sampling_period_s(&self) -> u32 {
        self.sampling_period_s
    }

    pub fn readings(&self) -> &[f64] {
        &self.readings
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean(&self.readings)
    }

    pub fn occupied_fraction(&self) -> f64 {
        if self.occupancy.is_empty() {
            return 0.0;
        }
        self.occupancy.iter().filter(|o| **o).count() as f64 / self.occupancy.len() as f64
    }

    /// Sub-profile over `range`, keeping id and sampling period.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            household_id: self.household_id.clone(),
            sampling_period_s: self.sampling_period_s,
            readings: self.readings[range.clone()].to_vec(),
            occupancy: self.occupancy[range].to_vec(),
        }
    }

    /// Temporal split: the first `fraction` of the timeline and the rest.
    /// The cut is rounded down to a multiple of `align` samples.
    pub fn split_at_fraction(&self, fraction: f64, align: usize) -> (Self, Self) {
        let align = align.max(1);
        let cut = ((self.len() as f64 * fraction) as usize / align) * align;
        let cut = cut.min(self.len());
        (self.slice(0..cut), self.slice(cut..self.len()))
    }

    /// Same household and labels, different readings (e.g. a perturbed copy).
    pub fn with_readings(&self, readings: Vec<f64>) -> Result<Self> {
        Self::new(
            self.household_id.clone(),
            self.sampling_period_s,
            readings,
            self.occupancy.clone(),
        )
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Complete non-overlapping windows of a series plus the unwindowed tail.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSlices<'a> {
    pub windows: Vec<&'a [f64]>,
    /// Trailing samples that do not fill a window; never perturbed.
    pub residual: &'a [f64],
}

impl WindowSlices<'_> {
    pub fn has_residual(&self) -> bool {
        !self.residual.is_empty()
    }

    pub fn residual_start(&self) -> usize {
        self.windows.iter().map(|w| w.len()).sum()
    }
}

pub fn window_slices(readings: &[f64], window_len: usize) -> Result<WindowSlices<'_>> {
    check_window_len(window_len)?;
    let chunks = readings.chunks_exact(window_len);
    let residual = chunks.remainder();
    Ok(WindowSlices {
        windows: chunks.collect(),
        residual,
    })
}

pub(crate) fn check_window_len(window_len: usize) -> Result<()> {
    if window_len < 2 {
        return Err(invalid(format!(
            "billing window must span at least 2 samples, got {window_len}"
        )));
    }
    Ok(())
}

pub fn window_energy_wh(readings: &[f64], sampling_period_s: u32) -> f64 {
    readings.iter().sum::<f64>() * f64::from(sampling_period_s) / 3600.0
}

/// Time-of-use price schedule.
///
/// Rates apply to consecutive intervals of `resolution_samples` samples and
/// repeat cyclically when the profile is longer than the schedule. The
/// resolution is a whole number of billing windows, so any perturbation that
/// preserves every window sum also preserves every interval's energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    resolution_samples: usize,
    rates: Vec<f64>,
}

impl Tariff {
    pub fn new(resolution_samples: usize, rates: Vec<f64>, window_len: usize) -> Result<Self> {
        check_window_len(window_len)?;
        if resolution_samples == 0 || resolution_samples % window_len != 0 {
            return Err(invalid(format!(
                "tariff resolution {resolution_samples} is not a positive multiple of the billing window {window_len}"
            )));
        }
        if rates.is_empty() {
            return Err(invalid("tariff has no rates"));
        }
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(invalid("tariff rates must be finite and non-negative"));
        }
        Ok(Self {
            resolution_samples,
            rates,
        })
    }

    pub fn flat(rate_per_kwh: f64, window_len: usize) -> Result<Self> {
        Self::new(window_len, vec![rate_per_kwh], window_len)
    }

    pub fn resolution_samples(&self) -> usize {
        self.resolution_samples
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }
}

/// Bill for a profile: Σ interval energy (kWh) × interval rate.
pub fn compute_bill(profile: &LoadProfile, tariff: &Tariff) -> Result<f64> {
    bill_readings(profile.readings(), profile.sampling_period_s(), tariff)
}

pub(crate) fn bill_readings(readings: &[f64], sampling_period_s: u32, tariff: &Tariff) -> Result<f64> {
    if tariff.rates.is_empty() {
        return Err(invalid("tariff has no rates"));
    }
    Ok(readings
        .chunks(tariff.resolution_samples)
        .zip(tariff.rates.iter().cycle())
        .map(|(interval, rate)| window_energy_wh(interval, sampling_period_s) / 1000.0 * rate)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(readings: Vec<f64>) -> LoadProfile {
        let n = readings.len();
        LoadProfile::new("h", 1, readings, vec![false; n]).unwrap()
    }

    #[test]
    fn rejects_inconsistent_profiles() {
        assert!(LoadProfile::new("h", 1, vec![1.0, 2.0], vec![true]).is_err());
        assert!(LoadProfile::new("h", 0, vec![1.0], vec![true]).is_err());
        assert!(matches!(
            LoadProfile::new("h", 1, vec![-1.0], vec![true]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn window_slice_counts() {
        let ten = vec![1.0; 10];
        let s = window_slices(&ten, 2).unwrap();
        assert_eq!(s.windows.len(), 5);
        assert!(!s.has_residual());

        let eleven = vec![1.0; 11];
        let s = window_slices(&eleven, 2).unwrap();
        assert_eq!(s.windows.len(), 5);
        assert_eq!(s.residual.len(), 1);
        assert_eq!(s.residual_start(), 10);

        let s = window_slices(&[], 2).unwrap();
        assert!(s.windows.is_empty() && s.residual.is_empty());

        assert!(matches!(window_slices(&ten, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn energy() {
        assert!((window_energy_wh(&[1000.0, 1000.0], 1) - 2000.0 / 3600.0).abs() < 1e-15);
        assert_eq!(window_energy_wh(&[], 1), 0.0);
        assert_eq!(window_energy_wh(&[3600.0], 1), 1.0);
    }

    #[test]
    fn bills() {
        // 10 kWh = 36_000_000 Ws, spread over 3600 one-second samples.
        let p = profile(vec![10_000.0; 3600]);
        let flat = Tariff::flat(0.10, 2).unwrap();
        assert!((compute_bill(&p, &flat).unwrap() - 1.0).abs() < 1e-12);

        let zeros = profile(vec![0.0; 100]);
        assert_eq!(compute_bill(&zeros, &flat).unwrap(), 0.0);

        // Two intervals of 1 kWh each.
        let p = profile(vec![1000.0; 7200]);
        let tou = Tariff::new(3600, vec![0.1, 0.3], 2).unwrap();
        assert!((compute_bill(&p, &tou).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn tariff_guards() {
        assert!(Tariff::new(3, vec![0.1], 2).is_err());
        assert!(Tariff::new(4, vec![], 2).is_err());
        assert!(Tariff::new(4, vec![-0.1], 2).is_err());
        assert!(Tariff::new(4, vec![0.1], 1).is_err());
    }

    #[test]
    fn short_tariffs_cycle() {
        let p = profile(vec![3600.0; 8]);
        let t = Tariff::new(2, vec![1.0, 2.0], 2).unwrap();
        // intervals: 2 Wh each; rates 1,2,1,2 per kWh
        let expected = 0.002 * (1.0 + 2.0 + 1.0 + 2.0);
        assert!((compute_bill(&p, &t).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn temporal_split_aligns() {
        let p = profile((0..101).map(f64::from).collect());
        let (train, test) = p.split_at_fraction(0.7, 60);
        assert_eq!(train.len(), 60);
        assert_eq!(test.len(), 41);
        assert_eq!(test.readings()[0], 60.0);
    }

    proptest! {
        #[test]
        fn windows_and_residual_reconstruct(
            readings in proptest::collection::vec(0.0f64..5000.0, 0..200),
            w in 2usize..9,
        ) {
            let s = window_slices(&readings, w).unwrap();
            let mut rebuilt: Vec<f64> = s.windows.iter().flat_map(|w| w.iter().copied()).collect();
            rebuilt.extend_from_slice(s.residual);
            prop_assert_eq!(rebuilt, readings.clone());
            prop_assert!(s.residual.len() < w);
            prop_assert!(s.windows.iter().all(|win| win.len() == w));
        }

        #[test]
        fn flat_bill_matches_total_energy(
            readings in proptest::collection::vec(0.0f64..5000.0, 1..300),
            rate in 0.01f64..1.0,
        ) {
            let p = profile(readings.clone());
            let bill = compute_bill(&p, &Tariff::flat(rate, 2).unwrap()).unwrap();
            let direct = window_energy_wh(&readings, 1) * rate / 1000.0;
            prop_assert!((bill - direct).abs() <= 1e-12 * direct.abs().max(f64::MIN_POSITIVE));
        }
    }
}
