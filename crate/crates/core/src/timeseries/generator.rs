use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::LoadProfile;
use crate::error::{invalid, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Appliance {
    pub power_w: f64,
    pub mean_duration_s: f64,
}

impl Appliance {
    pub const fn new(power_w: f64, mean_duration_s: f64) -> Self {
        Self {
            power_w,
            mean_duration_s,
        }
    }
}

/// Parameters of the synthetic household.
///
/// Occupancy alternates between two states with exponentially distributed
/// dwell times. Appliance switch-on events arrive as a Poisson process whose
/// rate depends on the current occupancy state; each event draws an appliance
/// uniformly from the pool and keeps it on for an exponential duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub base_load_w: f64,
    pub appliance_pool: Vec<Appliance>,
    /// Events per hour while someone is home.
    pub occupied_event_rate: f64,
    /// Events per hour while the home is empty.
    pub unoccupied_event_rate: f64,
    pub occupancy_segment_mean_s: f64,
    pub noise_std_w: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            base_load_w: 120.0,
            appliance_pool: vec![
                Appliance::new(2000.0, 90.0),  // kettle
                Appliance::new(1200.0, 150.0), // microwave
                Appliance::new(700.0, 240.0),  // toaster oven / hob
                Appliance::new(250.0, 420.0),  // television
                Appliance::new(120.0, 300.0),  // lighting
                Appliance::new(400.0, 180.0),  // vacuum / hair dryer
            ],
            occupied_event_rate: 30.0,
            unoccupied_event_rate: 0.5,
            occupancy_segment_mean_s: 5400.0,
            noise_std_w: 5.0,
            seed: 42,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_load_w.is_finite() && self.base_load_w >= 0.0) {
            return Err(invalid("base load must be finite and non-negative"));
        }
        if !(self.noise_std_w.is_finite() && self.noise_std_w >= 0.0) {
            return Err(invalid("noise std must be finite and non-negative"));
        }
        if !(self.occupancy_segment_mean_s.is_finite() && self.occupancy_segment_mean_s > 0.0) {
            return Err(invalid("occupancy segment mean must be positive"));
        }
        if !(self.unoccupied_event_rate >= 0.0 && self.occupied_event_rate.is_finite()) {
            return Err(invalid("event rates must be finite and non-negative"));
        }
        if self.occupied_event_rate < self.unoccupied_event_rate {
            return Err(invalid(
                "occupied event rate must not be below the unoccupied rate",
            ));
        }
        for a in &self.appliance_pool {
            if !(a.power_w.is_finite() && a.power_w >= 0.0 && a.mean_duration_s > 0.0) {
                return Err(invalid(format!("bad appliance {a:?}")));
            }
        }
        Ok(())
    }

    /// On/off threshold used by the attacker's event counter.
    pub fn onoff_threshold_w(&self) -> f64 {
        self.base_load_w + 3.0 * self.noise_std_w
    }
}

/// Synthesizes `duration_s` one-second samples for `household_id`.
pub fn generate_profile(
    params: &GeneratorParams,
    household_id: &str,
    duration_s: i64,
) -> Result<LoadProfile> {
    if duration_s <= 0 {
        return Err(invalid(format!("duration must be positive, got {duration_s}")));
    }
    params.validate()?;
    let n = duration_s as usize;
    let mut rng = seed::rng(params.seed);

    let occupancy = occupancy_trace(params, n, &mut rng);
    let mut readings = vec![params.base_load_w; n];

    let peak_rate = params.occupied_event_rate.max(params.unoccupied_event_rate);
    if peak_rate > 0.0 && !params.appliance_pool.is_empty() {
        // Thinning: candidate arrivals at the peak rate, each kept with
        // probability rate(state(t)) / peak.
        let arrivals = Exp::new(peak_rate / 3600.0).expect("positive rate");
        let mut t = arrivals.sample(&mut rng);
        while (t as usize) < n {
            let at = t as usize;
            let rate = if occupancy[at] {
                params.occupied_event_rate
            } else {
                params.unoccupied_event_rate
            };
            if rng.gen::<f64>() * peak_rate < rate {
                let appliance = params.appliance_pool[rng.gen_range(0..params.appliance_pool.len())];
                let hold = Exp::new(1.0 / appliance.mean_duration_s).expect("positive duration");
                let dur = (hold.sample(&mut rng).ceil() as usize).max(1);
                for r in &mut readings[at..(at + dur).min(n)] {
                    *r += appliance.power_w;
                }
            }
            t += arrivals.sample(&mut rng);
        }
    }

    if params.noise_std_w > 0.0 {
        let noise = Normal::new(0.0, params.noise_std_w).expect("finite std");
        for r in &mut readings {
            *r = (*r + noise.sample(&mut rng)).max(0.0);
        }
    }

    LoadProfile::new(household_id, 1, readings, occupancy)
}

fn occupancy_trace(params: &GeneratorParams, n: usize, rng: &mut impl Rng) -> Vec<bool> {
    let dwell = Exp::new(1.0 / params.occupancy_segment_mean_s).expect("positive dwell");
    let mut state = rng.gen::<bool>();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = (dwell.sample(rng).ceil() as usize).max(1);
        let take = len.min(n - out.len());
        out.extend(std::iter::repeat(state).take(take));
        state = !state;
    }
    out
}
