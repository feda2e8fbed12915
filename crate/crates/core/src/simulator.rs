//! Seeded in-bus broadcast simulator.
//!
//! Each beacon emits as a homogeneous Poisson process at
//! `base_rate_per_min * position_attenuation * occupancy_factor`.
//! RSSI per event is Normal(rssi_mean, rssi_stddev) clamped to [-127, 0].
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64`. Uniforms
//! are `rng.random::<f64>()` (53-bit, [0, 1)); inter-arrival gaps use the
//! inverse CDF `-ln(1 - u) / rate`; normals use the Box-Muller cosine
//! branch. Beacons are generated in list order, each drawing its arrival
//! gaps then its RSSI samples, so a log is a pure function of the config.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beacon::{BeaconId, BeaconKind};
use crate::proximity::{ScanEvent, ScanLog};
use crate::Scalar;

pub const DEFAULT_PROXIMITY_RATE: f64 = 8.33;
pub const DEFAULT_STICKER_RATE: f64 = 0.16;
pub const DEFAULT_RSSI_MEAN: f64 = -75.0;
pub const DEFAULT_RSSI_STDDEV: f64 = 6.0;
pub const MIN_TRIP_MIN: f64 = 20.0;
pub const MAX_TRIP_MIN: f64 = 40.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimulatorError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn invalid(msg: impl Into<String>) -> SimulatorError {
    SimulatorError::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct BeaconSpec<T> {
    #[serde(flatten)]
    pub beacon: BeaconId,
    #[serde(default)]
    pub kind: BeaconKind,
    /// Defaults by kind when omitted.
    #[serde(default)]
    pub base_rate_per_min: Option<T>,
    #[serde(default = "one")]
    pub position_attenuation: T,
    #[serde(default = "default_rssi_mean")]
    pub rssi_mean: T,
    #[serde(default = "default_rssi_stddev")]
    pub rssi_stddev: T,
}

fn one<T: Scalar>() -> T {
    T::one()
}

fn default_rssi_mean<T: Scalar>() -> T {
    T::of(DEFAULT_RSSI_MEAN)
}

fn default_rssi_stddev<T: Scalar>() -> T {
    T::of(DEFAULT_RSSI_STDDEV)
}

impl<T: Scalar> BeaconSpec<T> {
    pub fn new(beacon: BeaconId, kind: BeaconKind) -> Self {
        Self {
            beacon,
            kind,
            base_rate_per_min: None,
            position_attenuation: T::one(),
            rssi_mean: default_rssi_mean(),
            rssi_stddev: default_rssi_stddev(),
        }
    }

    pub fn proximity(beacon: BeaconId) -> Self {
        Self::new(beacon, BeaconKind::Proximity)
    }

    pub fn sticker(beacon: BeaconId) -> Self {
        Self::new(beacon, BeaconKind::Sticker)
    }

    pub fn with_rate(mut self, rate_per_min: T) -> Self {
        self.base_rate_per_min = Some(rate_per_min);
        self
    }

    pub fn with_attenuation(mut self, factor: T) -> Self {
        self.position_attenuation = factor;
        self
    }

    pub fn base_rate(&self) -> T {
        self.base_rate_per_min.unwrap_or_else(|| match self.kind {
            BeaconKind::Proximity => T::of(DEFAULT_PROXIMITY_RATE),
            BeaconKind::Sticker => T::of(DEFAULT_STICKER_RATE),
        })
    }

    /// Broadcasts per minute after position and occupancy attenuation.
    pub fn effective_rate(&self, occupancy_factor: T) -> T {
        self.base_rate() * self.position_attenuation * occupancy_factor
    }

    fn validate(&self, occupancy_factor: T) -> Result<(), SimulatorError> {
        let unit = |v: T| v > T::zero() && v <= T::one();
        if !unit(self.position_attenuation) {
            return Err(invalid(format!("{}: position_attenuation must lie in (0, 1]", self.beacon)));
        }
        let rate = self.effective_rate(occupancy_factor);
        if !(rate > T::zero()) || !rate.is_finite() {
            return Err(invalid(format!("{}: effective rate must be positive", self.beacon)));
        }
        if !(self.rssi_stddev >= T::zero()) || !self.rssi_mean.is_finite() {
            return Err(invalid(format!("{}: bad rssi model", self.beacon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct TripConfig<T> {
    pub duration_min: T,
    pub beacons: Vec<BeaconSpec<T>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub occupancy_factor: T,
    /// Lifts the 20-40 minute trip-length check.
    #[serde(default)]
    pub allow_any_duration: bool,
}

impl<T: Scalar> TripConfig<T> {
    pub fn new(duration_min: T, beacons: Vec<BeaconSpec<T>>, seed: u64) -> Self {
        Self {
            duration_min,
            beacons,
            seed,
            occupancy_factor: T::one(),
            allow_any_duration: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        if self.beacons.is_empty() {
            return Err(invalid("beacon list is empty"));
        }
        if !(self.duration_min > T::zero()) || !self.duration_min.is_finite() {
            return Err(invalid("duration_min must be positive"));
        }
        if !self.allow_any_duration
            && (self.duration_min < T::of(MIN_TRIP_MIN) || self.duration_min > T::of(MAX_TRIP_MIN))
        {
            return Err(invalid(format!(
                "duration_min {} outside [{MIN_TRIP_MIN}, {MAX_TRIP_MIN}] (set allow_any_duration to override)",
                self.duration_min
            )));
        }
        if !(self.occupancy_factor > T::zero() && self.occupancy_factor <= T::one()) {
            return Err(invalid("occupancy_factor must lie in (0, 1]"));
        }
        for (i, b) in self.beacons.iter().enumerate() {
            if self.beacons[..i].iter().any(|o| o.beacon == b.beacon) {
                return Err(invalid(format!("duplicate beacon {}", b.beacon)));
            }
            b.validate(self.occupancy_factor)?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}

fn exponential(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    -(1.0 - uniform(rng)).ln() / rate
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Arrival times in minutes of a Poisson process on `[0, horizon)`.
fn poisson_arrivals(rng: &mut ChaCha8Rng, rate_per_min: f64, horizon_min: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = exponential(rng, rate_per_min);
    while t < horizon_min {
        out.push(t);
        t += exponential(rng, rate_per_min);
    }
    out
}

pub fn simulate_trip<T: Scalar>(config: &TripConfig<T>) -> Result<ScanLog, SimulatorError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let horizon = config.duration_min.to_f64_lossy();
    let horizon_ms = (horizon * 60_000.0).floor() as u64;
    let mut events = Vec::new();
    for spec in &config.beacons {
        let rate = spec.effective_rate(config.occupancy_factor).to_f64_lossy();
        let arrivals = poisson_arrivals(&mut rng, rate, horizon);
        let (mean, sd) = (spec.rssi_mean.to_f64_lossy(), spec.rssi_stddev.to_f64_lossy());
        for t in arrivals {
            let t_ms = ((t * 60_000.0).floor() as u64).min(horizon_ms.saturating_sub(1));
            let rssi = (mean + sd * standard_normal(&mut rng)).round().clamp(-127.0, 0.0) as i16;
            events.push(ScanEvent::new(t_ms, spec.beacon, rssi));
        }
    }
    events.sort_by_key(|e| e.t_ms);
    Ok(ScanLog::new(events).expect("sorted and clamped by construction"))
}

/// `1 - exp(-rate * window)`, the probability of at least one broadcast.
pub fn analytic_detection_probability<T: Scalar>(rate_per_min: T, window_s: T) -> T {
    T::one() - (-(rate_per_min * window_s / T::of(60.0))).exp()
}

/// Monte-Carlo estimate of P(at least one broadcast within `window_s`).
/// Trial `i` uses its own generator seeded with `seed + i`.
pub fn detection_probability<T: Scalar>(
    rate_per_min: T,
    window_s: T,
    trials: u64,
    seed: u64,
) -> Result<T, SimulatorError> {
    if !(rate_per_min >= T::zero()) {
        return Err(SimulatorError::InvalidArgument("rate must be non-negative".into()));
    }
    if !(window_s > T::zero()) {
        return Err(SimulatorError::InvalidArgument("window must be positive".into()));
    }
    if trials == 0 {
        return Err(SimulatorError::InvalidArgument("need at least one trial".into()));
    }
    if rate_per_min == T::zero() {
        return Ok(T::zero());
    }
    let rate_per_s = rate_per_min.to_f64_lossy() / 60.0;
    let window = window_s.to_f64_lossy();
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            u64::from(exponential(&mut rng, rate_per_s) < window)
        })
        .sum();
    Ok(T::of(hits as f64 / trials as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation<T> {
    pub sufficient: bool,
    pub achieved_probability: T,
    pub target_probability: T,
    pub window_s: T,
}

/// Combined detection probability `1 - prod(exp(-rate_i * window))` of a
/// beacon installation, compared to a target.
pub fn recommend_installation<T: Scalar>(
    beacons: &[BeaconSpec<T>],
    target_prob: T,
    window_s: T,
) -> Result<Recommendation<T>, SimulatorError> {
    if beacons.is_empty() {
        return Err(SimulatorError::InvalidArgument("beacon list is empty".into()));
    }
    if !(target_prob > T::zero() && target_prob < T::one()) {
        return Err(SimulatorError::InvalidArgument("target must lie in (0, 1)".into()));
    }
    if !(window_s > T::zero()) {
        return Err(SimulatorError::InvalidArgument("window must be positive".into()));
    }
    let total_rate: T = beacons.iter().map(|b| b.effective_rate(T::one())).sum();
    let achieved = analytic_detection_probability(total_rate, window_s);
    Ok(Recommendation {
        sufficient: achieved >= target_prob,
        achieved_probability: achieved,
        target_probability: target_prob,
        window_s,
    })
}
