//! Bandwidth and viewport predictors: EWMA throughput, and last-value or
//! per-dimension linear regression for the 6DoF viewport.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::traces::{wrap_degrees, BandwidthSample, Pose};

pub const DEFAULT_SMOOTHING: f64 = 0.3;
pub const DEFAULT_HISTORY_WINDOW_S: f64 = 30.0;
pub const DEFAULT_FOV_WINDOW: usize = 8;

pub trait BandwidthPredictor {
    /// Predicted throughput in Mbps from past measurements, oldest first.
    fn predict(&mut self, observations: &[BandwidthSample]) -> Result<f64>;
}

pub trait FovPredictor {
    fn predict(&self, window: &FovWindow, horizon_s: f64) -> Result<Pose>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct EwmaState {
    pub smoothing: f64,
    pub current_estimate: Option<f64>,
    pub history_window_s: f64,
}

impl Default for EwmaState {
    fn default() -> Self {
        EwmaState {
            smoothing: DEFAULT_SMOOTHING,
            current_estimate: None,
            history_window_s: DEFAULT_HISTORY_WINDOW_S,
        }
    }
}

impl EwmaState {
    pub fn new(smoothing: f64) -> Result<Self> {
        if !(smoothing > 0.0 && smoothing <= 1.0) {
            return Err(Error::Config(format!(
                "EWMA smoothing must be in (0, 1], got {smoothing}"
            )));
        }
        Ok(EwmaState {
            smoothing,
            ..Default::default()
        })
    }
}

/// EWMA over the observations inside the trailing history window, seeded
/// with the first in-window observation.
pub fn ewma_predict(state: &EwmaState, observations: &[BandwidthSample]) -> Result<f64> {
    let last = observations
        .last()
        .ok_or_else(|| Error::Prediction("no throughput observations".into()))?;
    let cutoff = last.ts_s - state.history_window_s;
    let mut in_window = observations.iter().filter(|o| o.ts_s >= cutoff);
    let mut estimate = in_window
        .next()
        .expect("newest observation is in window")
        .mbps;
    for obs in in_window {
        estimate = state.smoothing * obs.mbps + (1.0 - state.smoothing) * estimate;
    }
    Ok(estimate)
}

impl BandwidthPredictor for EwmaState {
    fn predict(&mut self, observations: &[BandwidthSample]) -> Result<f64> {
        let estimate = ewma_predict(self, observations)?;
        self.current_estimate = Some(estimate);
        Ok(estimate)
    }
}

/// Ring of the most recent viewport samples.
#[derive(Clone, Debug)]
pub struct FovWindow {
    capacity: usize,
    samples: VecDeque<(f64, Pose)>,
}

impl Default for FovWindow {
    fn default() -> Self {
        Self::new(DEFAULT_FOV_WINDOW)
    }
}

impl FovWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be >= 1");
        FovWindow {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, ts_s: f64, pose: Pose) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((ts_s, pose));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, Pose)> {
        self.samples.iter()
    }

    pub fn newest(&self) -> Option<&(f64, Pose)> {
        self.samples.back()
    }
}

pub fn fov_predict_last(window: &FovWindow) -> Result<Pose> {
    window
        .newest()
        .map(|(_, p)| *p)
        .ok_or_else(|| Error::Prediction("empty viewport window".into()))
}

/// Least-squares line per dimension over the window, evaluated `horizon_s`
/// after the newest sample. Angles are unwrapped onto a continuous branch
/// before fitting and wrapped back afterwards.
pub fn fov_predict_lr(window: &FovWindow, horizon_s: f64) -> Result<Pose> {
    if window.len() < 2 {
        return Err(Error::Prediction(format!(
            "linear fit needs >= 2 samples, have {}",
            window.len()
        )));
    }
    let ts: Vec<f64> = window.iter().map(|(t, _)| *t).collect();
    let n = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / n;
    let sxx: f64 = ts.iter().map(|t| (t - t_mean) * (t - t_mean)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Prediction(
            "degenerate fit: all timestamps equal".into(),
        ));
    }
    let target = ts[ts.len() - 1] + horizon_s;

    let mut out = [0.0; 6];
    let mut ys = vec![0.0; ts.len()];
    for (dim, slot) in out.iter_mut().enumerate() {
        let angular = dim >= 3;
        for (k, (_, pose)) in window.iter().enumerate() {
            let raw = pose.to_array()[dim];
            ys[k] = if angular && k > 0 {
                ys[k - 1] + wrap_degrees(raw - pose_prev(window, k, dim))
            } else {
                raw
            };
        }
        let y_mean = ys.iter().sum::<f64>() / n;
        let sxy: f64 = ts
            .iter()
            .zip(&ys)
            .map(|(t, y)| (t - t_mean) * (y - y_mean))
            .sum();
        let value = y_mean + sxy / sxx * (target - t_mean);
        *slot = if angular { wrap_degrees(value) } else { value };
    }
    Ok(Pose::from_array(out))
}

fn pose_prev(window: &FovWindow, k: usize, dim: usize) -> f64 {
    window.samples[k - 1].1.to_array()[dim]
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LastFov;

impl FovPredictor for LastFov {
    fn predict(&self, window: &FovWindow, _horizon_s: f64) -> Result<Pose> {
        fov_predict_last(window)
    }
}

/// Linear-regression predictor; optionally falls back to the last sample
/// when the fit is impossible.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearFov {
    pub fallback_to_last: bool,
}

impl FovPredictor for LinearFov {
    fn predict(&self, window: &FovWindow, horizon_s: f64) -> Result<Pose> {
        match fov_predict_lr(window, horizon_s) {
            Err(Error::Prediction(_)) if self.fallback_to_last => fov_predict_last(window),
            other => other,
        }
    }
}
