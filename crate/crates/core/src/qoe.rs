//! Distance-dependent QoE model.
//!
//! ```text
//! quality = alpha * sum(psnr over FoV tiles) + beta * level
//! qoe     = quality - gamma * rebuffer - delta * |level change| - epsilon * decode_penalty
//! ```
//!
//! The built-in weights carry a negative `delta` at every distance, so with
//! the formula applied literally a level change *raises* QoE slightly. The
//! sign is kept as given.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoeWeights {
    #[serde(rename = "distance_m")]
    pub distance: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub epsilon: f64,
}

/// Fitted weights for viewers at 1 m, 2 m and 3 m.
pub const BUILTIN_WEIGHTS: [QoeWeights; 3] = [
    QoeWeights {
        distance: 1.0,
        alpha: 0.11,
        beta: 0.61,
        gamma: 12.58,
        delta: -0.13,
        epsilon: 12.58,
    },
    QoeWeights {
        distance: 2.0,
        alpha: 0.05,
        beta: 0.12,
        gamma: 12.68,
        delta: -0.01,
        epsilon: 12.68,
    },
    QoeWeights {
        distance: 3.0,
        alpha: 0.04,
        beta: 0.10,
        gamma: 13.29,
        delta: -0.05,
        epsilon: 13.29,
    },
];

impl QoeWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.distance,
            self.alpha,
            self.beta,
            self.gamma,
            self.delta,
            self.epsilon,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("QoE weights must be finite".into()));
        }
        if self.distance <= 0.0 {
            return Err(Error::Config("QoE weight distance must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChunkOutcome {
    /// Sum of PSNR (dB) over the tiles actually in view.
    pub fov_psnr_sum: f64,
    pub level: f64,
    /// Stall time, seconds.
    pub rebuffer: f64,
    pub level_change: f64,
    /// Decode time beyond the chunk duration, seconds.
    pub decode_penalty: f64,
    pub viewer_distance: f64,
}

pub fn quality_score(outcome: &ChunkOutcome, w: &QoeWeights) -> f64 {
    w.alpha * outcome.fov_psnr_sum + w.beta * outcome.level
}

pub fn qoe_score(outcome: &ChunkOutcome, w: &QoeWeights) -> f64 {
    quality_score(outcome, w)
        - w.gamma * outcome.rebuffer
        - w.delta * outcome.level_change
        - w.epsilon * outcome.decode_penalty
}

/// Table of weight rows keyed by viewing distance.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    rows: Vec<QoeWeights>,
}

impl Default for WeightTable {
    fn default() -> Self {
        WeightTable {
            rows: BUILTIN_WEIGHTS.to_vec(),
        }
    }
}

impl WeightTable {
    pub fn new(mut rows: Vec<QoeWeights>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("weight table is empty".into()));
        }
        for r in &rows {
            r.validate()?;
        }
        rows.sort_by(|a, b| a.distance.total_cmp(&b.distance));
        Ok(WeightTable { rows })
    }

    /// Reads a JSON array of `{distance_m, alpha, beta, gamma, delta, epsilon}`.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Self::new(serde_json::from_slice(bytes)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn rows(&self) -> &[QoeWeights] {
        &self.rows
    }

    /// Row with the nearest distance; ties go to the smaller distance.
    pub fn for_distance(&self, d: f64) -> Result<QoeWeights> {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::Config(format!(
                "viewer distance must be > 0, got {d}"
            )));
        }
        let mut best = self.rows[0];
        for row in &self.rows[1..] {
            if (row.distance - d).abs() < (best.distance - d).abs() {
                best = *row;
            }
        }
        Ok(best)
    }
}

pub fn weights_for_distance(d: f64) -> Result<QoeWeights> {
    WeightTable::default().for_distance(d)
}

/// Decode time in excess of the chunk duration, never negative.
pub fn decode_penalty(decode_time_s: f64, chunk_duration_s: f64) -> f64 {
    (decode_time_s - chunk_duration_s).max(0.0)
}
