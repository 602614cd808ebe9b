//! Non-learning bitrate controllers used for comparison.
//!
//! All three read only the [`StreamState`] handed to them and return an
//! action index. They pick compressed variants; the environment flips tiles
//! to uncompressed when the decoder cannot keep up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::Action;
use crate::qoe::{decode_penalty, qoe_score, ChunkOutcome, QoeWeights, BUILTIN_WEIGHTS};
use crate::sim::StreamState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// BB picks the lowest level at or below this buffer level, seconds.
    pub reservoir_s: f64,
    /// BB picks the highest level at or above this buffer level, seconds.
    pub cushion_s: f64,
    /// MPC lookahead in chunks.
    pub horizon: usize,
    /// Throughput samples used for the harmonic mean and the error bound.
    pub error_window: usize,
    /// Let MPC search uncompressed variants too.
    pub mpc_full_action_space: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            reservoir_s: 0.1,
            cushion_s: 1.0,
            horizon: 5,
            error_window: 5,
            mpc_full_action_space: false,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reservoir_s >= 0.0
            && self.reservoir_s < self.cushion_s
            && self.cushion_s.is_finite())
        {
            return Err(Error::Config(
                "BB reservoir must be below the cushion".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::Config("MPC horizon must be >= 1".into()));
        }
        if self.error_window == 0 {
            return Err(Error::Config("MPC error window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Bb,
    Quetra,
    Rmpc,
}

impl Baseline {
    pub fn select(self, state: &StreamState, config: &BaselineConfig) -> usize {
        match self {
            Baseline::Bb => bb_select(state, config),
            Baseline::Quetra => quetra_select(state, config),
            Baseline::Rmpc => rmpc_select(state, config),
        }
    }
}

fn compressed(level: u8, levels: u8) -> usize {
    Action {
        level,
        compressed: true,
    }
    .index(levels)
}

/// Buffer-based rate map.
pub fn bb_select(state: &StreamState, config: &BaselineConfig) -> usize {
    let levels = state.levels;
    let buffer_s = state.buffer_ms / 1000.0;
    let level = if buffer_s <= config.reservoir_s {
        1
    } else if buffer_s >= config.cushion_s {
        levels
    } else {
        let frac = (buffer_s - config.reservoir_s) / (config.cushion_s - config.reservoir_s);
        ((frac * (levels - 1) as f64).floor() as u8 + 1).min(levels)
    };
    compressed(level, levels)
}

fn action_bytes(state: &StreamState, action: usize) -> u64 {
    state
        .menu
        .plan_bytes
        .get(action)
        .or_else(|| state.next_sizes.get(action))
        .copied()
        .unwrap_or(0)
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// Time-average number of jobs in an M/D/1/K queue with load `rho`
/// (arrivals per service time) and room for `k` jobs including the one in
/// service.
pub fn md1k_mean_occupancy(rho: f64, k: usize) -> f64 {
    let k = k.max(1);
    if rho <= 0.0 {
        return 0.0;
    }
    if k == 1 {
        // One slot: busy fraction of an M/D/1/1 loss system.
        return rho / (1.0 + rho);
    }
    let a: Vec<f64> = (0..k)
        .map(|j| (-rho + j as f64 * rho.ln() - ln_factorial(j)).exp())
        .collect();
    // Departure-epoch chain on 0..k-1.
    let n = k;
    let mut p = vec![vec![0.0; n]; n];
    for (i, row) in p.iter_mut().enumerate() {
        let base = i.saturating_sub(1);
        let mut acc = 0.0;
        for (j, cell) in row.iter_mut().enumerate().take(n - 1).skip(base) {
            *cell = a[j - base];
            acc += *cell;
        }
        row[n - 1] += (1.0 - acc).max(0.0);
    }
    let pi = stationary(&p);
    let norm = pi[0] + rho;
    let mut mean = 0.0;
    for (j, q) in pi.iter().enumerate() {
        mean += j as f64 * q / norm;
    }
    mean + k as f64 * (1.0 - 1.0 / norm)
}

/// Stationary distribution of a row-stochastic matrix by Gaussian
/// elimination on `(P^T - I) pi = 0` with the last equation replaced by
/// the normalization.
fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        m[n - 1][j] = 1.0;
    }
    m[n - 1][n] = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let d = m[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col] / d;
                if f != 0.0 {
                    for c in col..=n {
                        m[row][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    (0..n)
        .map(|i| {
            if m[i][i].abs() < 1e-300 {
                0.0
            } else {
                (m[i][n] / m[i][i]).max(0.0)
            }
        })
        .collect()
}

/// Queue-occupancy controller: the level whose predicted buffer occupancy
/// lands nearest half the buffer.
pub fn quetra_select(state: &StreamState, _config: &BaselineConfig) -> usize {
    let levels = state.levels;
    let throughput = state.predicted_bw_mbps;
    if !(throughput > 0.0 && throughput.is_finite()) {
        return compressed(1, levels);
    }
    let dur_s = state.chunk_duration_ms / 1000.0;
    let slots = ((state.buffer_capacity_ms / state.chunk_duration_ms).floor() as usize).max(1);
    let target = slots as f64 / 2.0;
    let mut best = (f64::INFINITY, 1u8);
    for level in 1..=levels {
        let bytes = action_bytes(state, compressed(level, levels));
        let bitrate = bytes as f64 * 8.0 / 1e6 / dur_s;
        let occupancy = if bitrate > 0.0 {
            md1k_mean_occupancy(throughput / bitrate, slots)
        } else {
            slots as f64
        };
        let gap = (occupancy - target).abs();
        if gap < best.0 {
            best = (gap, level);
        }
    }
    compressed(best.1, levels)
}

fn harmonic_mean(xs: &[f64]) -> f64 {
    if xs.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    xs.len() as f64 / xs.iter().map(|x| 1.0 / x).sum::<f64>()
}

/// Harmonic-mean throughput discounted by the largest recent relative
/// prediction error, all computed from the measurement history.
pub fn robust_throughput(state: &StreamState, window: usize) -> f64 {
    let hist: Vec<f64> = state.bw_history.iter().copied().collect();
    if hist.is_empty() {
        return state.predicted_bw_mbps;
    }
    let recent = &hist[hist.len().saturating_sub(window)..];
    let estimate = harmonic_mean(recent);
    let mut max_err: f64 = 0.0;
    let first = hist.len().saturating_sub(window).max(1);
    for i in first..hist.len() {
        let past = &hist[i.saturating_sub(window)..i];
        let predicted = harmonic_mean(past);
        if hist[i] > 0.0 {
            max_err = max_err.max((predicted - hist[i]).abs() / hist[i]);
        }
    }
    estimate / (1.0 + max_err)
}

/// Inputs of the MPC lookahead for one candidate action.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    index: usize,
    level: u8,
    megabits: f64,
    decode_s: f64,
    psnr: f64,
}

struct Lookahead<'a> {
    candidates: &'a [Candidate],
    weights: QoeWeights,
    throughput: f64,
    dur_s: f64,
    capacity_s: f64,
}

impl Lookahead<'_> {
    fn step(&self, c: &Candidate, prev: usize, buffer_s: f64) -> (f64, f64) {
        let elapsed = c.megabits / self.throughput + c.decode_s;
        let rebuffer = (elapsed - buffer_s).max(0.0);
        let next = ((buffer_s - elapsed).max(0.0) + self.dur_s).min(self.capacity_s);
        let outcome = ChunkOutcome {
            fov_psnr_sum: c.psnr,
            level: c.level as f64,
            rebuffer,
            level_change: c.index.abs_diff(prev) as f64,
            decode_penalty: decode_penalty(c.decode_s, self.dur_s),
            viewer_distance: self.weights.distance,
        };
        (qoe_score(&outcome, &self.weights), next)
    }

    fn best(&self, depth: usize, prev: usize, buffer_s: f64) -> f64 {
        if depth == 0 {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for c in self.candidates {
            let (r, next) = self.step(c, prev, buffer_s);
            best = best.max(r + self.best(depth - 1, c.index, next));
        }
        best
    }
}

fn candidates(state: &StreamState, full: bool) -> Vec<Candidate> {
    let levels = state.levels;
    let mut out = Vec::new();
    for level in 1..=levels {
        for flag in [true, false] {
            if !flag && !full {
                continue;
            }
            let index = Action {
                level,
                compressed: flag,
            }
            .index(levels);
            out.push(Candidate {
                index,
                level,
                megabits: action_bytes(state, index) as f64 * 8.0 / 1e6,
                decode_s: state.menu.decode_s.get(index).copied().unwrap_or(0.0),
                psnr: state.menu.fov_psnr_sum.get(index).copied().unwrap_or(0.0),
            });
        }
    }
    out
}

/// Robust MPC: exhaustive search over action sequences of the horizon
/// under a fixed throughput estimate, returning the first action of the
/// best sequence. Ties go to the lower level, then to compressed.
pub fn rmpc_select(state: &StreamState, config: &BaselineConfig) -> usize {
    let levels = state.levels;
    let throughput = robust_throughput(state, config.error_window);
    if !(throughput > 0.0 && throughput.is_finite()) {
        return compressed(1, levels);
    }
    let cands = candidates(state, config.mpc_full_action_space);
    let look = Lookahead {
        candidates: &cands,
        weights: state.menu.weights.unwrap_or(BUILTIN_WEIGHTS[0]),
        throughput,
        dur_s: state.chunk_duration_ms / 1000.0,
        capacity_s: state.buffer_capacity_ms / 1000.0,
    };
    let buffer_s = state.buffer_ms / 1000.0;
    let mut best = (f64::NEG_INFINITY, cands[0].index);
    for c in &cands {
        let (r, next) = look.step(c, state.last_action, buffer_s);
        let total = r + look.best(config.horizon - 1, c.index, next);
        if total > best.0 {
            best = (total, c.index);
        }
    }
    best.1
}
