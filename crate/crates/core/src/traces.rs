//! Bandwidth, viewport and compute-capacity traces.
//!
//! Traces are replayed cyclically: a lookup past the last sample wraps to the
//! start of the trace, which lets short traces drive long training runs.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSample {
    pub ts_s: f64,
    pub mbps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthTrace {
    samples: Vec<BandwidthSample>,
    pub mobility_tag: String,
}

impl BandwidthTrace {
    pub fn new(samples: Vec<BandwidthSample>, mobility_tag: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Ingest {
                row: 0,
                message: "trace has no samples".into(),
            });
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.ts_s.is_finite() || !s.mbps.is_finite() || s.mbps < 0.0 {
                return Err(Error::Ingest {
                    row: i + 1,
                    message: format!("invalid sample {s:?}"),
                });
            }
            if i > 0 && s.ts_s <= samples[i - 1].ts_s {
                return Err(Error::Ingest {
                    row: i + 1,
                    message: "timestamps must be strictly increasing".into(),
                });
            }
        }
        Ok(BandwidthTrace {
            samples,
            mobility_tag: mobility_tag.into(),
        })
    }

    pub fn samples(&self) -> &[BandwidthSample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].ts_s
    }

    /// Time covered by the samples, seconds.
    pub fn span(&self) -> f64 {
        self.samples[self.samples.len() - 1].ts_s - self.samples[0].ts_s
    }

    pub fn mean_mbps(&self) -> f64 {
        self.samples.iter().map(|s| s.mbps).sum::<f64>() / self.samples.len() as f64
    }

    /// Maps a replay time (seconds since replay start) into the sample span.
    fn local_time(&self, t: f64) -> f64 {
        let span = self.span();
        if span <= 0.0 {
            return self.start();
        }
        self.start() + t.rem_euclid(span)
    }

    fn segment(&self, local: f64) -> usize {
        // Index i with ts[i] <= local < ts[i + 1].
        let idx = self.samples.partition_point(|s| s.ts_s <= local);
        idx.saturating_sub(1)
            .min(self.samples.len().saturating_sub(2))
    }

    /// Linearly interpolated throughput at a local trace timestamp, clamped
    /// to the end samples outside the span.
    pub fn throughput_at_local(&self, local: f64) -> f64 {
        let s = &self.samples;
        if s.len() == 1 || local <= s[0].ts_s {
            return s[0].mbps;
        }
        if local >= s[s.len() - 1].ts_s {
            return s[s.len() - 1].mbps;
        }
        let i = self.segment(local);
        let (a, b) = (s[i], s[i + 1]);
        let w = (local - a.ts_s) / (b.ts_s - a.ts_s);
        a.mbps + w * (b.mbps - a.mbps)
    }

    /// Throughput at replay time `t`, wrapping cyclically.
    pub fn throughput_at(&self, t: f64) -> f64 {
        self.throughput_at_local(self.local_time(t))
    }

    /// Megabits deliverable over one full cycle of the trace.
    fn cycle_megabits(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| 0.5 * (w[0].mbps + w[1].mbps) * (w[1].ts_s - w[0].ts_s))
            .sum()
    }

    /// Seconds needed to move `megabits` starting at replay time `start`,
    /// integrating the interpolated throughput.
    pub fn transfer_time(&self, start: f64, megabits: f64) -> Result<f64> {
        if megabits <= 0.0 {
            return Ok(0.0);
        }
        if self.samples.len() == 1 {
            let bw = self.samples[0].mbps;
            if bw <= 0.0 {
                return Err(Error::Config(
                    "bandwidth trace carries no throughput".into(),
                ));
            }
            return Ok(megabits / bw);
        }
        let cycle = self.cycle_megabits();
        if cycle <= 0.0 {
            return Err(Error::Config(
                "bandwidth trace carries no throughput".into(),
            ));
        }
        let s = &self.samples;
        let last = s.len() - 1;
        let mut remaining = megabits;
        let mut elapsed = 0.0;
        let mut pos = self.local_time(start);
        let mut i = self.segment(pos);
        loop {
            // Skip whole cycles when starting at the trace origin.
            if i == 0 && pos == s[0].ts_s && remaining > cycle {
                let cycles = (remaining / cycle).floor() - 1.0;
                if cycles > 0.0 {
                    remaining -= cycles * cycle;
                    elapsed += cycles * self.span();
                }
            }
            let (a, b) = (s[i], s[i + 1]);
            let slope = (b.mbps - a.mbps) / (b.ts_s - a.ts_s);
            let v = a.mbps + slope * (pos - a.ts_s);
            let available = 0.5 * (v + b.mbps) * (b.ts_s - pos);
            if available >= remaining {
                let disc = (v * v + 2.0 * slope * remaining).max(0.0);
                let denom = v + disc.sqrt();
                let tau = if denom > 0.0 {
                    2.0 * remaining / denom
                } else {
                    b.ts_s - pos
                };
                return Ok(elapsed + tau.min(b.ts_s - pos));
            }
            remaining -= available;
            elapsed += b.ts_s - pos;
            i += 1;
            pos = b.ts_s;
            if i == last {
                i = 0;
                pos = s[0].ts_s;
            }
        }
    }

    pub fn read_csv<R: Read>(reader: R, mobility_tag: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["ts_s", "mbps"] {
            return Err(Error::Ingest {
                row: 1,
                message: format!("expected header `ts_s,mbps`, got {headers:?}"),
            });
        }
        let mut samples: Vec<BandwidthSample> = Vec::new();
        for (i, record) in rdr.deserialize().enumerate() {
            // Row 1 is the header.
            let row = i + 2;
            let s: BandwidthSample = record.map_err(|e| Error::Ingest {
                row,
                message: e.to_string(),
            })?;
            if !s.mbps.is_finite() || s.mbps < 0.0 {
                return Err(Error::Ingest {
                    row,
                    message: format!("negative or non-finite throughput {}", s.mbps),
                });
            }
            if let Some(prev) = samples.last() {
                if s.ts_s <= prev.ts_s {
                    return Err(Error::Ingest {
                        row,
                        message: "timestamps must be strictly increasing".into(),
                    });
                }
            }
            samples.push(s);
        }
        Self::new(samples, mobility_tag)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for s in &self.samples {
            wtr.serialize(s)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Reads a bandwidth CSV (`ts_s,mbps`). The mobility tag is taken from the
/// file stem.
pub fn load_bandwidth_trace(path: impl AsRef<Path>) -> Result<BandwidthTrace> {
    let path = path.as_ref();
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    BandwidthTrace::read_csv(File::open(path)?, tag)
}

/// Synthetic throughput process: an AR(1) around a regime mean, clipped at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandwidthModel {
    pub mean_mbps: f64,
    /// Stationary standard deviation relative to the regime mean.
    pub volatility: f64,
    /// Per-sample probability of jumping to another regime.
    pub regime_switch_prob: f64,
    /// Regime means relative to `mean_mbps`.
    pub regimes: Vec<f64>,
    pub correlation: f64,
    pub sample_period_s: f64,
    pub mobility_tag: String,
}

impl Default for BandwidthModel {
    fn default() -> Self {
        BandwidthModel {
            mean_mbps: 400.0,
            volatility: 0.2,
            regime_switch_prob: 0.0,
            regimes: vec![0.5, 1.0, 1.5],
            correlation: 0.8,
            sample_period_s: 1.0,
            mobility_tag: "synthetic".into(),
        }
    }
}

pub fn generate_synthetic_bandwidth(
    seed: u64,
    model: &BandwidthModel,
    duration_s: f64,
) -> Result<BandwidthTrace> {
    if !(model.mean_mbps.is_finite() && model.mean_mbps > 0.0) {
        return Err(Error::Config("bandwidth mean must be > 0".into()));
    }
    if !(model.volatility.is_finite() && model.volatility >= 0.0) {
        return Err(Error::Config("volatility must be >= 0".into()));
    }
    if !(0.0..=1.0).contains(&model.regime_switch_prob) {
        return Err(Error::Config(
            "regime switch probability must be in [0, 1]".into(),
        ));
    }
    if !(0.0..1.0).contains(&model.correlation) {
        return Err(Error::Config("correlation must be in [0, 1)".into()));
    }
    if !(model.sample_period_s > 0.0) || !(duration_s > 0.0) {
        return Err(Error::Config(
            "sample period and duration must be > 0".into(),
        ));
    }
    if model.regime_switch_prob > 0.0 && model.regimes.len() < 2 {
        return Err(Error::Config(
            "regime switching needs at least two regimes".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (duration_s / model.sample_period_s).floor() as usize + 1;
    let innovation = model.volatility * (1.0 - model.correlation * model.correlation).sqrt();
    let mut regime = model.regimes.iter().position(|r| *r == 1.0).unwrap_or(0);
    let mut level = model.mean_mbps * model.regimes.get(regime).copied().unwrap_or(1.0);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        if model.regime_switch_prob > 0.0 && rng.random::<f64>() < model.regime_switch_prob {
            let jump = rng.random_range(1..model.regimes.len());
            regime = (regime + jump) % model.regimes.len();
        }
        let mean = model.mean_mbps * model.regimes.get(regime).copied().unwrap_or(1.0);
        if i > 0 && model.volatility > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            level = mean + model.correlation * (level - mean) + innovation * mean * z;
        } else if model.volatility == 0.0 {
            level = mean;
        }
        samples.push(BandwidthSample {
            ts_s: i as f64 * model.sample_period_s,
            mbps: level.max(0.0),
        });
    }
    BandwidthTrace::new(samples, model.mobility_tag.clone())
}

/// Wraps an angle in degrees to `[-180, 180)`.
pub fn wrap_degrees(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

/// Viewer pose: position in meters, orientation as yaw/pitch/roll degrees.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 3],
}

impl Pose {
    pub fn to_array(&self) -> [f64; 6] {
        let [x, y, z] = self.position;
        let [yaw, pitch, roll] = self.orientation;
        [x, y, z, yaw, pitch, roll]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Pose {
            position: [a[0], a[1], a[2]],
            orientation: [a[3], a[4], a[5]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FovSample {
    pub ts_s: f64,
    pub pose: Pose,
}

#[derive(Serialize, Deserialize)]
struct FovRow {
    ts_s: f64,
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
    pitch: f64,
    roll: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FovTrace {
    samples: Vec<FovSample>,
}

impl FovTrace {
    pub fn new(samples: Vec<FovSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Ingest {
                row: 0,
                message: "trace has no samples".into(),
            });
        }
        for (i, s) in samples.iter().enumerate() {
            check_fov_sample(s, i > 0, samples.get(i.wrapping_sub(1)), i + 1)?;
        }
        Ok(FovTrace { samples })
    }

    pub fn samples(&self) -> &[FovSample] {
        &self.samples
    }

    pub fn span(&self) -> f64 {
        self.samples[self.samples.len() - 1].ts_s - self.samples[0].ts_s
    }

    /// Pose at replay time `t` (cyclic). Positions interpolate linearly,
    /// angles along the shorter arc.
    pub fn pose_at(&self, t: f64) -> Pose {
        let s = &self.samples;
        let span = self.span();
        if s.len() == 1 || span <= 0.0 {
            return s[0].pose;
        }
        let local = s[0].ts_s + t.rem_euclid(span);
        let idx = s
            .partition_point(|x| x.ts_s <= local)
            .saturating_sub(1)
            .min(s.len() - 2);
        let (a, b) = (s[idx], s[idx + 1]);
        let w = ((local - a.ts_s) / (b.ts_s - a.ts_s)).clamp(0.0, 1.0);
        let mut pose = Pose::default();
        for axis in 0..3 {
            pose.position[axis] =
                a.pose.position[axis] + w * (b.pose.position[axis] - a.pose.position[axis]);
            let delta = wrap_degrees(b.pose.orientation[axis] - a.pose.orientation[axis]);
            pose.orientation[axis] = wrap_degrees(a.pose.orientation[axis] + w * delta);
        }
        pose
    }

    /// Up to `count` samples at or before replay time `t` (and not before
    /// replay start), newest last, timestamps in replay time.
    pub fn history(&self, t: f64, count: usize) -> Vec<FovSample> {
        let s = &self.samples;
        let span = self.span();
        if s.len() == 1 || span <= 0.0 {
            return vec![FovSample {
                ts_s: t,
                pose: s[0].pose,
            }];
        }
        let cycle = (t / span).floor();
        let local = s[0].ts_s + t.rem_euclid(span);
        let mut idx = s.partition_point(|x| x.ts_s <= local).saturating_sub(1);
        let mut offset = cycle * span - s[0].ts_s;
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let ts = s[idx].ts_s + offset;
            if ts < 0.0 {
                break;
            }
            out.push(FovSample {
                ts_s: ts,
                pose: s[idx].pose,
            });
            if idx == 0 {
                // The last sample coincides with the first one of the next cycle.
                idx = s.len() - 2;
                offset -= span;
            } else {
                idx -= 1;
            }
        }
        out.reverse();
        out
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["ts_s", "x", "y", "z", "yaw", "pitch", "roll"] {
            return Err(Error::Ingest {
                row: 1,
                message: format!("expected header `ts_s,x,y,z,yaw,pitch,roll`, got {headers:?}"),
            });
        }
        let mut samples: Vec<FovSample> = Vec::new();
        for (i, record) in rdr.deserialize().enumerate() {
            let row = i + 2;
            let r: FovRow = record.map_err(|e| Error::Ingest {
                row,
                message: e.to_string(),
            })?;
            let sample = FovSample {
                ts_s: r.ts_s,
                pose: Pose {
                    position: [r.x, r.y, r.z],
                    orientation: [r.yaw, r.pitch, r.roll],
                },
            };
            check_fov_sample(&sample, !samples.is_empty(), samples.last(), row)?;
            samples.push(sample);
        }
        Self::new(samples)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for s in &self.samples {
            let [x, y, z] = s.pose.position;
            let [yaw, pitch, roll] = s.pose.orientation;
            wtr.serialize(FovRow {
                ts_s: s.ts_s,
                x,
                y,
                z,
                yaw,
                pitch,
                roll,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_fov_sample(
    s: &FovSample,
    has_prev: bool,
    prev: Option<&FovSample>,
    row: usize,
) -> Result<()> {
    if !s.ts_s.is_finite() || !s.pose.is_finite() {
        return Err(Error::Ingest {
            row,
            message: "non-finite value".into(),
        });
    }
    if s.pose
        .orientation
        .iter()
        .any(|a| !(-180.0..=180.0).contains(a))
    {
        return Err(Error::Ingest {
            row,
            message: "orientation outside [-180, 180]".into(),
        });
    }
    if has_prev {
        if let Some(p) = prev {
            if s.ts_s <= p.ts_s {
                return Err(Error::Ingest {
                    row,
                    message: "timestamps must be strictly increasing".into(),
                });
            }
        }
    }
    Ok(())
}

pub fn load_fov_trace(path: impl AsRef<Path>) -> Result<FovTrace> {
    FovTrace::read_csv(File::open(path)?)
}

/// Viewport random walk with a weak pull back towards the start pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FovModel {
    pub start: Pose,
    /// Per-sample position step standard deviation, meters.
    pub position_step_m: f64,
    /// Per-sample orientation step standard deviation, degrees.
    pub angle_step_deg: f64,
    /// Fraction of the offset from the start position removed each sample.
    pub anchor_pull: f64,
    pub sample_period_s: f64,
}

impl Default for FovModel {
    fn default() -> Self {
        FovModel {
            // Two meters in front of the origin, looking back at it.
            start: Pose {
                position: [-2.0, 0.0, 0.0],
                orientation: [0.0, 0.0, 0.0],
            },
            position_step_m: 0.02,
            angle_step_deg: 2.0,
            anchor_pull: 0.02,
            sample_period_s: 1.0 / 30.0,
        }
    }
}

pub fn generate_synthetic_fov(seed: u64, model: &FovModel, duration_s: f64) -> Result<FovTrace> {
    if !(model.position_step_m >= 0.0 && model.angle_step_deg >= 0.0) {
        return Err(Error::Config("step scales must be >= 0".into()));
    }
    if !(0.0..=1.0).contains(&model.anchor_pull) {
        return Err(Error::Config("anchor pull must be in [0, 1]".into()));
    }
    if !(model.sample_period_s > 0.0) || !(duration_s > 0.0) {
        return Err(Error::Config(
            "sample period and duration must be > 0".into(),
        ));
    }
    if !model.start.is_finite() {
        return Err(Error::Config("start pose must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (duration_s / model.sample_period_s).floor() as usize + 1;
    let mut pose = model.start;
    for a in pose.orientation.iter_mut() {
        *a = wrap_degrees(*a);
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        if i > 0 {
            for axis in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                let p = &mut pose.position[axis];
                *p += model.anchor_pull * (model.start.position[axis] - *p)
                    + model.position_step_m * z;
            }
            for axis in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                pose.orientation[axis] =
                    wrap_degrees(pose.orientation[axis] + model.angle_step_deg * z);
            }
        }
        samples.push(FovSample {
            ts_s: i as f64 * model.sample_period_s,
            pose,
        });
    }
    FovTrace::new(samples)
}

/// Decode capacity in compute units per chunk, optionally varying per chunk
/// (the schedule repeats cyclically).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeBudget {
    pub capacity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
}

impl ComputeBudget {
    pub fn constant(capacity: f64) -> Result<Self> {
        let b = ComputeBudget {
            capacity,
            schedule: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |c: f64| c.is_finite() && c >= 0.0;
        if !ok(self.capacity) || self.schedule.iter().flatten().any(|c| !ok(*c)) {
            return Err(Error::Config(
                "compute capacity must be finite and >= 0".into(),
            ));
        }
        if self.schedule.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(Error::Config("compute schedule must not be empty".into()));
        }
        Ok(())
    }

    pub fn capacity_at(&self, chunk: usize) -> f64 {
        match &self.schedule {
            Some(s) if !s.is_empty() => s[chunk % s.len()],
            _ => self.capacity,
        }
    }
}
