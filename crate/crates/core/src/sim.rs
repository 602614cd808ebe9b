//! Discrete-event streaming environment.
//!
//! Each step downloads one chunk, then decodes it; both phases drain the
//! playback buffer. Playback starts once the buffer reaches the startup
//! threshold. When a finished chunk would overflow the buffer, the player
//! idles until it fits, so every simulated second is either startup,
//! playback or stall:
//!
//! ```text
//! end time = startup delay + total stall + chunks * chunk duration
//! ```

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{chunk_size_vector, Action, TileManifest, TileSet};
use crate::prediction::{ewma_predict, EwmaState, FovPredictor, FovWindow, LastFov, LinearFov};
use crate::qoe::{decode_penalty, qoe_score, ChunkOutcome, QoeWeights, WeightTable};
use crate::select::{
    realize_plan, viewer_distance, visible_tiles, Budget, FrustumConfig, SelectionPlan,
};
use crate::traces::{BandwidthSample, BandwidthTrace, ComputeBudget, FovTrace, Pose};

/// Past throughput measurements fed to the agent.
pub const BW_HISTORY_LEN: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FovPredictorKind {
    Last,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlayerConfig {
    pub buffer_capacity_ms: f64,
    /// Buffer level at which playback starts; `None` means one chunk.
    pub startup_threshold_ms: Option<f64>,
    /// Seeds the per-episode bandwidth replay offset.
    pub seed: u64,
    /// Start each episode at a random point of the bandwidth trace.
    pub random_trace_offset: bool,
    /// Lowest quality level the client accepts.
    pub quality_floor: Option<u8>,
    pub frustum: FrustumConfig,
    pub ewma_smoothing: f64,
    pub fov_window: usize,
    pub fov_predictor: FovPredictorKind,
}

impl Default for PlayerConfig {
    fn default() -> Self {
        PlayerConfig {
            buffer_capacity_ms: 5000.0,
            startup_threshold_ms: None,
            seed: 0,
            random_trace_offset: false,
            quality_floor: None,
            frustum: FrustumConfig::default(),
            ewma_smoothing: crate::prediction::DEFAULT_SMOOTHING,
            fov_window: crate::prediction::DEFAULT_FOV_WINDOW,
            fov_predictor: FovPredictorKind::Linear,
        }
    }
}

/// What the controller sees before choosing the next chunk.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState {
    /// Action index of the previous chunk.
    pub last_action: usize,
    pub buffer_ms: f64,
    pub predicted_bw_mbps: f64,
    pub last_download_s: f64,
    /// Chunk bytes per action (visible tiles at the action's variant).
    pub next_sizes: Vec<u64>,
    pub chunks_remaining: usize,
    pub total_chunks: usize,
    /// Most recent throughput measurements in Mbps, oldest first.
    pub bw_history: VecDeque<f64>,
    pub levels: u8,
    pub chunk_duration_ms: f64,
    pub buffer_capacity_ms: f64,
    /// Per-action lookahead for model-based controllers.
    pub menu: ActionMenu,
}

/// Predicted consequences of each action for the next chunk, computed from
/// the predicted viewport.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActionMenu {
    /// Bytes after the compute-feasibility adjustment.
    pub plan_bytes: Vec<u64>,
    pub decode_s: Vec<f64>,
    pub fov_psnr_sum: Vec<f64>,
    pub weights: Option<QoeWeights>,
}

impl StreamState {
    pub fn action_count(&self) -> usize {
        2 * self.levels as usize
    }

    /// Feature count of [`state_vector`] for `levels` quality levels.
    pub fn feature_len(levels: u8) -> usize {
        let actions = 2 * levels as usize;
        BW_HISTORY_LEN + actions + actions + 3
    }
}

/// Normalized features, laid out as
/// `[bandwidth history (12) | next sizes (2L) | buffer, download, remaining | last action one-hot (2L)]`.
pub fn state_vector(state: &StreamState) -> Vec<f64> {
    let actions = state.action_count();
    let mut v = Vec::with_capacity(StreamState::feature_len(state.levels));
    let pad = BW_HISTORY_LEN.saturating_sub(state.bw_history.len());
    v.extend(std::iter::repeat_n(0.0, pad));
    v.extend(
        state
            .bw_history
            .iter()
            .skip(state.bw_history.len().saturating_sub(BW_HISTORY_LEN))
            .map(|b| b / 100.0),
    );
    v.extend(state.next_sizes.iter().map(|s| *s as f64 / 1e6));
    v.push(state.buffer_ms / state.buffer_capacity_ms);
    v.push(state.last_download_s / 10.0);
    v.push(if state.total_chunks == 0 {
        0.0
    } else {
        state.chunks_remaining as f64 / state.total_chunks as f64
    });
    v.extend((0..actions).map(|a| if a == state.last_action { 1.0 } else { 0.0 }));
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub chunk: usize,
    pub action: Action,
    pub action_index: usize,
    pub outcome: ChunkOutcome,
    pub weights: QoeWeights,
    pub reward: f64,
    pub bytes: u64,
    pub download_s: f64,
    pub decode_s: f64,
    /// Idle time waiting for buffer room.
    pub sleep_s: f64,
    /// Total simulated time consumed by the step.
    pub wall_advance_s: f64,
    /// The plan overran the predicted byte budget.
    pub infeasible: bool,
    pub done: bool,
}

impl StepOutcome {
    pub fn record(&self) -> ChunkRecord {
        ChunkRecord {
            chunk: self.chunk,
            level: self.action.level,
            compressed: self.action.compressed as u8,
            bytes: self.bytes,
            download_s: self.download_s,
            decode_s: self.decode_s,
            rebuffer_s: self.outcome.rebuffer,
            psnr_sum: self.outcome.fov_psnr_sum,
            delta_l: self.outcome.level_change,
            qoe: self.reward,
        }
    }
}

/// One row of the per-chunk metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk: usize,
    pub level: u8,
    pub compressed: u8,
    pub bytes: u64,
    pub download_s: f64,
    pub decode_s: f64,
    pub rebuffer_s: f64,
    pub psnr_sum: f64,
    pub delta_l: f64,
    pub qoe: f64,
}

pub const CHUNK_LOG_HEADER: &str =
    "chunk,level,compressed,bytes,download_s,decode_s,rebuffer_s,psnr_sum,delta_l,qoe";

/// Writes chunk records as CSV (header included).
pub fn write_chunk_log<W: Write>(writer: W, records: &[ChunkRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in records {
        wtr.serialize(r)?;
    }
    if records.is_empty() {
        wtr.write_record(CHUNK_LOG_HEADER.split(','))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Time accounting of the current episode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Clock {
    pub now_s: f64,
    pub startup_s: f64,
    pub rebuffer_s: f64,
    pub playing: bool,
}

#[derive(Clone)]
pub struct StreamEnv {
    manifest: Arc<TileManifest>,
    bandwidth: Arc<BandwidthTrace>,
    fov: Arc<FovTrace>,
    compute: ComputeBudget,
    weights: WeightTable,
    config: PlayerConfig,
    rng: ChaCha8Rng,
    trace_offset_s: f64,
    clock: Clock,
    chunk: usize,
    observations: Vec<BandwidthSample>,
    predicted_visible: TileSet,
    state: Option<StreamState>,
}

impl StreamEnv {
    pub fn new(
        manifest: Arc<TileManifest>,
        bandwidth: Arc<BandwidthTrace>,
        fov: Arc<FovTrace>,
        compute: ComputeBudget,
        config: PlayerConfig,
    ) -> Result<Self> {
        compute.validate()?;
        config.frustum.validate()?;
        EwmaState::new(config.ewma_smoothing)?;
        let chunk_ms = manifest.chunk_duration_ms as f64;
        if !(config.buffer_capacity_ms >= chunk_ms) {
            return Err(Error::Config(format!(
                "buffer capacity {} ms is below the chunk duration {chunk_ms} ms",
                config.buffer_capacity_ms
            )));
        }
        if let Some(t) = config.startup_threshold_ms {
            if !(t >= 0.0 && t <= config.buffer_capacity_ms) {
                return Err(Error::Config(
                    "startup threshold must be within [0, capacity]".into(),
                ));
            }
        }
        if let Some(floor) = config.quality_floor {
            if floor == 0 || floor > manifest.levels() {
                return Err(Error::Config(format!(
                    "quality floor {floor} outside 1..={}",
                    manifest.levels()
                )));
            }
        }
        if config.fov_window == 0 {
            return Err(Error::Config(
                "viewport window must hold at least one sample".into(),
            ));
        }
        let video_s = manifest.chunk_count as f64 * manifest.chunk_duration_s();
        if bandwidth.span() < video_s || fov.span() < video_s {
            return Err(Error::Config(format!(
                "traces cover {:.3} s (bandwidth) and {:.3} s (viewport), video needs {video_s:.3} s",
                bandwidth.span(),
                fov.span()
            )));
        }
        let tiles = manifest.tile_count();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(StreamEnv {
            manifest,
            bandwidth,
            fov,
            compute,
            weights: WeightTable::default(),
            config,
            rng,
            trace_offset_s: 0.0,
            clock: Clock::default(),
            chunk: 0,
            observations: Vec::new(),
            predicted_visible: TileSet::empty(tiles),
            state: None,
        })
    }

    pub fn with_weights(mut self, weights: WeightTable) -> Self {
        self.weights = weights;
        self
    }

    pub fn manifest(&self) -> &TileManifest {
        &self.manifest
    }

    pub fn config(&self) -> &PlayerConfig {
        &self.config
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn state(&self) -> Option<&StreamState> {
        self.state.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.state.as_ref().is_none_or(|s| s.chunks_remaining == 0)
    }

    /// Simulated time at which playback of the last chunk finishes.
    pub fn episode_end_s(&self) -> f64 {
        let buffer = self.state.as_ref().map_or(0.0, |s| s.buffer_ms / 1000.0);
        self.clock.now_s + buffer
    }

    fn chunk_duration_s(&self) -> f64 {
        self.manifest.chunk_duration_s()
    }

    fn startup_threshold_ms(&self) -> f64 {
        self.config
            .startup_threshold_ms
            .unwrap_or(self.manifest.chunk_duration_ms as f64)
    }

    pub fn reset(&mut self) -> Result<StreamState> {
        self.trace_offset_s = if self.config.random_trace_offset && self.bandwidth.span() > 0.0 {
            self.rng.random::<f64>() * self.bandwidth.span()
        } else {
            0.0
        };
        self.clock = Clock::default();
        self.chunk = 0;
        self.observations.clear();
        let levels = self.manifest.levels();
        let total = self.manifest.chunk_count;
        let mut state = StreamState {
            last_action: 0,
            buffer_ms: 0.0,
            // No measurement yet: start from the throughput at replay start.
            predicted_bw_mbps: self.bandwidth.throughput_at(self.trace_offset_s),
            last_download_s: 0.0,
            next_sizes: Vec::new(),
            chunks_remaining: total,
            total_chunks: total,
            bw_history: VecDeque::with_capacity(BW_HISTORY_LEN),
            levels,
            chunk_duration_ms: self.manifest.chunk_duration_ms as f64,
            buffer_capacity_ms: self.config.buffer_capacity_ms,
            menu: ActionMenu::default(),
        };
        self.prepare_chunk(&mut state)?;
        self.state = Some(state.clone());
        Ok(state)
    }

    fn video_time(&self, chunk: usize) -> f64 {
        chunk as f64 * self.chunk_duration_s()
    }

    fn actual_pose(&self, chunk: usize) -> Pose {
        self.fov
            .pose_at(self.video_time(chunk) + self.chunk_duration_s() / 2.0)
    }

    fn predicted_pose(&self, chunk: usize) -> Result<Pose> {
        let target = self.video_time(chunk) + self.chunk_duration_s() / 2.0;
        // Viewport samples are known up to one chunk before playback.
        let known_until = (self.video_time(chunk) - self.chunk_duration_s()).max(0.0);
        let mut window = FovWindow::new(self.config.fov_window);
        for s in self.fov.history(known_until, self.config.fov_window) {
            window.push(s.ts_s, s.pose);
        }
        let horizon = target - window.newest().map_or(known_until, |(t, _)| *t);
        match self.config.fov_predictor {
            FovPredictorKind::Last => LastFov.predict(&window, horizon),
            FovPredictorKind::Linear => LinearFov {
                fallback_to_last: true,
            }
            .predict(&window, horizon),
        }
    }

    fn apply_floor(&self, action: Action) -> Action {
        match self.config.quality_floor {
            Some(floor) if action.level < floor => Action::new(floor, action.compressed),
            _ => action,
        }
    }

    /// Fills the next-chunk view of the state from the predicted viewport.
    fn prepare_chunk(&mut self, state: &mut StreamState) -> Result<()> {
        if state.chunks_remaining == 0 {
            state.next_sizes = vec![0; state.action_count()];
            state.menu = ActionMenu::default();
            return Ok(());
        }
        let chunk = self.chunk;
        let pose = self.predicted_pose(chunk)?;
        self.predicted_visible = visible_tiles(&self.manifest, &pose, &self.config.frustum);
        state.next_sizes = chunk_size_vector(&self.manifest, chunk, &self.predicted_visible);

        let capacity = self.compute.capacity_at(chunk);
        let budget =
            Budget::from_bandwidth(state.predicted_bw_mbps, self.chunk_duration_s(), capacity);
        let distance = viewer_distance(&self.manifest, &pose);
        let mut menu = ActionMenu {
            weights: self.weights.for_distance(distance.max(1e-9)).ok(),
            ..Default::default()
        };
        for index in 0..state.action_count() {
            let action = self.apply_floor(Action::from_index(index, state.levels)?);
            let plan = realize_plan(
                &self.manifest,
                chunk,
                &self.predicted_visible,
                action,
                &budget,
            );
            menu.plan_bytes.push(plan.total_bytes);
            menu.decode_s.push(self.decode_time(&plan, capacity));
            menu.fov_psnr_sum
                .push(self.psnr_in_view(chunk, &plan, &self.predicted_visible));
        }
        state.menu = menu;
        Ok(())
    }

    fn decode_time(&self, plan: &SelectionPlan, capacity: f64) -> f64 {
        if plan.total_decode_cost <= 0.0 {
            0.0
        } else if capacity <= 0.0 {
            f64::INFINITY
        } else {
            plan.total_decode_cost / capacity * self.chunk_duration_s()
        }
    }

    fn psnr_in_view(&self, chunk: usize, plan: &SelectionPlan, seen: &TileSet) -> f64 {
        seen.iter()
            .map(|tile| {
                self.manifest
                    .variant(chunk, tile, plan.choices[tile].level)
                    .psnr
            })
            .sum()
    }

    pub fn step(&mut self, action_index: usize) -> Result<(StreamState, StepOutcome)> {
        let mut state = self
            .state
            .clone()
            .ok_or_else(|| Error::Config("step before reset".into()))?;
        if state.chunks_remaining == 0 {
            return Err(Error::Exhausted);
        }
        let levels = state.levels;
        let action = self.apply_floor(Action::from_index(action_index, levels)?);
        let index = action.index(levels);
        let chunk = self.chunk;
        let dur_s = self.chunk_duration_s();
        let capacity = self.compute.capacity_at(chunk);

        let budget = Budget::from_bandwidth(state.predicted_bw_mbps, dur_s, capacity);
        let plan = realize_plan(
            &self.manifest,
            chunk,
            &self.predicted_visible,
            action,
            &budget,
        );
        let megabits = plan.total_bytes as f64 * 8.0 / 1e6;
        let download_s = self
            .bandwidth
            .transfer_time(self.trace_offset_s + self.clock.now_s, megabits)?;
        let decode_s = self.decode_time(&plan, capacity);
        if !decode_s.is_finite() {
            return Err(Error::NonFinite("decode time".into()));
        }
        let elapsed = download_s + decode_s;

        let capacity_ms = self.config.buffer_capacity_ms;
        let mut buffer_ms = state.buffer_ms;
        let rebuffer_s;
        if self.clock.playing {
            rebuffer_s = (elapsed - buffer_ms / 1000.0).max(0.0);
            buffer_ms = (buffer_ms - elapsed * 1000.0).max(0.0);
            self.clock.rebuffer_s += rebuffer_s;
        } else {
            rebuffer_s = 0.0;
            self.clock.startup_s += elapsed;
        }
        buffer_ms += self.manifest.chunk_duration_ms as f64;
        if !self.clock.playing && buffer_ms >= self.startup_threshold_ms() {
            self.clock.playing = true;
        }
        let mut sleep_s = 0.0;
        if buffer_ms > capacity_ms {
            sleep_s = (buffer_ms - capacity_ms) / 1000.0;
            buffer_ms = capacity_ms;
        }
        let download_end = self.clock.now_s + download_s;
        self.clock.now_s += elapsed + sleep_s;

        let throughput = if download_s > 0.0 {
            megabits / download_s
        } else {
            state.predicted_bw_mbps
        };
        self.observations.push(BandwidthSample {
            ts_s: download_end,
            mbps: throughput,
        });
        if state.bw_history.len() == BW_HISTORY_LEN {
            state.bw_history.pop_front();
        }
        state.bw_history.push_back(throughput);
        let ewma = EwmaState::new(self.config.ewma_smoothing)?;
        state.predicted_bw_mbps = ewma_predict(&ewma, &self.observations)?;

        let pose = self.actual_pose(chunk);
        let seen = visible_tiles(&self.manifest, &pose, &self.config.frustum);
        let distance = viewer_distance(&self.manifest, &pose);
        let weights = self.weights.for_distance(distance.max(1e-9))?;
        let outcome = ChunkOutcome {
            fov_psnr_sum: self.psnr_in_view(chunk, &plan, &seen),
            level: action.level as f64,
            rebuffer: rebuffer_s,
            level_change: index.abs_diff(state.last_action) as f64,
            decode_penalty: decode_penalty(decode_s, dur_s),
            viewer_distance: distance,
        };
        let reward = qoe_score(&outcome, &weights);

        state.buffer_ms = buffer_ms;
        state.last_action = index;
        state.last_download_s = download_s;
        state.chunks_remaining -= 1;
        self.chunk += 1;
        self.prepare_chunk(&mut state)?;
        self.state = Some(state.clone());

        let step = StepOutcome {
            chunk,
            action,
            action_index: index,
            outcome,
            weights,
            reward,
            bytes: plan.total_bytes,
            download_s,
            decode_s,
            sleep_s,
            wall_advance_s: elapsed + sleep_s,
            infeasible: !plan.bandwidth_feasible,
            done: state.chunks_remaining == 0,
        };
        Ok((state, step))
    }
}
