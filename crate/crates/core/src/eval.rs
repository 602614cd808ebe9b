//! Episode runners and metric summaries shared by tests and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{forward_policy, greedy_action, sample_action, PolicyParams};
use crate::baselines::{Baseline, BaselineConfig};
use crate::error::{Error, Result};
use crate::sim::{state_vector, ChunkRecord, StepOutcome, StreamEnv, StreamState};

/// Anything that maps a state to an action index.
pub enum Controller {
    /// Most probable action of a trained policy.
    Greedy(PolicyParams),
    /// Action sampled from a trained policy.
    Stochastic(PolicyParams, ChaCha8Rng),
    /// Uniformly random action.
    Random(ChaCha8Rng),
    Baseline(Baseline, BaselineConfig),
}

impl Controller {
    pub fn random(seed: u64) -> Self {
        Controller::Random(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn choose(&mut self, state: &StreamState) -> Result<usize> {
        match self {
            Controller::Greedy(p) => Ok(greedy_action(&forward_policy(p, &state_vector(state))?)),
            Controller::Stochastic(p, rng) => {
                sample_action(&forward_policy(p, &state_vector(state))?, rng)
            }
            Controller::Random(rng) => Ok(rng.random_range(0..state.action_count())),
            Controller::Baseline(b, c) => Ok(b.select(state, c)),
        }
    }
}

/// Plays one full episode from a fresh reset.
pub fn run_episode(env: &mut StreamEnv, controller: &mut Controller) -> Result<Vec<StepOutcome>> {
    let mut state = env.reset()?;
    let mut out = Vec::with_capacity(state.chunks_remaining);
    loop {
        let action = controller.choose(&state)?;
        let (next, step) = env.step(action)?;
        let done = step.done;
        out.push(step);
        state = next;
        if done {
            return Ok(out);
        }
    }
}

/// Aggregates of a chunk log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub chunks: usize,
    pub mean_qoe: f64,
    pub mean_level: f64,
    pub mean_psnr: f64,
    pub total_rebuffer_s: f64,
    /// Downloaded megabits over total download time.
    pub mean_bandwidth_mbps: f64,
}

impl Summary {
    pub fn from_records(records: &[ChunkRecord]) -> Result<Summary> {
        if records.is_empty() {
            return Err(Error::Validation("no chunks to summarize".into()));
        }
        let n = records.len() as f64;
        let megabits: f64 = records.iter().map(|r| r.bytes as f64 * 8.0 / 1e6).sum();
        let download: f64 = records.iter().map(|r| r.download_s).sum();
        Ok(Summary {
            chunks: records.len(),
            mean_qoe: records.iter().map(|r| r.qoe).sum::<f64>() / n,
            mean_level: records.iter().map(|r| r.level as f64).sum::<f64>() / n,
            mean_psnr: records.iter().map(|r| r.psnr_sum).sum::<f64>() / n,
            total_rebuffer_s: records.iter().map(|r| r.rebuffer_s).sum(),
            mean_bandwidth_mbps: if download > 0.0 {
                megabits / download
            } else {
                0.0
            },
        })
    }
}

/// Runs `episodes` episodes and returns the per-chunk records of each.
pub fn evaluate(
    env: &mut StreamEnv,
    controller: &mut Controller,
    episodes: usize,
) -> Result<Vec<Vec<ChunkRecord>>> {
    (0..episodes)
        .map(|_| {
            Ok(run_episode(env, controller)?
                .iter()
                .map(StepOutcome::record)
                .collect())
        })
        .collect()
}

/// Mean per-episode QoE (mean of per-chunk QoE within each episode,
/// averaged over episodes).
pub fn mean_episode_qoe(episodes: &[Vec<ChunkRecord>]) -> f64 {
    let per: Vec<f64> = episodes
        .iter()
        .map(|e| e.iter().map(|r| r.qoe).sum::<f64>() / e.len().max(1) as f64)
        .collect();
    per.iter().sum::<f64>() / per.len().max(1) as f64
}

/// Mean squared error of the critic against discounted Monte-Carlo returns
/// on full episodes played with the stochastic policy.
pub fn critic_loss_on_episodes(
    params: &PolicyParams,
    env: &mut StreamEnv,
    episodes: usize,
    discount: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut count = 0usize;
    for _ in 0..episodes {
        let mut state = env.reset()?;
        let mut values = Vec::new();
        let mut rewards = Vec::new();
        loop {
            let features = state_vector(&state);
            values.push(crate::agent::value(params, &features)?);
            let action = sample_action(&forward_policy(params, &features)?, &mut rng)?;
            let (next, step) = env.step(action)?;
            rewards.push(step.reward);
            state = next;
            if step.done {
                break;
            }
        }
        let returns = crate::agent::compute_returns(&rewards, discount, 0.0);
        for (r, v) in returns.iter().zip(&values) {
            sum += (r - v) * (r - v);
        }
        count += values.len();
    }
    Ok(sum / count.max(1) as f64)
}
