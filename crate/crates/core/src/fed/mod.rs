//! Federated training: client sampling, FedAvg aggregation and the round
//! loop.
//!
//! Clients exchange gradients, not weights. Every selected client starts
//! the round from the current global model, runs `E` environment steps and
//! returns the gradient sums of its rollout. The server averages them and
//! takes one SGD step on the global model. With SGD this is the same as
//! averaging the weights each client would reach after its own step with
//! the same learning rate.

pub mod wire;

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{apply_update, local_gradients, ArchSpec, Hyperparams, LossStats, PolicyParams};
use crate::error::{Error, Result};
use crate::sim::StreamEnv;

pub use crate::agent::GradientUpdate;
pub use wire::Message;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedConfig {
    /// Number of clients `K`.
    pub clients: usize,
    /// Participation ratio `mu` in `(0, 1]`.
    pub participation: f64,
    pub rounds: usize,
    /// Per-client aggregation weights; uniform when absent.
    pub client_weights: Option<Vec<f64>>,
    pub seed: u64,
    /// Divide the weighted sum by `mu * K` instead of the participants'
    /// total weight.
    pub strict_denominator: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            clients: 4,
            participation: 1.0,
            rounds: 100,
            client_weights: None,
            seed: 0,
            strict_denominator: false,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("at least one client is required".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::Config(
                "participation ratio must be in (0, 1]".into(),
            ));
        }
        if let Some(w) = &self.client_weights {
            if w.len() != self.clients {
                return Err(Error::Config(format!(
                    "{} client weights for {} clients",
                    w.len(),
                    self.clients
                )));
            }
            if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Config("client weights must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Participants per round, `max(ceil(mu * K), 1)`.
    pub fn participants(&self) -> usize {
        ((self.participation * self.clients as f64).ceil() as usize).clamp(1, self.clients)
    }

    pub fn weight(&self, client: usize) -> f64 {
        self.client_weights.as_ref().map_or(1.0, |w| w[client])
    }
}

/// Seed of a client's private RNG.
pub fn client_seed(seed: u64, client: usize) -> u64 {
    splitmix(seed ^ splitmix(client as u64 + 1))
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform sample of `m` distinct clients for a round, ascending.
pub fn select_clients(config: &FedConfig, round: u32) -> Vec<usize> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(splitmix(config.seed.wrapping_add(splitmix(round as u64))));
    let mut ids =
        rand::seq::index::sample(&mut rng, config.clients, config.participants()).into_vec();
    ids.sort_unstable();
    ids
}

/// Weighted elementwise mean of client updates. `denominator` overrides the
/// total participant weight.
pub fn fedavg(
    updates: &[GradientUpdate],
    weights: &[f64],
    denominator: Option<f64>,
) -> Result<GradientUpdate> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Round("no updates to aggregate".into()))?;
    if weights.len() != updates.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} updates",
            weights.len(),
            updates.len()
        )));
    }
    for u in updates {
        if u.actor.len() != first.actor.len() || u.critic.len() != first.critic.len() {
            return Err(Error::Shape(format!(
                "update from client {} has mismatched shape",
                u.client_id
            )));
        }
        if !u.is_finite() {
            return Err(Error::NonFinite(format!(
                "update from client {}",
                u.client_id
            )));
        }
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Config("aggregation weights must be > 0".into()));
    }
    let total = denominator.unwrap_or_else(|| weights.iter().sum());
    let mut out = GradientUpdate {
        client_id: u32::MAX,
        round: first.round,
        samples: updates.iter().map(|u| u.samples).sum(),
        actor: vec![0.0; first.actor.len()],
        critic: vec![0.0; first.critic.len()],
    };
    for (u, w) in updates.iter().zip(weights) {
        let share = w / total;
        for (o, g) in out.actor.iter_mut().zip(&u.actor) {
            *o += share * g;
        }
        for (o, g) in out.critic.iter_mut().zip(&u.critic) {
            *o += share * g;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub participants: usize,
    pub failed: usize,
    pub steps: usize,
    pub mean_reward: f64,
    pub critic_loss: f64,
    pub mean_entropy: f64,
    pub episodes_finished: usize,
}

pub struct Client {
    pub id: usize,
    pub env: StreamEnv,
    rng: ChaCha8Rng,
}

impl Client {
    pub fn new(id: usize, env: StreamEnv, seed: u64) -> Self {
        Client {
            id,
            env,
            rng: ChaCha8Rng::seed_from_u64(client_seed(seed, id)),
        }
    }

    pub fn local_round(
        &mut self,
        global: &PolicyParams,
        hyper: &Hyperparams,
        round: u32,
    ) -> Result<(GradientUpdate, LossStats, usize)> {
        let (mut update, stats, outcomes) =
            local_gradients(global, &mut self.env, &mut self.rng, hyper)?;
        update.client_id = self.id as u32;
        update.round = round;
        let finished = outcomes.iter().filter(|o| o.done).count();
        Ok((update, stats, finished))
    }
}

/// Averages the updates and applies them to the global model.
pub fn aggregate_and_apply(
    global: &mut PolicyParams,
    updates: &[GradientUpdate],
    config: &FedConfig,
    hyper: &Hyperparams,
) -> Result<GradientUpdate> {
    let weights: Vec<f64> = updates
        .iter()
        .map(|u| config.weight(u.client_id as usize))
        .collect();
    let denominator = config
        .strict_denominator
        .then(|| config.participation * config.clients as f64);
    let aggregate = fedavg(updates, &weights, denominator)?;
    apply_update(global, &aggregate, hyper)?;
    Ok(aggregate)
}

/// In-process federation: every client owns its environment and RNG, the
/// server owns the global model.
pub struct FedTrainer {
    pub global: PolicyParams,
    pub hyper: Hyperparams,
    pub config: FedConfig,
    pub clients: Vec<Client>,
    round: u32,
}

impl FedTrainer {
    pub fn new(
        global: PolicyParams,
        hyper: Hyperparams,
        config: FedConfig,
        mut env_factory: impl FnMut(usize) -> Result<StreamEnv>,
    ) -> Result<Self> {
        config.validate()?;
        hyper.validate()?;
        global.check_shapes()?;
        let clients = (0..config.clients)
            .map(|id| Ok(Client::new(id, env_factory(id)?, config.seed)))
            .collect::<Result<Vec<_>>>()?;
        Ok(FedTrainer {
            global,
            hyper,
            config,
            clients,
            round: 0,
        })
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let round = self.round;
        let selected = select_clients(&self.config, round);
        let global = &self.global;
        let hyper = &self.hyper;
        let results: Vec<_> = self
            .clients
            .par_iter_mut()
            .filter(|c| selected.binary_search(&c.id).is_ok())
            .map(|c| c.local_round(global, hyper, round))
            .collect();

        let mut metrics = RoundMetrics {
            round,
            participants: selected.len(),
            ..Default::default()
        };
        let mut updates = Vec::with_capacity(results.len());
        let mut reward_sum = 0.0;
        let mut loss_sum = 0.0;
        let mut entropy_sum = 0.0;
        for r in results {
            match r {
                Ok((update, stats, finished)) => {
                    let n = update.samples as f64;
                    metrics.steps += update.samples as usize;
                    reward_sum += stats.mean_reward * n;
                    loss_sum += stats.critic_loss * n;
                    entropy_sum += stats.mean_entropy * n;
                    metrics.episodes_finished += finished;
                    updates.push(update);
                }
                Err(_) => metrics.failed += 1,
            }
        }
        if updates.is_empty() {
            return Err(Error::Round(format!(
                "all {} selected clients failed in round {round}",
                selected.len()
            )));
        }
        aggregate_and_apply(&mut self.global, &updates, &self.config, &self.hyper)?;
        let steps = metrics.steps.max(1) as f64;
        metrics.mean_reward = reward_sum / steps;
        metrics.critic_loss = loss_sum / steps;
        metrics.mean_entropy = entropy_sum / steps;
        self.round += 1;
        Ok(metrics)
    }

    /// Runs a round with clients reached over byte streams, indexed by
    /// client id. Clients that fail to answer are dropped from the round.
    pub fn run_remote_round<S: Read + Write>(&mut self, streams: &mut [S]) -> Result<RoundMetrics> {
        if streams.len() != self.config.clients {
            return Err(Error::Config(format!(
                "{} streams for {} clients",
                streams.len(),
                self.config.clients
            )));
        }
        let round = self.round;
        let selected = select_clients(&self.config, round);
        let mut sent = Vec::with_capacity(selected.len());
        for &id in &selected {
            let stream = &mut streams[id];
            let ok = wire::write_message(
                stream,
                &Message::RoundBegin {
                    round,
                    client: id as u32,
                },
            )
            .and_then(|_| {
                wire::write_message(
                    stream,
                    &Message::global_model(round, id as u32, &self.global),
                )
            });
            sent.push(ok.is_ok());
        }
        let mut updates = Vec::with_capacity(selected.len());
        for (&id, ok) in selected.iter().zip(sent) {
            if !ok {
                continue;
            }
            if let Ok(Message::Update(u)) = wire::read_message(&mut streams[id]) {
                if u.round == round && u.client_id as usize == id {
                    updates.push(u);
                }
            }
        }
        let mut metrics = RoundMetrics {
            round,
            participants: selected.len(),
            failed: selected.len() - updates.len(),
            steps: updates.iter().map(|u| u.samples as usize).sum(),
            ..Default::default()
        };
        if updates.is_empty() {
            return Err(Error::Round(format!("no client answered in round {round}")));
        }
        aggregate_and_apply(&mut self.global, &updates, &self.config, &self.hyper)?;
        metrics.mean_reward = f64::NAN;
        self.round += 1;
        Ok(metrics)
    }
}

/// Client side of the wire protocol: answers every round until the stream
/// closes.
pub fn serve_client<S: Read + Write>(
    stream: &mut S,
    client: &mut Client,
    arch: &ArchSpec,
    hyper: &Hyperparams,
) -> Result<usize> {
    let mut rounds = 0;
    loop {
        let round = match wire::read_message(stream) {
            Ok(Message::RoundBegin { round, .. }) => round,
            Ok(other) => {
                return Err(Error::Protocol(format!(
                    "expected round-begin, got {other:?}"
                )))
            }
            Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                return Ok(rounds)
            }
            Err(e) => return Err(e),
        };
        let global = match wire::read_message(stream)? {
            Message::GlobalModel {
                round: r,
                actor,
                critic,
                iteration,
                ..
            } if r == round => {
                let params = PolicyParams {
                    arch: arch.clone(),
                    iteration,
                    actor,
                    critic,
                };
                params.check_shapes()?;
                params
            }
            other => {
                return Err(Error::Protocol(format!(
                    "expected global model for round {round}, got {other:?}"
                )))
            }
        };
        let (update, _, _) = client.local_round(&global, hyper, round)?;
        wire::write_message(stream, &Message::Update(update))?;
        rounds += 1;
    }
}
