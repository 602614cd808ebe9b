//! Synchronous advantage actor-critic.
//!
//! The actor maximizes `sum_t log pi(a_t | s_t) * (R_t - V(s_t)) + beta * H(pi(. | s_t))`,
//! the critic minimizes `sum_t (R_t - V(s_t))^2`, where `R_t` are bootstrapped
//! n-step returns over one local rollout. Parameters are updated with plain
//! SGD: ascent for the actor, descent for the critic.

pub mod network;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{state_vector, StepOutcome, StreamEnv};

pub use network::{ArchSpec, Layout};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub discount: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub entropy_start: f64,
    pub entropy_end: f64,
    /// Updates over which the entropy weight decays linearly.
    pub entropy_decay_iters: u64,
    /// Environment steps per local rollout.
    pub local_epochs: usize,
    /// Multiplier applied to rewards before computing returns.
    pub reward_scale: f64,
    /// Per-step L2 limit: an applied actor (or critic) gradient is rescaled
    /// to norm at most `local_epochs * max_grad_norm`.
    pub max_grad_norm: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            discount: 0.99,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            entropy_start: 5.0,
            entropy_end: 0.1,
            entropy_decay_iters: 300_000,
            local_epochs: 16,
            reward_scale: 1.0,
            max_grad_norm: Some(0.0625),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config("discount must be in (0, 1]".into()));
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local epochs must be >= 1".into()));
        }
        if !(self.entropy_start >= 0.0 && self.entropy_end >= 0.0) {
            return Err(Error::Config("entropy weights must be >= 0".into()));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::Config("reward scale must be > 0".into()));
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return Err(Error::Config("gradient norm limit must be > 0".into()));
        }
        Ok(())
    }

    /// Entropy weight after `iteration` updates: linear from start to end,
    /// then held.
    pub fn entropy_weight(&self, iteration: u64) -> f64 {
        if self.entropy_decay_iters == 0 || iteration >= self.entropy_decay_iters {
            return self.entropy_end;
        }
        let frac = iteration as f64 / self.entropy_decay_iters as f64;
        self.entropy_start + (self.entropy_end - self.entropy_start) * frac
    }
}

/// Actor and critic parameters plus the number of updates applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub arch: ArchSpec,
    pub iteration: u64,
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

impl PolicyParams {
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Layout::new(arch, arch.actions).init(&mut rng);
        let critic = Layout::new(arch, 1).init(&mut rng);
        Ok(PolicyParams {
            arch,
            iteration: 0,
            actor,
            critic,
        })
    }

    pub fn actor_layout(&self) -> Layout {
        Layout::new(self.arch, self.arch.actions)
    }

    pub fn critic_layout(&self) -> Layout {
        Layout::new(self.arch, 1)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (a, c) = (self.actor_layout().len(), self.critic_layout().len());
        if self.actor.len() != a || self.critic.len() != c {
            return Err(Error::Shape(format!(
                "parameters ({}, {}) do not match architecture ({a}, {c})",
                self.actor.len(),
                self.critic.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read(path)?)
    }

    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            params: self.clone(),
        })
        .expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        ck.params.arch.validate()?;
        ck.params.check_shapes()?;
        Ok(ck.params)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    #[serde(flatten)]
    params: PolicyParams,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn forward_policy(params: &PolicyParams, features: &[f64]) -> Result<Vec<f64>> {
    let cache = network::forward(&params.actor_layout(), &params.actor, features)?;
    Ok(softmax(&cache.output))
}

pub fn value(params: &PolicyParams, features: &[f64]) -> Result<f64> {
    Ok(network::forward(&params.critic_layout(), &params.critic, features)?.output[0])
}

/// Draws an action index from a probability vector.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::NonFinite("action distribution".into()));
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NonFinite("action distribution sums to zero".into()));
    }
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return Ok(i);
        }
    }
    Ok(probs
        .iter()
        .rposition(|p| *p > 0.0)
        .expect("positive mass exists"))
}

/// Most probable action, lowest index on ties.
pub fn greedy_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub features: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// Critic estimate when the step was taken.
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    pub steps: Vec<Transition>,
    /// Value of the state after the last step; 0 when the episode ended.
    pub bootstrap: f64,
}

impl Rollout {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Discounted returns `R_t = r_t + discount * R_{t+1}`, seeded with `bootstrap`.
pub fn compute_returns(rewards: &[f64], discount: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (slot, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + discount * acc;
        *slot = acc;
    }
    out
}

/// Gradients produced by one client for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientUpdate {
    pub client_id: u32,
    pub round: u32,
    /// Environment steps behind the gradients.
    pub samples: u32,
    /// Ascent direction of the actor objective.
    pub actor: Vec<f64>,
    /// Gradient of the critic's squared error.
    pub critic: Vec<f64>,
}

impl GradientUpdate {
    pub fn zeros(params: &PolicyParams) -> Self {
        GradientUpdate {
            client_id: 0,
            round: 0,
            samples: 0,
            actor: vec![0.0; params.actor.len()],
            critic: vec![0.0; params.critic.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.iter().chain(&self.critic).all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    /// Mean squared advantage, the critic's loss per step.
    pub critic_loss: f64,
    pub mean_entropy: f64,
    pub mean_reward: f64,
}

fn finite_or_block(grad: &[f64], layout: &Layout, which: &str) -> Result<()> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!(
            "{which} gradient, {}",
            layout.block_name(i)
        ))),
        None => Ok(()),
    }
}

/// Actor and critic gradients for one rollout.
pub fn accumulate_gradients(
    params: &PolicyParams,
    rollout: &Rollout,
    hyper: &Hyperparams,
) -> Result<(GradientUpdate, LossStats)> {
    params.check_shapes()?;
    let beta = hyper.entropy_weight(params.iteration);
    let actor_layout = params.actor_layout();
    let critic_layout = params.critic_layout();
    let scaled: Vec<f64> = rollout
        .steps
        .iter()
        .map(|s| s.reward * hyper.reward_scale)
        .collect();
    if scaled.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("rewards".into()));
    }
    let returns = compute_returns(&scaled, hyper.discount, rollout.bootstrap);

    let mut update = GradientUpdate::zeros(params);
    update.samples = rollout.steps.len() as u32;
    let mut stats = LossStats::default();
    for (step, ret) in rollout.steps.iter().zip(&returns) {
        let actor_cache = network::forward(&actor_layout, &params.actor, &step.features)?;
        let critic_cache = network::forward(&critic_layout, &params.critic, &step.features)?;
        let probs = softmax(&actor_cache.output);
        let advantage = ret - critic_cache.output[0];

        let entropy: f64 = -probs
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>();
        let d_logits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                let chosen = if j == step.action { 1.0 } else { 0.0 };
                let log_p = if p > 0.0 { p.ln() } else { 0.0 };
                advantage * (chosen - p) - beta * p * (log_p + entropy)
            })
            .collect();
        network::backward(
            &actor_layout,
            &params.actor,
            &actor_cache,
            &d_logits,
            &mut update.actor,
        );
        network::backward(
            &critic_layout,
            &params.critic,
            &critic_cache,
            &[-2.0 * advantage],
            &mut update.critic,
        );

        stats.critic_loss += advantage * advantage;
        stats.mean_entropy += entropy;
        stats.mean_reward += step.reward;
    }
    let n = rollout.steps.len().max(1) as f64;
    stats.critic_loss /= n;
    stats.mean_entropy /= n;
    stats.mean_reward /= n;
    finite_or_block(&update.actor, &actor_layout, "actor")?;
    finite_or_block(&update.critic, &critic_layout, "critic")?;
    Ok((update, stats))
}

/// Factor that brings `grad` down to L2 norm `limit`, or 1 if it is
/// already within it.
fn clip_factor(grad: &[f64], limit: Option<f64>) -> f64 {
    let Some(limit) = limit else { return 1.0 };
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > limit {
        limit / norm
    } else {
        1.0
    }
}

fn clip_limit(hyper: &Hyperparams) -> Option<f64> {
    hyper.max_grad_norm.map(|max| max * hyper.local_epochs as f64)
}

/// Applies the norm limit of `hyper` to an update.
pub fn clip_update(update: &mut GradientUpdate, hyper: &Hyperparams) {
    let limit = clip_limit(hyper);
    let fa = clip_factor(&update.actor, limit);
    update.actor.iter_mut().for_each(|g| *g *= fa);
    let fc = clip_factor(&update.critic, limit);
    update.critic.iter_mut().for_each(|g| *g *= fc);
}

/// One SGD step on the clipped update: `actor += lr_actor * g_actor`,
/// `critic -= lr_critic * g_critic`.
pub fn apply_update(params: &mut PolicyParams, update: &GradientUpdate, hyper: &Hyperparams) -> Result<()> {
    if update.actor.len() != params.actor.len() || update.critic.len() != params.critic.len() {
        return Err(Error::Shape(format!(
            "update ({}, {}) does not match parameters ({}, {})",
            update.actor.len(),
            update.critic.len(),
            params.actor.len(),
            params.critic.len()
        )));
    }
    let limit = clip_limit(hyper);
    let step_a = hyper.lr_actor * clip_factor(&update.actor, limit);
    let step_c = hyper.lr_critic * clip_factor(&update.critic, limit);
    for (p, g) in params.actor.iter_mut().zip(&update.actor) {
        *p += step_a * g;
    }
    for (p, g) in params.critic.iter_mut().zip(&update.critic) {
        *p -= step_c * g;
    }
    params.iteration += 1;
    Ok(())
}

/// Runs up to `steps` environment steps with actions sampled from the
/// policy, resetting the environment first if its episode is over. The
/// rollout stops early at the end of an episode.
pub fn collect_rollout<R: Rng + ?Sized>(
    params: &PolicyParams,
    env: &mut StreamEnv,
    rng: &mut R,
    steps: usize,
) -> Result<(Rollout, Vec<StepOutcome>)> {
    if env.is_done() {
        env.reset()?;
    }
    let mut state = env.state().cloned().expect("environment was reset");
    let mut rollout = Rollout::default();
    let mut outcomes = Vec::with_capacity(steps);
    for _ in 0..steps {
        let features = state_vector(&state);
        let probs = forward_policy(params, &features)?;
        let action = sample_action(&probs, rng)?;
        let v = value(params, &features)?;
        let (next, out) = env.step(action)?;
        rollout.steps.push(Transition {
            features,
            action,
            reward: out.reward,
            value: v,
        });
        let done = out.done;
        outcomes.push(out);
        state = next;
        if done {
            return Ok((rollout, outcomes));
        }
    }
    rollout.bootstrap = value(params, &state_vector(&state))?;
    Ok((rollout, outcomes))
}

/// One client's local work: copy of the model, one rollout, its gradients.
pub fn local_gradients<R: Rng + ?Sized>(
    params: &PolicyParams,
    env: &mut StreamEnv,
    rng: &mut R,
    hyper: &Hyperparams,
) -> Result<(GradientUpdate, LossStats, Vec<StepOutcome>)> {
    let (rollout, outcomes) = collect_rollout(params, env, rng, hyper.local_epochs)?;
    let (update, stats) = accumulate_gradients(params, &rollout, hyper)?;
    Ok((update, stats, outcomes))
}

/// Centralized A2C learner over a single environment.
pub struct A2c {
    pub params: PolicyParams,
    pub hyper: Hyperparams,
    pub env: StreamEnv,
    rng: ChaCha8Rng,
}

impl A2c {
    pub fn new(
        params: PolicyParams,
        hyper: Hyperparams,
        env: StreamEnv,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        params.check_shapes()?;
        Ok(A2c {
            params,
            hyper,
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn train_step(&mut self) -> Result<LossStats> {
        let (update, stats, _) =
            local_gradients(&self.params, &mut self.env, &mut self.rng, &self.hyper)?;
        apply_update(&mut self.params, &update, &self.hyper)?;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_params(seed: u64) -> PolicyParams {
        let arch = ArchSpec {
            history: 4,
            actions: 2,
            filters: 3,
            kernel: 2,
            scalar_units: 3,
            hidden: 5,
        };
        PolicyParams::init(arch, seed).unwrap()
    }

    #[test]
    fn zero_head_is_uniform() {
        let p = PolicyParams::init(ArchSpec::standard(5), 3).unwrap();
        let x: Vec<f64> = (0..35).map(|i| (i as f64).sin()).collect();
        let probs = forward_policy(&p, &x).unwrap();
        for q in &probs {
            assert!((q - 0.1).abs() < 1e-15);
        }
        assert_eq!(forward_policy(&p, &x).unwrap(), probs);
    }

    #[test]
    fn sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert_eq!(sample_action(&[0.0, 0.0, 1.0, 0.0], &mut rng).unwrap(), 2);
        }
        assert!(sample_action(&[f64::NAN, 0.5], &mut rng).is_err());
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let probs = [0.2, 0.3, 0.5];
        for _ in 0..50 {
            assert_eq!(
                sample_action(&probs, &mut a).unwrap(),
                sample_action(&probs, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn returns_examples() {
        assert_eq!(
            compute_returns(&[1.0, 1.0, 1.0], 1.0, 0.0),
            vec![3.0, 2.0, 1.0]
        );
        assert!((compute_returns(&[2.0], 0.99, 10.0)[0] - 11.9).abs() < 1e-12);
        assert_eq!(
            compute_returns(&[4.0, -1.0, 2.5], 0.0, 7.0),
            vec![4.0, -1.0, 2.5]
        );
    }

    #[test]
    fn entropy_schedule() {
        let h = Hyperparams::default();
        assert_eq!(h.entropy_weight(0), 5.0);
        assert!((h.entropy_weight(150_000) - 2.55).abs() < 1e-12);
        assert!((h.entropy_weight(300_000) - 0.1).abs() < 1e-15);
        assert!((h.entropy_weight(10_000_000) - 0.1).abs() < 1e-15);
    }

    fn rollout_with(params: &PolicyParams, rewards: &[f64], bootstrap: f64) -> Rollout {
        let n = params.arch.feature_len();
        let steps = rewards
            .iter()
            .enumerate()
            .map(|(t, &r)| Transition {
                features: (0..n)
                    .map(|i| ((i * 7 + t * 3) as f64 * 0.37).sin())
                    .collect(),
                action: t % params.arch.actions,
                reward: r,
                value: 0.0,
            })
            .collect();
        Rollout { steps, bootstrap }
    }

    #[test]
    fn zero_advantage_and_no_entropy_gives_zero_actor_gradient() {
        // Zero head: V = 0 everywhere, so zero rewards and bootstrap give A = 0.
        let p = tiny_params(1);
        let h = Hyperparams {
            entropy_start: 0.0,
            entropy_end: 0.0,
            ..Hyperparams::default()
        };
        let (u, _) =
            accumulate_gradients(&p, &rollout_with(&p, &[0.0, 0.0, 0.0], 0.0), &h).unwrap();
        assert!(u.actor.iter().all(|g| *g == 0.0));
        // Perfect critic as well.
        assert!(u.critic.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn apply_update_arithmetic() {
        let mut p = tiny_params(2);
        let original = p.clone();
        let h = Hyperparams::default();
        apply_update(&mut p, &GradientUpdate::zeros(&original), &h).unwrap();
        assert_eq!(p.actor, original.actor);
        assert_eq!(p.critic, original.critic);

        let mut u = GradientUpdate::zeros(&original);
        u.actor[0] = 2.0;
        u.critic[0] = 3.0;
        let unclipped = Hyperparams {
            max_grad_norm: None,
            ..h.clone()
        };
        let mut q = original.clone();
        apply_update(&mut q, &u, &unclipped).unwrap();
        assert_eq!(q.actor[0], original.actor[0] + 1e-4 * 2.0);
        assert_eq!(q.critic[0], original.critic[0] - 1e-3 * 3.0);

        // Default limit is 0.0625 * 16 = 1, so both steps shrink to unit norm.
        let mut c = original.clone();
        apply_update(&mut c, &u, &h).unwrap();
        assert!((c.actor[0] - (original.actor[0] + 1e-4)).abs() < 1e-15);
        assert!((c.critic[0] - (original.critic[0] - 1e-3)).abs() < 1e-15);

        let bad = GradientUpdate {
            actor: vec![0.0; 1],
            ..u.clone()
        };
        assert!(matches!(
            apply_update(&mut q, &bad, &h),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn update_and_inverse_cancel() {
        let original = tiny_params(3);
        let h = Hyperparams::default();
        let (u, _) = accumulate_gradients(
            &original,
            &rollout_with(&original, &[1.0, -2.0, 0.5], 0.3),
            &h,
        )
        .unwrap();
        let neg = GradientUpdate {
            actor: u.actor.iter().map(|g| -g).collect(),
            critic: u.critic.iter().map(|g| -g).collect(),
            ..u.clone()
        };
        let mut p = original.clone();
        apply_update(&mut p, &u, &h).unwrap();
        apply_update(&mut p, &neg, &h).unwrap();
        for (a, b) in p
            .actor
            .iter()
            .chain(&p.critic)
            .zip(original.actor.iter().chain(&original.critic))
        {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut p = tiny_params(4);
        p.iteration = 17;
        let back = PolicyParams::from_checkpoint_json(p.to_checkpoint_json().as_bytes()).unwrap();
        assert_eq!(back, p);
        let mut broken = p.clone();
        broken.actor.pop();
        assert!(
            PolicyParams::from_checkpoint_json(broken.to_checkpoint_json().as_bytes()).is_err()
        );
    }

    #[test]
    fn clipping_scales_with_local_epochs() {
        let p0 = tiny_params(6);
        let mut u = GradientUpdate::zeros(&p0);
        u.actor[0] = 300.0;
        u.actor[1] = 400.0;
        u.critic[0] = 1.0;
        let h = Hyperparams {
            max_grad_norm: Some(2.5),
            local_epochs: 2,
            ..Hyperparams::default()
        };
        clip_update(&mut u, &h);
        assert!((u.actor[0] - 3.0).abs() < 1e-12);
        assert!((u.actor[1] - 4.0).abs() < 1e-12);
        assert_eq!(u.critic[0], 1.0);
    }
}
