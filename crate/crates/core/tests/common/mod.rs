//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls the library code it is used to
//! check.

#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volumetric_abr::agent::{A2c, ArchSpec, Hyperparams, PolicyParams, Rollout};
use volumetric_abr::fed::{client_seed, FedConfig, FedTrainer};
use volumetric_abr::media::{SizeProfile, TileGrid, TileManifest, TileVariant};
use volumetric_abr::scenario::{BandwidthSource, FovSource, ManifestSource, Scenario};
use volumetric_abr::sim::{PlayerConfig, StreamEnv};
use volumetric_abr::traces::{
    generate_synthetic_fov, BandwidthModel, BandwidthSample, BandwidthTrace, ComputeBudget,
    FovModel,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- network

/// Straight-line forward pass written from the architecture description:
/// two valid 1-D convolutions and a dense layer over the scalar features,
/// concatenated, one ReLU hidden layer, linear output.
pub fn ref_forward(arch: &ArchSpec, outputs: usize, p: &[f64], x: &[f64]) -> Vec<f64> {
    let k = arch.kernel;
    let f = arch.filters;
    let scalars = 3 + arch.actions;
    let mut at = 0usize;
    let mut next = |n: usize| {
        let s = at;
        at += n;
        s..s + n
    };
    let bw_w = next(f * k);
    let bw_b = next(f);
    let sz_w = next(f * k);
    let sz_b = next(f);
    let sc_w = next(arch.scalar_units * scalars);
    let sc_b = next(arch.scalar_units);
    let bw_pos = arch.history - k + 1;
    let sz_pos = arch.actions - k + 1;
    let merged_len = f * (bw_pos + sz_pos) + arch.scalar_units;
    let h_w = next(arch.hidden * merged_len);
    let h_b = next(arch.hidden);
    let o_w = next(outputs * arch.hidden);
    let o_b = next(outputs);
    assert_eq!(at, p.len(), "parameter count");

    let relu = |z: f64| z.max(0.0);
    let bw = &x[..arch.history];
    let sizes = &x[arch.history..arch.history + arch.actions];
    let sc = &x[arch.history + arch.actions..];
    let mut merged = Vec::new();
    for (input, w, b, pos) in [(bw, &bw_w, &bw_b, bw_pos), (sizes, &sz_w, &sz_b, sz_pos)] {
        for fi in 0..f {
            for t in 0..pos {
                let mut z = p[b.start + fi];
                for j in 0..k {
                    z += p[w.start + fi * k + j] * input[t + j];
                }
                merged.push(relu(z));
            }
        }
    }
    for u in 0..arch.scalar_units {
        let mut z = p[sc_b.start + u];
        for (j, xv) in sc.iter().enumerate() {
            z += p[sc_w.start + u * scalars + j] * xv;
        }
        merged.push(relu(z));
    }
    let mut hidden = Vec::new();
    for u in 0..arch.hidden {
        let mut z = p[h_b.start + u];
        for (j, m) in merged.iter().enumerate() {
            z += p[h_w.start + u * merged_len + j] * m;
        }
        hidden.push(relu(z));
    }
    (0..outputs)
        .map(|o| {
            let mut z = p[o_b.start + o];
            for (j, h) in hidden.iter().enumerate() {
                z += p[o_w.start + o * arch.hidden + j] * h;
            }
            z
        })
        .collect()
}

pub fn ref_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Discounted returns by explicit double summation.
pub fn ref_returns(rewards: &[f64], discount: f64, bootstrap: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for (k, r) in rewards[t..].iter().enumerate() {
                acc += discount.powi(k as i32) * r;
            }
            acc + discount.powi((n - t) as i32) * bootstrap
        })
        .collect()
}

/// Actor objective `sum_t A_t log pi(a_t|s_t) + beta H(pi(.|s_t))` with the
/// advantages held fixed.
pub fn actor_objective(
    arch: &ArchSpec,
    actor: &[f64],
    rollout: &Rollout,
    adv: &[f64],
    beta: f64,
) -> f64 {
    rollout
        .steps
        .iter()
        .zip(adv)
        .map(|(s, a)| {
            let pi = ref_softmax(&ref_forward(arch, arch.actions, actor, &s.features));
            let h: f64 = -pi.iter().map(|p| p * p.ln()).sum::<f64>();
            a * pi[s.action].ln() + beta * h
        })
        .sum()
}

/// Critic objective `sum_t (R_t - V(s_t))^2`.
pub fn critic_objective(
    arch: &ArchSpec,
    critic: &[f64],
    rollout: &Rollout,
    returns: &[f64],
) -> f64 {
    rollout
        .steps
        .iter()
        .zip(returns)
        .map(|(s, r)| {
            let v = ref_forward(arch, 1, critic, &s.features)[0];
            (r - v) * (r - v)
        })
        .sum()
}

/// Random small architecture with kernel no longer than either input.
pub fn small_arch(r: &mut ChaCha8Rng) -> ArchSpec {
    let actions = 2 * r.random_range(1..=3usize);
    let history = r.random_range(2..=6usize);
    let kernel = r.random_range(1..=actions.min(history));
    ArchSpec {
        history,
        actions,
        filters: r.random_range(1..=4),
        kernel,
        scalar_units: r.random_range(1..=4),
        hidden: r.random_range(1..=5),
    }
}

/// Parameters with every block (output heads included) randomized.
pub fn random_params(arch: ArchSpec, r: &mut ChaCha8Rng) -> PolicyParams {
    let mut p = PolicyParams::init(arch, r.random()).unwrap();
    for v in p.actor.iter_mut().chain(p.critic.iter_mut()) {
        *v = r.random_range(-0.8..0.8);
    }
    p
}

pub fn random_features(arch: &ArchSpec, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..arch.feature_len())
        .map(|_| r.random_range(-1.5..1.5))
        .collect()
}

pub fn hyper_with_beta(beta: f64) -> Hyperparams {
    Hyperparams {
        entropy_start: beta,
        entropy_end: beta,
        ..Hyperparams::default()
    }
}

// ------------------------------------------------------------- predictors

/// EWMA in closed form: `(1-s)^n x_0 + sum_i s (1-s)^(n-i) x_i` over the
/// in-window samples `x_0..x_n`.
pub fn ewma_oracle(smoothing: f64, window_s: f64, obs: &[BandwidthSample]) -> f64 {
    let last = obs.last().unwrap().ts_s;
    let xs: Vec<f64> = obs
        .iter()
        .filter(|o| o.ts_s >= last - window_s)
        .map(|o| o.mbps)
        .collect();
    let n = xs.len() - 1;
    let mut est = (1.0 - smoothing).powi(n as i32) * xs[0];
    for (i, x) in xs.iter().enumerate().skip(1) {
        est += smoothing * (1.0 - smoothing).powi((n - i) as i32) * x;
    }
    est
}

/// Least-squares line through `(t, y)` by the 2x2 normal equations,
/// evaluated at `at`. Time is measured from the first sample to keep the
/// uncentered system well conditioned.
pub fn ols_oracle(ts: &[f64], ys: &[f64], at: f64) -> f64 {
    let t0 = ts[0];
    let ts: Vec<f64> = ts.iter().map(|t| t - t0).collect();
    let n = ts.len() as f64;
    let st: f64 = ts.iter().sum();
    let stt: f64 = ts.iter().map(|t| t * t).sum();
    let sy: f64 = ys.iter().sum();
    let sty: f64 = ts.iter().zip(ys).map(|(t, y)| t * y).sum();
    let det = n * stt - st * st;
    let intercept = (stt * sy - st * sty) / det;
    let slope = (n * sty - st * sy) / det;
    intercept + slope * (at - t0)
}

/// Maps an angle to `(-180, 180]`.
pub fn wrap180(a: f64) -> f64 {
    let mut x = a % 360.0;
    if x > 180.0 {
        x -= 360.0;
    }
    if x <= -180.0 {
        x += 360.0;
    }
    x
}

pub fn angle_gap(a: f64, b: f64) -> f64 {
    wrap180(a - b).abs()
}

// --------------------------------------------------------------- fixtures

/// Manifest over `tiles` tiles (a 1 x 1 x tiles grid) whose random sizes
/// and decode costs grow with level.
pub fn random_manifest(
    r: &mut ChaCha8Rng,
    tiles: usize,
    levels: u8,
    chunks: usize,
) -> TileManifest {
    let grid = TileGrid::centered(1, 1, tiles, [1.0, 1.0, 1.0]).unwrap();
    let table = (0..chunks)
        .map(|_| {
            (0..tiles)
                .map(|_| {
                    let mut comp = 0u64;
                    let mut uncomp = 0u64;
                    let mut psnr = 20.0;
                    let mut decode = 0.0;
                    (1..=levels)
                        .map(|level| {
                            comp += r.random_range(1_000..50_000);
                            uncomp = uncomp.max(comp) + r.random_range(1_000..200_000);
                            psnr += r.random_range(0.5..6.0);
                            decode += r.random_range(0.01..1.0);
                            TileVariant {
                                level,
                                compressed_size: comp,
                                uncompressed_size: uncomp,
                                psnr,
                                decode_cost: decode,
                                sample_ratio: level as f64 / levels as f64,
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    TileManifest::from_table("random", grid, 330, table).unwrap()
}

pub fn bandwidth_trace(points: &[(f64, f64)]) -> Arc<BandwidthTrace> {
    let samples = points
        .iter()
        .map(|&(ts_s, mbps)| BandwidthSample { ts_s, mbps })
        .collect();
    Arc::new(BandwidthTrace::new(samples, "test").unwrap())
}

/// Small environment with a random piecewise-linear bandwidth trace.
pub fn random_env(seed: u64) -> StreamEnv {
    let mut r = rng(seed);
    let levels = r.random_range(2..=5u8);
    let profile = SizeProfile {
        levels,
        base_tile_bytes: r.random_range(50_000.0..2_000_000.0),
        jitter: r.random_range(0.0..0.5),
        decode_cost_per_mb: r.random_range(0.0..3.0),
        ..SizeProfile::default()
    };
    let grid = TileGrid::centered(
        r.random_range(1..=3),
        r.random_range(1..=3),
        r.random_range(1..=3),
        [0.5; 3],
    )
    .unwrap();
    let chunks = r.random_range(3..=25);
    let manifest = Arc::new(
        volumetric_abr::media::generate_synthetic_manifest(r.random(), grid, chunks, &profile)
            .unwrap(),
    );
    let mut t = 0.0;
    let mut pts = Vec::new();
    while t < 400.0 {
        pts.push((t, r.random_range(0.0..200.0)));
        t += r.random_range(0.2..3.0);
    }
    pts.push((t, r.random_range(1.0..200.0)));
    let fov = Arc::new(generate_synthetic_fov(r.random(), &FovModel::default(), 60.0).unwrap());
    let capacity_ms = r.random_range(500.0..6000.0);
    let player = PlayerConfig {
        buffer_capacity_ms: capacity_ms,
        startup_threshold_ms: if r.random_bool(0.5) {
            Some(r.random_range(0.0..capacity_ms))
        } else {
            None
        },
        seed: r.random(),
        random_trace_offset: r.random_bool(0.5),
        ..PlayerConfig::default()
    };
    let compute = ComputeBudget::constant(r.random_range(0.5..50.0)).unwrap();
    StreamEnv::new(manifest, bandwidth_trace(&pts), fov, compute, player).unwrap()
}

/// The learning-signal scenario: 3 x 3 x 4 tiles, 5 levels, a stationary
/// 400 Mbps trace family with volatility 0.2.
pub fn learning_scenario(trace_seed: u64) -> Scenario {
    Scenario {
        manifest: ManifestSource::Synthetic {
            grid: [3, 3, 4],
            tile_extent_m: [0.5, 0.5, 0.5],
            chunks: 60,
            profile: SizeProfile {
                base_tile_bytes: 1e7,
                ..SizeProfile::default()
            },
            seed: 1,
        },
        bandwidth: vec![BandwidthSource::Synthetic {
            model: BandwidthModel {
                mean_mbps: 400.0,
                volatility: 0.2,
                ..BandwidthModel::default()
            },
            duration_s: 600.0,
            seed: trace_seed,
        }],
        fov: vec![FovSource::Synthetic {
            model: FovModel::default(),
            duration_s: 600.0,
            seed: 1,
        }],
        compute: ComputeBudget::constant(100.0).unwrap(),
        player: PlayerConfig {
            random_trace_offset: true,
            ..PlayerConfig::default()
        },
        weights: None,
    }
}

/// Two client groups on disjoint bandwidth regimes (100 and 800 Mbps).
pub fn heterogeneous_scenario() -> Scenario {
    let bw = |mean_mbps: f64, seed: u64| BandwidthSource::Synthetic {
        model: BandwidthModel {
            mean_mbps,
            volatility: 0.1,
            regimes: vec![1.0],
            ..BandwidthModel::default()
        },
        duration_s: 600.0,
        seed,
    };
    Scenario {
        bandwidth: vec![bw(100.0, 1), bw(800.0, 2)],
        ..learning_scenario(1)
    }
}

// ------------------------------------------------------- gradient oracles

fn central_difference(theta: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            work[i] = theta[i] + h;
            let up = f(&work);
            work[i] = theta[i] - h;
            let down = f(&work);
            work[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

/// Random rollout over a random small architecture.
pub fn random_rollout(seed: u64) -> (PolicyParams, Rollout, Hyperparams) {
    let mut r = rng(seed);
    let arch = small_arch(&mut r);
    let params = random_params(arch, &mut r);
    let steps = (0..r.random_range(1..=6))
        .map(|_| volumetric_abr::agent::Transition {
            features: random_features(&arch, &mut r),
            action: r.random_range(0..arch.actions),
            reward: r.random_range(-3.0..3.0),
            value: 0.0,
        })
        .collect();
    let rollout = Rollout {
        steps,
        bootstrap: if r.random_bool(0.5) {
            r.random_range(-2.0..2.0)
        } else {
            0.0
        },
    };
    let hyper = Hyperparams {
        discount: r.random_range(0.5..1.0),
        ..hyper_with_beta(r.random_range(0.0..0.5))
    };
    (params, rollout, hyper)
}

/// Relative L2 error of the library's actor and critic gradients against
/// central differences of the reference objectives, for one random case.
pub fn gradient_errors(seed: u64) -> (f64, f64) {
    let (params, rollout, hyper) = random_rollout(seed);
    let arch = params.arch;
    let (update, _) =
        volumetric_abr::agent::accumulate_gradients(&params, &rollout, &hyper).unwrap();
    let returns = ref_returns(&rollout.rewards(), hyper.discount, rollout.bootstrap);
    let adv: Vec<f64> = rollout
        .steps
        .iter()
        .zip(&returns)
        .map(|(s, r)| r - ref_forward(&arch, 1, &params.critic, &s.features)[0])
        .collect();
    let beta = hyper.entropy_start;
    let h = 1e-5;
    let fd_actor = central_difference(&params.actor, h, |a| {
        actor_objective(&arch, a, &rollout, &adv, beta)
    });
    let fd_critic = central_difference(&params.critic, h, |c| {
        critic_objective(&arch, c, &rollout, &returns)
    });
    (
        relative_gap(&update.actor, &fd_actor),
        relative_gap(&update.critic, &fd_critic),
    )
}

// ------------------------------------------------------------ federation

pub fn small_hyper() -> Hyperparams {
    Hyperparams {
        local_epochs: 4,
        lr_actor: 1e-3,
        lr_critic: 1e-3,
        ..Hyperparams::default()
    }
}

pub fn init_for(env: &StreamEnv, seed: u64) -> PolicyParams {
    PolicyParams::init(ArchSpec::standard(env.manifest().levels()), seed).unwrap()
}

/// Runs `rounds` single-client federated rounds and the same number of
/// centralized steps; returns the largest parameter gap.
pub fn single_client_gap(seed: u64, rounds: usize) -> f64 {
    let hyper = small_hyper();
    let env = random_env(seed);
    let global = init_for(&env, seed);
    let cfg = FedConfig {
        clients: 1,
        seed,
        ..FedConfig::default()
    };
    let mut fed =
        FedTrainer::new(global.clone(), hyper.clone(), cfg, |_| Ok(random_env(seed))).unwrap();
    let mut central = A2c::new(global, hyper, random_env(seed), client_seed(seed, 0)).unwrap();
    for _ in 0..rounds {
        fed.run_round().unwrap();
        central.train_step().unwrap();
    }
    assert_eq!(fed.global.iteration, central.params.iteration);
    fed.global
        .actor
        .iter()
        .chain(&fed.global.critic)
        .zip(central.params.actor.iter().chain(&central.params.critic))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

// -------------------------------------------------------------- selector

pub struct SelectorCase {
    /// Totals and flags of the realized plan agree with a recount from
    /// raw variant sizes, and the plan has the required shape.
    pub sound: bool,
    /// Some flag assignment at the action level fits both budgets.
    pub oracle_feasible: bool,
    pub greedy_feasible: bool,
    /// Realized utility does not exceed the exhaustive optimum.
    pub within_optimum: bool,
}

/// One seeded selector instance: up to 8 tiles, up to 3 levels, random
/// visibility, budgets drawn between the cheapest and dearest plans.
pub fn selector_case(seed: u64) -> SelectorCase {
    use volumetric_abr::media::{Action, TileSet};
    use volumetric_abr::select::{brute_force_best_plan, psnr_utility, realize_plan, Budget};

    let mut r = rng(seed);
    let tiles = r.random_range(1..=8usize);
    let levels = r.random_range(1..=3u8);
    let m = random_manifest(&mut r, tiles, levels, 1);
    let visible = TileSet::from_mask((0..tiles).map(|_| r.random_bool(0.6)).collect());
    let level = r.random_range(1..=levels);
    let level_of = |t: usize| if visible.contains(t) { level } else { 1 };

    let min_bytes: u64 = (0..tiles).map(|t| m.variant(0, t, 1).compressed_size).sum();
    let max_bytes: u64 = (0..tiles).map(|t| m.variant(0, t, levels).uncompressed_size).sum();
    let max_cost: f64 = (0..tiles).map(|t| m.variant(0, t, level_of(t)).decode_cost).sum();
    let budget = Budget::new(
        r.random_range(min_bytes as f64 * 0.8..max_bytes as f64),
        r.random_range(0.0..max_cost * 1.2),
    )
    .unwrap();

    // exhaustive feasibility over compressed/uncompressed flags at this level
    let mut oracle_feasible = false;
    for mask in 0u32..(1 << tiles) {
        let mut bytes = 0u64;
        let mut cost = 0.0;
        for t in 0..tiles {
            let v = m.variant(0, t, level_of(t));
            if mask >> t & 1 == 1 {
                bytes += v.compressed_size;
                cost += v.decode_cost;
            } else {
                bytes += v.uncompressed_size;
            }
        }
        if bytes as f64 <= budget.bytes && cost <= budget.compute {
            oracle_feasible = true;
            break;
        }
    }

    let plan = realize_plan(&m, 0, &visible, Action::new(level, true), &budget);
    let mut bytes = 0u64;
    let mut cost = 0.0;
    let mut shape_ok = plan.choices.len() == tiles;
    for (t, c) in plan.choices.iter().enumerate() {
        shape_ok &= c.level == level_of(t) && c.visible == visible.contains(t);
        let v = m.variant(0, t, c.level);
        if c.compressed {
            bytes += v.compressed_size;
            cost += v.decode_cost;
        } else {
            bytes += v.uncompressed_size;
        }
    }
    let sound = shape_ok
        && bytes == plan.total_bytes
        && (cost - plan.total_decode_cost).abs() <= 1e-9
        && plan.bandwidth_feasible == (bytes as f64 <= budget.bytes)
        && plan.compute_feasible == (cost <= budget.compute)
        && plan.compute_feasible;

    let utility = psnr_utility(1.0);
    let realized: f64 =
        plan.choices.iter().enumerate().filter(|(_, c)| c.visible).map(|(t, c)| m.variant(0, t, c.level).psnr).sum();
    let within_optimum = match brute_force_best_plan(&m, 0, &visible, &budget, &utility) {
        Ok(best) => {
            let opt: f64 = best
                .choices
                .iter()
                .enumerate()
                .filter(|(_, c)| c.visible)
                .map(|(t, c)| m.variant(0, t, c.level).psnr)
                .sum();
            !plan.feasible() || realized <= opt + 1e-9
        }
        Err(_) => !plan.feasible(),
    };
    SelectorCase { sound, oracle_feasible, greedy_feasible: plan.feasible(), within_optimum }
}

// ------------------------------------------------------------- simulator

pub struct ConservationCheck {
    /// |end of playback - (startup + stalls + chunks * duration)|, seconds.
    pub identity_gap: f64,
    /// Largest disagreement with an independently replayed player clock.
    pub replay_gap: f64,
    pub buffer_in_bounds: bool,
}

/// Plays one random-action episode on `random_env(seed)` and audits its
/// time accounting against a replay built from the per-step timings.
pub fn conservation(seed: u64) -> ConservationCheck {
    let mut env = random_env(seed);
    let mut r = rng(seed ^ 0x5eed);
    let mut state = env.reset().unwrap();
    let cap = env.config().buffer_capacity_ms / 1000.0;
    let dur = env.manifest().chunk_duration_s();
    let threshold = env.config().startup_threshold_ms.unwrap_or(dur * 1000.0) / 1000.0;

    let (mut playing, mut buffer, mut startup, mut stalls, mut now) = (false, 0.0f64, 0.0, 0.0, 0.0);
    let mut replay_gap = 0.0f64;
    let mut in_bounds = true;
    let mut chunks = 0;
    loop {
        let (next, step) = env.step(r.random_range(0..state.action_count())).unwrap();
        let elapsed = step.download_s + step.decode_s;
        let mut stall = 0.0;
        if playing {
            stall = (elapsed - buffer).max(0.0);
            buffer = (buffer - elapsed).max(0.0);
        } else {
            startup += elapsed;
        }
        stalls += stall;
        buffer += dur;
        playing |= buffer >= threshold;
        let sleep = (buffer - cap).max(0.0);
        buffer = buffer.min(cap);
        now += elapsed + sleep;
        chunks += 1;

        replay_gap = replay_gap
            .max((stall - step.outcome.rebuffer).abs())
            .max((sleep - step.sleep_s).abs())
            .max((buffer - next.buffer_ms / 1000.0).abs());
        in_bounds &= next.buffer_ms >= 0.0 && next.buffer_ms <= env.config().buffer_capacity_ms;
        state = next;
        if step.done {
            break;
        }
    }
    let clock = env.clock();
    replay_gap = replay_gap
        .max((clock.now_s - now).abs())
        .max((clock.startup_s - startup).abs())
        .max((clock.rebuffer_s - stalls).abs());
    let identity_gap = (env.episode_end_s() - (clock.startup_s + clock.rebuffer_s + chunks as f64 * dur)).abs();
    ConservationCheck { identity_gap, replay_gap, buffer_in_bounds: in_bounds }
}

// ------------------------------------------------------------ predictors

/// Absolute error of the library EWMA against [`ewma_oracle`] on one
/// random observation window.
pub fn ewma_error(seed: u64) -> f64 {
    use volumetric_abr::prediction::{ewma_predict, EwmaState};
    let mut r = rng(seed);
    let mut t = r.random_range(0.0..50.0);
    let obs: Vec<BandwidthSample> = (0..r.random_range(1..60))
        .map(|_| {
            t += r.random_range(0.05..4.0);
            BandwidthSample { ts_s: t, mbps: r.random_range(0.0..500.0) }
        })
        .collect();
    let state = EwmaState {
        history_window_s: r.random_range(0.5..60.0),
        ..EwmaState::new(r.random_range(0.01..=1.0)).unwrap()
    };
    let got = ewma_predict(&state, &obs).unwrap();
    let want = ewma_oracle(state.smoothing, state.history_window_s, &obs);
    (got - want).abs() / (1.0 + want.abs())
}

/// Largest error of the linear viewport predictor against [`ols_oracle`]
/// over all six pose dimensions of one random window. Angles follow a
/// continuous path fed to the predictor wrapped; the oracle fits the path
/// itself and the two are compared modulo 360.
pub fn lr_error(seed: u64) -> f64 {
    use volumetric_abr::prediction::{fov_predict_lr, FovWindow};
    use volumetric_abr::traces::Pose;
    let mut r = rng(seed);
    let n = r.random_range(2..=12usize);
    let mut t = r.random_range(0.0..10.0);
    let ts: Vec<f64> = (0..n)
        .map(|_| {
            t += r.random_range(0.01..0.5);
            t
        })
        .collect();
    let mut paths = vec![vec![0.0; n]; 6];
    for (dim, path) in paths.iter_mut().enumerate() {
        let angular = dim >= 3;
        let mut y = if angular { r.random_range(-540.0..540.0) } else { r.random_range(-3.0..3.0) };
        let step = if angular { 170.0 } else { 0.5 };
        for slot in path.iter_mut() {
            *slot = y;
            y += r.random_range(-step..step);
        }
    }
    let mut window = FovWindow::new(n);
    for k in 0..n {
        let a: [f64; 6] = std::array::from_fn(|d| if d >= 3 { wrap180(paths[d][k]) } else { paths[d][k] });
        window.push(ts[k], Pose::from_array(a));
    }
    let horizon = r.random_range(0.0..2.0);
    let at = ts[n - 1] + horizon;
    let got = fov_predict_lr(&window, horizon).unwrap().to_array();
    (0..6)
        .map(|d| {
            let want = ols_oracle(&ts, &paths[d], at);
            if d >= 3 {
                angle_gap(got[d], want) / (1.0 + want.abs())
            } else {
                (got[d] - want).abs() / (1.0 + want.abs())
            }
        })
        .fold(0.0, f64::max)
}

// ------------------------------------------------------------ round trips

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Random values including signed zeros, subnormals and extremes.
pub fn awkward_values(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match r.random_range(0..6) {
            0 => -0.0,
            1 => f64::MIN_POSITIVE / r.random_range(2.0..1e6),
            2 => f64::MAX * r.random_range(-1.0..1.0),
            3 => f64::from_bits(r.random::<u64>() & !(0x7ff << 52) | (r.random_range(1..2046u64) << 52)),
            _ => r.random_range(-1e3..1e3),
        })
        .collect()
}

/// Wire frame, checkpoint and manifest round trips for one seed; true when
/// every value comes back with identical bits.
pub fn round_trips_exact(seed: u64) -> bool {
    use volumetric_abr::agent::GradientUpdate;
    use volumetric_abr::fed::wire::{decode, decode_update, encode, encode_update, Message};
    let mut r = rng(seed);
    let n = r.random_range(0..200);
    let m = r.random_range(0..50);
    let update = GradientUpdate {
        client_id: r.random(),
        round: r.random(),
        samples: r.random(),
        actor: awkward_values(&mut r, n),
        critic: awkward_values(&mut r, m),
    };
    let back = decode_update(&encode_update(&update).unwrap()).unwrap();
    let wire_ok = back.client_id == update.client_id
        && back.round == update.round
        && back.samples == update.samples
        && bits(&back.actor) == bits(&update.actor)
        && bits(&back.critic) == bits(&update.critic);
    let global = Message::GlobalModel {
        round: r.random(),
        client: r.random(),
        iteration: r.random(),
        actor: awkward_values(&mut r, n),
        critic: awkward_values(&mut r, m),
    };
    let frame = encode(&global).unwrap();
    let global_ok = encode(&decode(&frame).unwrap()).unwrap() == frame;

    let arch = small_arch(&mut r);
    let mut params = random_params(arch, &mut r);
    params.iteration = r.random();
    let na = params.actor.len();
    params.actor = awkward_values(&mut r, na).into_iter().map(|v| if v.is_finite() { v } else { 0.0 }).collect();
    let restored = PolicyParams::from_checkpoint_json(params.to_checkpoint_json().as_bytes()).unwrap();
    let checkpoint_ok = restored.arch == params.arch
        && restored.iteration == params.iteration
        && bits(&restored.actor) == bits(&params.actor)
        && bits(&restored.critic) == bits(&params.critic);

    let tiles = r.random_range(1..=6);
    let levels = r.random_range(1..=4);
    let chunks = r.random_range(1..=5);
    let manifest = random_manifest(&mut r, tiles, levels, chunks);
    let json = manifest.to_json();
    let parsed = volumetric_abr::media::parse_manifest(json.as_bytes()).unwrap();
    let manifest_ok = parsed == manifest && parsed.to_json() == json;

    wire_ok && global_ok && checkpoint_ok && manifest_ok
}
