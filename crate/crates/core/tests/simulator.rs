mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use volumetric_abr::media::Action;
use volumetric_abr::sim::{state_vector, PlayerConfig, StreamEnv};
use volumetric_abr::traces::{generate_synthetic_fov, ComputeBudget, FovModel};

#[test]
fn time_is_conserved() {
    for seed in 0..300 {
        let c = conservation(seed);
        assert!(c.identity_gap <= 1e-6, "seed {seed}: gap {}", c.identity_gap);
        assert!(c.replay_gap <= 1e-9, "seed {seed}: replay gap {}", c.replay_gap);
        assert!(c.buffer_in_bounds, "seed {seed}");
    }
}

fn fixed_env(mbps: f64) -> StreamEnv {
    let mut r = rng(1);
    let m = Arc::new(random_manifest(&mut r, 4, 3, 6));
    let fov = Arc::new(generate_synthetic_fov(1, &FovModel::default(), 30.0).unwrap());
    StreamEnv::new(
        m,
        bandwidth_trace(&[(0.0, mbps), (100.0, mbps)]),
        fov,
        ComputeBudget::constant(1e6).unwrap(),
        PlayerConfig::default(),
    )
    .unwrap()
}

#[test]
fn download_time_is_bytes_over_throughput() {
    let mut env = fixed_env(8.0);
    env.reset().unwrap();
    let (_, step) = env.step(Action::new(2, true).index(3)).unwrap();
    assert!((step.download_s - step.bytes as f64 * 8.0 / 1e6 / 8.0).abs() <= 1e-9);
}

#[test]
fn switching_reports_index_distance() {
    let mut env = fixed_env(50.0);
    env.reset().unwrap();
    let levels = 3;
    let (_, a) = env.step(Action::new(1, true).index(levels)).unwrap();
    let (_, b) = env.step(Action::new(3, false).index(levels)).unwrap();
    let (_, c) = env.step(Action::new(3, false).index(levels)).unwrap();
    assert_eq!(a.outcome.level_change, 0.0);
    assert_eq!(b.outcome.level_change, 5.0);
    assert_eq!(c.outcome.level_change, 0.0);
}

#[test]
fn step_after_the_last_chunk_fails() {
    let mut env = fixed_env(50.0);
    env.reset().unwrap();
    for _ in 0..6 {
        env.step(0).unwrap();
    }
    assert!(env.step(0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn features_are_finite_and_sized(seed in any::<u64>()) {
        let mut env = random_env(seed);
        let s = env.reset().unwrap();
        let x = state_vector(&s);
        prop_assert_eq!(x.len(), volumetric_abr::sim::StreamState::feature_len(s.levels));
        prop_assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn episodes_are_reproducible(seed in 0u64..1000) {
        let run = || {
            let mut env = random_env(seed);
            let mut s = env.reset().unwrap();
            let mut out = Vec::new();
            loop {
                let (next, step) = env.step(s.action_count() - 1).unwrap();
                out.push((step.reward, step.download_s));
                s = next;
                if step.done {
                    return out;
                }
            }
        };
        prop_assert_eq!(run(), run());
    }
}
