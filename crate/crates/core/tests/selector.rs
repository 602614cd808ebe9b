mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use volumetric_abr::media::{Action, TileSet};
use volumetric_abr::select::{
    brute_force_best_plan, frustum_planes, psnr_utility, realize_plan, visible_tiles, Budget, FrustumConfig,
};
use volumetric_abr::traces::Pose;

#[test]
fn seeded_instances() {
    let mut oracle = 0;
    let mut agree = 0;
    for seed in 0..1000 {
        let case = selector_case(seed);
        assert!(case.sound, "seed {seed}: plan disagrees with raw sizes");
        assert!(case.within_optimum, "seed {seed}: plan beats the exhaustive optimum");
        if case.oracle_feasible {
            oracle += 1;
            agree += case.greedy_feasible as usize;
        } else {
            assert!(!case.greedy_feasible, "seed {seed}: feasible plan the oracle missed");
        }
    }
    assert!(oracle > 300, "too few feasible instances ({oracle}) to be informative");
    assert!(agree as f64 >= 0.95 * oracle as f64, "{agree} of {oracle}");
}

#[test]
fn two_tiles_at_exact_budget_take_level_two() {
    let mut r = rng(4);
    let m = random_manifest(&mut r, 2, 3, 1);
    let budget_bytes = m.variant(0, 0, 2).compressed_size + m.variant(0, 1, 2).compressed_size;
    let cost = m.variant(0, 0, 2).decode_cost + m.variant(0, 1, 2).decode_cost;
    let budget = Budget::new(budget_bytes as f64, cost).unwrap();
    let best = brute_force_best_plan(&m, 0, &TileSet::all(2), &budget, &psnr_utility(1.0)).unwrap();
    assert!(best.choices.iter().all(|c| c.level == 2 && c.compressed));
}

#[test]
fn zero_compute_flips_everything() {
    let mut r = rng(8);
    let m = random_manifest(&mut r, 5, 3, 1);
    let plan = realize_plan(&m, 0, &TileSet::from_indices(5, [0, 2]), Action::new(3, true), &Budget::new(1e12, 0.0).unwrap());
    assert!(plan.choices.iter().all(|c| !c.compressed));
    assert!(plan.feasible());
    assert_eq!(plan.total_decode_cost, 0.0);
}

/// Tile is rejected only when all eight corners lie outside one plane.
fn corner_oracle(m: &volumetric_abr::media::TileManifest, pose: &Pose, cfg: &FrustumConfig) -> Vec<bool> {
    let planes = frustum_planes(pose, cfg);
    (0..m.tile_count())
        .map(|t| {
            let (lo, hi) = m.grid.tile_bounds(t);
            let corners: Vec<[f64; 3]> = (0..8)
                .map(|i| [0, 1, 2].map(|a| if i >> a & 1 == 1 { hi[a] } else { lo[a] }))
                .collect();
            !planes.iter().any(|p| corners.iter().all(|c| p.signed_distance(*c) < 0.0))
        })
        .collect()
}

proptest! {
    #[test]
    fn frustum_matches_corner_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let tiles = r.random_range(1..=6);
        let m = random_manifest(&mut r, tiles, 1, 1);
        let pose = Pose {
            position: [r.random_range(-4.0..4.0), r.random_range(-4.0..4.0), r.random_range(-2.0..2.0)],
            orientation: [r.random_range(-180.0..180.0), r.random_range(-90.0..90.0), r.random_range(-180.0..180.0)],
        };
        let cfg = FrustumConfig {
            h_fov_deg: r.random_range(30.0..150.0),
            v_fov_deg: r.random_range(30.0..150.0),
            ..FrustumConfig::default()
        };
        let got = visible_tiles(&m, &pose, &cfg);
        let expected = corner_oracle(&m, &pose, &cfg);
        prop_assert_eq!(got.mask(), expected.as_slice());
    }

    #[test]
    fn realize_plan_is_deterministic(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let m = random_manifest(&mut r, 6, 3, 2);
        let vis = TileSet::from_mask((0..6).map(|_| r.random_bool(0.5)).collect());
        let budget = Budget::new(r.random_range(0.0..1e6), r.random_range(0.0..10.0)).unwrap();
        let action = Action::new(r.random_range(1..=3), r.random_bool(0.5));
        prop_assert_eq!(realize_plan(&m, 1, &vis, action, &budget), realize_plan(&m, 1, &vis, action, &budget));
    }
}
