//! Field-of-view culling and per-tile plan realization under bandwidth and
//! decode-compute budgets.
//!
//! A plan assigns every tile exactly one (level, representation) pair. Its
//! total bytes must fit the chunk's byte budget and the decode cost of its
//! compressed tiles must fit the compute budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{Action, TileManifest, TileSet, TileVariant};
use crate::traces::Pose;

/// Enumeration guard for [`brute_force_best_plan`].
pub const MAX_ENUMERATION_STATES: u128 = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrustumConfig {
    /// Horizontal field of view, degrees. Values >= 360 mean omnidirectional.
    pub h_fov_deg: f64,
    pub v_fov_deg: f64,
    pub near_m: f64,
    pub far_m: f64,
}

impl Default for FrustumConfig {
    fn default() -> Self {
        FrustumConfig {
            h_fov_deg: 90.0,
            v_fov_deg: 90.0,
            near_m: 0.1,
            far_m: 10.0,
        }
    }
}

impl FrustumConfig {
    fn omnidirectional(&self) -> bool {
        self.h_fov_deg >= 360.0 || self.v_fov_deg >= 360.0
    }

    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| (f > 0.0 && f < 180.0) || f >= 360.0;
        if !fov_ok(self.h_fov_deg) || !fov_ok(self.v_fov_deg) {
            return Err(Error::Config(
                "field of view must be in (0, 180) degrees or >= 360".into(),
            ));
        }
        if !(self.near_m >= 0.0 && self.far_m > self.near_m && self.far_m.is_finite()) {
            return Err(Error::Config("frustum needs 0 <= near < far".into()));
        }
        Ok(())
    }
}

/// Half-space `normal · x + offset >= 0`.
#[derive(Clone, Copy, Debug)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    fn through(normal: [f64; 3], point: [f64; 3], shift: f64) -> Self {
        Plane {
            normal,
            offset: -dot(normal, point) - shift,
        }
    }

    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        dot(self.normal, p) + self.offset
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn combine(f: [f64; 3], l: [f64; 3], u: [f64; 3], cf: f64, cl: f64, cu: f64) -> [f64; 3] {
    [
        cf * f[0] + cl * l[0] + cu * u[0],
        cf * f[1] + cl * l[1] + cu * u[1],
        cf * f[2] + cl * l[2] + cu * u[2],
    ]
}

/// Camera axes `(forward, left, up)` for a pose, z up. Yaw turns about z,
/// positive pitch raises the view, roll turns about the view direction.
pub fn camera_axes(pose: &Pose) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let [yaw, pitch, roll] = pose.orientation.map(f64::to_radians);
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let forward = [cp * cy, cp * sy, sp];
    let left0 = [-sy, cy, 0.0];
    let up0 = [-sp * cy, -sp * sy, cp];
    let left = combine(left0, up0, [0.0; 3], cr, sr, 0.0);
    let up = combine(left0, up0, [0.0; 3], -sr, cr, 0.0);
    (forward, left, up)
}

/// Bounding planes of the view frustum (inward normals). Empty when the
/// field of view is omnidirectional.
pub fn frustum_planes(pose: &Pose, cfg: &FrustumConfig) -> Vec<Plane> {
    if cfg.omnidirectional() {
        return Vec::new();
    }
    let eye = pose.position;
    let (f, l, u) = camera_axes(pose);
    let (sh, ch) = (cfg.h_fov_deg / 2.0).to_radians().sin_cos();
    let (sv, cv) = (cfg.v_fov_deg / 2.0).to_radians().sin_cos();
    let neg = |v: [f64; 3]| [-v[0], -v[1], -v[2]];
    vec![
        Plane::through(f, eye, cfg.near_m),
        Plane::through(neg(f), eye, -cfg.far_m),
        Plane::through(combine(f, l, u, sh, -ch, 0.0), eye, 0.0),
        Plane::through(combine(f, l, u, sh, ch, 0.0), eye, 0.0),
        Plane::through(combine(f, l, u, sv, 0.0, -cv), eye, 0.0),
        Plane::through(combine(f, l, u, sv, 0.0, cv), eye, 0.0),
    ]
}

fn box_in_shell(lo: [f64; 3], hi: [f64; 3], eye: [f64; 3], cfg: &FrustumConfig) -> bool {
    let mut near_sq = 0.0;
    let mut far_sq = 0.0;
    for a in 0..3 {
        let closest = eye[a].clamp(lo[a], hi[a]);
        near_sq += (closest - eye[a]).powi(2);
        far_sq += (eye[a] - lo[a]).abs().max((hi[a] - eye[a]).abs()).powi(2);
    }
    near_sq <= cfg.far_m * cfg.far_m && far_sq >= cfg.near_m * cfg.near_m
}

/// Tiles whose bounding box is not entirely outside any frustum plane.
pub fn visible_tiles(manifest: &TileManifest, pose: &Pose, cfg: &FrustumConfig) -> TileSet {
    let grid = &manifest.grid;
    let mut set = TileSet::empty(grid.tile_count());
    if !pose.is_finite() {
        return set;
    }
    let planes = frustum_planes(pose, cfg);
    for tile in 0..grid.tile_count() {
        let (lo, hi) = grid.tile_bounds(tile);
        let inside = if cfg.omnidirectional() {
            box_in_shell(lo, hi, pose.position, cfg)
        } else {
            planes.iter().all(|p| {
                // Corner furthest along the plane normal.
                let corner = [0, 1, 2].map(|a| if p.normal[a] >= 0.0 { hi[a] } else { lo[a] });
                p.signed_distance(corner) >= 0.0
            })
        };
        if inside {
            set.insert(tile);
        }
    }
    set
}

/// Distance from the viewer to the grid center, meters.
pub fn viewer_distance(manifest: &TileManifest, pose: &Pose) -> f64 {
    let c = manifest.grid.center();
    let p = pose.position;
    ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2) + (c[2] - p[2]).powi(2)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Bytes deliverable for this chunk.
    pub bytes: f64,
    /// Decode compute units available for this chunk.
    pub compute: f64,
}

impl Budget {
    pub fn new(bytes: f64, compute: f64) -> Result<Self> {
        if !(bytes >= 0.0 && compute >= 0.0) {
            return Err(Error::Config("budgets must be >= 0".into()));
        }
        Ok(Budget { bytes, compute })
    }

    /// Byte budget from a throughput prediction held over one chunk.
    pub fn from_bandwidth(predicted_mbps: f64, chunk_duration_s: f64, compute: f64) -> Self {
        Budget {
            bytes: (predicted_mbps.max(0.0) * chunk_duration_s * 1e6 / 8.0),
            compute: compute.max(0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileChoice {
    pub level: u8,
    pub compressed: bool,
    pub visible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionPlan {
    pub choices: Vec<TileChoice>,
    pub total_bytes: u64,
    pub total_decode_cost: f64,
    /// Total bytes fit the byte budget.
    pub bandwidth_feasible: bool,
    /// Decode cost fits the compute budget.
    pub compute_feasible: bool,
}

impl SelectionPlan {
    pub fn from_choices(
        manifest: &TileManifest,
        chunk: usize,
        choices: Vec<TileChoice>,
        budget: &Budget,
    ) -> Self {
        let (total_bytes, total_decode_cost) = plan_totals(manifest, chunk, &choices);
        SelectionPlan {
            choices,
            total_bytes,
            total_decode_cost,
            bandwidth_feasible: total_bytes as f64 <= budget.bytes,
            compute_feasible: total_decode_cost <= budget.compute,
        }
    }

    pub fn feasible(&self) -> bool {
        self.bandwidth_feasible && self.compute_feasible
    }

    pub fn flipped_count(&self) -> usize {
        self.choices
            .iter()
            .filter(|c| c.visible && !c.compressed)
            .count()
    }
}

/// Bytes and decode cost of a per-tile assignment, summed in tile order.
pub fn plan_totals(manifest: &TileManifest, chunk: usize, choices: &[TileChoice]) -> (u64, f64) {
    let mut bytes = 0u64;
    let mut cost = 0.0;
    for (tile, c) in choices.iter().enumerate() {
        let v = manifest.variant(chunk, tile, c.level);
        bytes += v.size(c.compressed);
        cost += v.cost(c.compressed);
    }
    (bytes, cost)
}

/// Applies a chunk-level action: tiles in view get the action's variant,
/// the rest level 1 compressed. If decoding would exceed the compute budget,
/// compressed tiles are switched to uncompressed in order of decode cost
/// saved per extra byte until the budget holds. A plan that then overruns
/// the byte budget is returned with `bandwidth_feasible == false`.
pub fn realize_plan(
    manifest: &TileManifest,
    chunk: usize,
    visible: &TileSet,
    action: Action,
    budget: &Budget,
) -> SelectionPlan {
    assert!(
        action.level >= 1 && action.level <= manifest.levels(),
        "action level out of range"
    );
    let mut choices: Vec<TileChoice> = (0..manifest.tile_count())
        .map(|tile| {
            if visible.contains(tile) {
                TileChoice {
                    level: action.level,
                    compressed: action.compressed,
                    visible: true,
                }
            } else {
                TileChoice {
                    level: 1,
                    compressed: true,
                    visible: false,
                }
            }
        })
        .collect();

    let (_, mut cost) = plan_totals(manifest, chunk, &choices);
    if cost > budget.compute {
        let mut candidates: Vec<(usize, f64)> = choices
            .iter()
            .enumerate()
            .filter(|(_, c)| c.compressed)
            .filter_map(|(tile, c)| {
                let v = manifest.variant(chunk, tile, c.level);
                (v.decode_cost > 0.0).then(|| {
                    (
                        tile,
                        v.decode_cost / (v.uncompressed_size - v.compressed_size) as f64,
                    )
                })
            })
            .collect();
        // Highest saving per byte first; stable on tile index.
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (tile, _) in candidates {
            if cost <= budget.compute {
                break;
            }
            choices[tile].compressed = false;
            cost = plan_totals(manifest, chunk, &choices).1;
        }
    }
    SelectionPlan::from_choices(manifest, chunk, choices, budget)
}

/// Per-tile utility: `(tile, variant, compressed, visible) -> score`.
pub type TileUtility<'a> = dyn Fn(usize, &TileVariant, bool, bool) -> f64 + 'a;

/// PSNR-weighted utility over tiles in view (the quality term of the QoE
/// model without its per-chunk level bonus).
pub fn psnr_utility(alpha: f64) -> impl Fn(usize, &TileVariant, bool, bool) -> f64 {
    move |_, v, _, visible| if visible { alpha * v.psnr } else { 0.0 }
}

pub fn plan_utility(
    manifest: &TileManifest,
    chunk: usize,
    plan: &SelectionPlan,
    utility: &TileUtility<'_>,
) -> f64 {
    plan.choices
        .iter()
        .enumerate()
        .map(|(tile, c)| {
            utility(
                tile,
                manifest.variant(chunk, tile, c.level),
                c.compressed,
                c.visible,
            )
        })
        .sum()
}

/// Exact maximizer of summed utility over every feasible assignment: tiles
/// in view may take any (level, representation), other tiles level 1 in
/// either representation. Ties keep the first assignment in lexicographic
/// tile order with lower levels and compressed variants first.
pub fn brute_force_best_plan(
    manifest: &TileManifest,
    chunk: usize,
    visible: &TileSet,
    budget: &Budget,
    utility: &TileUtility<'_>,
) -> Result<SelectionPlan> {
    let tiles = manifest.tile_count();
    let options: Vec<Vec<TileChoice>> = (0..tiles)
        .map(|tile| {
            let is_visible = visible.contains(tile);
            let top = if is_visible { manifest.levels() } else { 1 };
            (1..=top)
                .flat_map(|level| {
                    [true, false].map(|compressed| TileChoice {
                        level,
                        compressed,
                        visible: is_visible,
                    })
                })
                .collect()
        })
        .collect();
    let states = options
        .iter()
        .try_fold(1u128, |acc, o| acc.checked_mul(o.len() as u128))
        .unwrap_or(u128::MAX);
    if states > MAX_ENUMERATION_STATES {
        return Err(Error::TooLarge {
            states,
            limit: MAX_ENUMERATION_STATES,
        });
    }

    struct Search<'s, 'u> {
        manifest: &'s TileManifest,
        chunk: usize,
        options: &'s [Vec<TileChoice>],
        budget: &'s Budget,
        utility: &'s TileUtility<'u>,
        current: Vec<TileChoice>,
        best: Option<(f64, Vec<TileChoice>)>,
    }

    impl Search<'_, '_> {
        fn visit(&mut self, tile: usize, bytes: u64, cost: f64, score: f64) {
            if bytes as f64 > self.budget.bytes || cost > self.budget.compute {
                return;
            }
            if tile == self.options.len() {
                if self.best.as_ref().is_none_or(|(b, _)| score > *b) {
                    self.best = Some((score, self.current.clone()));
                }
                return;
            }
            for i in 0..self.options[tile].len() {
                let c = self.options[tile][i];
                let v = self.manifest.variant(self.chunk, tile, c.level);
                self.current.push(c);
                self.visit(
                    tile + 1,
                    bytes + v.size(c.compressed),
                    cost + v.cost(c.compressed),
                    score + (self.utility)(tile, v, c.compressed, c.visible),
                );
                self.current.pop();
            }
        }
    }

    let mut search = Search {
        manifest,
        chunk,
        options: &options,
        budget,
        utility,
        current: Vec::with_capacity(tiles),
        best: None,
    };
    search.visit(0, 0, 0.0, 0.0);
    let (_, choices) = search.best.ok_or(Error::Infeasible)?;
    Ok(SelectionPlan::from_choices(
        manifest, chunk, choices, budget,
    ))
}
