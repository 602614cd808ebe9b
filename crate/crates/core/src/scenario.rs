//! Declarative description of a streaming environment: where the manifest
//! and traces come from, and how the player is configured.
//!
//! Client `k` of a federation replays bandwidth trace `k mod n` and viewport
//! trace `k mod m`. Synthetic traces get the client index added to their
//! seed so clients sharing a model still see different sample paths.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::{
    generate_synthetic_manifest, load_manifest, SizeProfile, TileGrid, TileManifest,
};
use crate::qoe::WeightTable;
use crate::sim::{PlayerConfig, StreamEnv};
use crate::traces::{
    generate_synthetic_bandwidth, generate_synthetic_fov, load_bandwidth_trace, load_fov_trace,
    BandwidthModel, BandwidthTrace, ComputeBudget, FovModel, FovTrace,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifestSource {
    Path(PathBuf),
    Synthetic {
        grid: [usize; 3],
        #[serde(default = "default_tile_extent")]
        tile_extent_m: [f64; 3],
        chunks: usize,
        #[serde(default)]
        profile: SizeProfile,
        #[serde(default)]
        seed: u64,
    },
}

fn default_tile_extent() -> [f64; 3] {
    [0.5, 0.5, 0.5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthSource {
    Path(PathBuf),
    Synthetic {
        #[serde(default)]
        model: BandwidthModel,
        duration_s: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FovSource {
    Path(PathBuf),
    Synthetic {
        #[serde(default)]
        model: FovModel,
        duration_s: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub manifest: ManifestSource,
    pub bandwidth: Vec<BandwidthSource>,
    pub fov: Vec<FovSource>,
    pub compute: ComputeBudget,
    #[serde(default)]
    pub player: PlayerConfig,
    /// Optional QoE weight table file; the built-in table otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

/// A scenario with its inputs loaded, ready to spawn environments.
#[derive(Clone)]
pub struct Resolved {
    pub manifest: Arc<TileManifest>,
    pub bandwidth: Vec<Arc<BandwidthTrace>>,
    pub fov: Vec<Arc<FovTrace>>,
    pub compute: ComputeBudget,
    pub player: PlayerConfig,
    pub weights: WeightTable,
}

impl Scenario {
    /// Loads or generates every input for `clients` clients.
    pub fn resolve(&self, clients: usize) -> Result<Resolved> {
        if self.bandwidth.is_empty() || self.fov.is_empty() {
            return Err(Error::Config(
                "scenario needs at least one bandwidth and one viewport source".into(),
            ));
        }
        self.compute.validate()?;
        let manifest = match &self.manifest {
            ManifestSource::Path(p) => load_manifest(p)?,
            ManifestSource::Synthetic {
                grid,
                tile_extent_m,
                chunks,
                profile,
                seed,
            } => {
                let g = TileGrid::centered(grid[0], grid[1], grid[2], *tile_extent_m)?;
                generate_synthetic_manifest(*seed, g, *chunks, profile)?
            }
        };
        let count = clients.max(1);
        let bandwidth = (0..count)
            .map(|k| {
                let src = &self.bandwidth[k % self.bandwidth.len()];
                Ok(Arc::new(match src {
                    BandwidthSource::Path(p) => load_bandwidth_trace(p)?,
                    BandwidthSource::Synthetic {
                        model,
                        duration_s,
                        seed,
                    } => generate_synthetic_bandwidth(
                        seed.wrapping_add(k as u64),
                        model,
                        *duration_s,
                    )?,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        let fov = (0..count)
            .map(|k| {
                let src = &self.fov[k % self.fov.len()];
                Ok(Arc::new(match src {
                    FovSource::Path(p) => load_fov_trace(p)?,
                    FovSource::Synthetic {
                        model,
                        duration_s,
                        seed,
                    } => generate_synthetic_fov(seed.wrapping_add(k as u64), model, *duration_s)?,
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = match &self.weights {
            Some(p) => WeightTable::load(p)?,
            None => WeightTable::default(),
        };
        Ok(Resolved {
            manifest: Arc::new(manifest),
            bandwidth,
            fov,
            compute: self.compute.clone(),
            player: self.player.clone(),
            weights,
        })
    }
}

impl Resolved {
    /// Environment of client `k`. The player seed is offset by `k` so that
    /// random replay offsets differ between clients.
    pub fn env(&self, k: usize) -> Result<StreamEnv> {
        let mut player = self.player.clone();
        player.seed = player.seed.wrapping_add(k as u64);
        let env = StreamEnv::new(
            self.manifest.clone(),
            self.bandwidth[k % self.bandwidth.len()].clone(),
            self.fov[k % self.fov.len()].clone(),
            self.compute.clone(),
            player,
        )?;
        Ok(env.with_weights(self.weights.clone()))
    }
}
