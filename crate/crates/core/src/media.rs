//! Tiled point cloud video model.
//!
//! A video is a cuboid cut into `nx × ny × nz` tiles. Every tile of every
//! chunk is available at `L` quality levels (downsampling ratios `l / L`),
//! and each level exists both compressed (small, costs decode compute) and
//! uncompressed (large, free to decode). The manifest carries the sizes,
//! PSNR and decode cost of each of these variants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Current manifest document version.
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Edge length of a tile along each axis, meters.
    pub extent: [f64; 3],
    /// Minimum corner of the whole grid, meters.
    pub origin: [f64; 3],
}

impl TileGrid {
    pub fn new(
        nx: usize,
        ny: usize,
        nz: usize,
        extent: [f64; 3],
        origin: [f64; 3],
    ) -> Result<Self> {
        let grid = TileGrid {
            nx,
            ny,
            nz,
            extent,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// A grid of `nx × ny × nz` tiles centered on the origin.
    pub fn centered(nx: usize, ny: usize, nz: usize, extent: [f64; 3]) -> Result<Self> {
        let origin = [
            -(nx as f64) * extent[0] / 2.0,
            -(ny as f64) * extent[1] / 2.0,
            -(nz as f64) * extent[2] / 2.0,
        ];
        Self::new(nx, ny, nz, extent, origin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::Validation(format!(
                "grid dimensions must be >= 1, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        if self.extent.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Validation(format!(
                "tile extent must be positive, got {:?}",
                self.extent
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Validation("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn tile_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Flat tile index, x-major (x varies slowest, z fastest).
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.ny + y) * self.nz + z
    }

    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let z = index % self.nz;
        let y = (index / self.nz) % self.ny;
        let x = index / (self.nz * self.ny);
        (x, y, z)
    }

    /// Axis-aligned bounds `(min, max)` of one tile.
    pub fn tile_bounds(&self, index: usize) -> ([f64; 3], [f64; 3]) {
        let (x, y, z) = self.coords(index);
        let cell = [x as f64, y as f64, z as f64];
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for axis in 0..3 {
            lo[axis] = self.origin[axis] + cell[axis] * self.extent[axis];
            hi[axis] = lo[axis] + self.extent[axis];
        }
        (lo, hi)
    }

    pub fn center(&self) -> [f64; 3] {
        let dims = [self.nx as f64, self.ny as f64, self.nz as f64];
        let mut c = [0.0; 3];
        for axis in 0..3 {
            c[axis] = self.origin[axis] + dims[axis] * self.extent[axis] / 2.0;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileVariant {
    /// Quality level, 1-based.
    pub level: u8,
    pub compressed_size: u64,
    pub uncompressed_size: u64,
    pub psnr: f64,
    /// Compute units needed to decode the compressed variant for one chunk.
    pub decode_cost: f64,
    /// Fraction of points kept, `level / L`.
    pub sample_ratio: f64,
}

impl TileVariant {
    pub fn size(&self, compressed: bool) -> u64 {
        if compressed {
            self.compressed_size
        } else {
            self.uncompressed_size
        }
    }

    /// Decode cost charged for the chosen representation. Uncompressed
    /// tiles need no decoding.
    pub fn cost(&self, compressed: bool) -> f64 {
        if compressed {
            self.decode_cost
        } else {
            0.0
        }
    }
}

/// A chunk-level choice: one quality level and one representation for the
/// tiles in view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Action {
    pub level: u8,
    pub compressed: bool,
}

impl Action {
    pub fn new(level: u8, compressed: bool) -> Self {
        Action { level, compressed }
    }

    /// Index in the `2L` action space: compressed levels occupy `0..L`,
    /// uncompressed levels `L..2L`.
    pub fn index(&self, levels: u8) -> usize {
        let base = if self.compressed { 0 } else { levels as usize };
        base + self.level as usize - 1
    }

    pub fn from_index(index: usize, levels: u8) -> Result<Self> {
        let l = levels as usize;
        if index >= 2 * l {
            return Err(Error::Config(format!(
                "action index {index} outside 0..{}",
                2 * l
            )));
        }
        Ok(if index < l {
            Action::new(index as u8 + 1, true)
        } else {
            Action::new((index - l) as u8 + 1, false)
        })
    }
}

/// Set of tiles, as a membership mask over flat tile indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileSet {
    mask: Vec<bool>,
}

impl TileSet {
    pub fn empty(tiles: usize) -> Self {
        TileSet {
            mask: vec![false; tiles],
        }
    }

    pub fn all(tiles: usize) -> Self {
        TileSet {
            mask: vec![true; tiles],
        }
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        TileSet { mask }
    }

    pub fn from_indices(tiles: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut set = Self::empty(tiles);
        for i in indices {
            set.mask[i] = true;
        }
        set
    }

    pub fn contains(&self, tile: usize) -> bool {
        self.mask.get(tile).copied().unwrap_or(false)
    }

    pub fn insert(&mut self, tile: usize) {
        self.mask[tile] = true;
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn universe(&self) -> usize {
        self.mask.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| i)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileManifest {
    pub video_id: String,
    pub grid: TileGrid,
    pub chunk_duration_ms: u32,
    pub chunk_count: usize,
    levels: u8,
    /// Flat table indexed by `(chunk, tile, level - 1)`.
    variants: Vec<TileVariant>,
}

impl TileManifest {
    /// Builds a manifest from a table laid out as `[chunk][tile][level-1]`.
    pub fn from_table(
        video_id: impl Into<String>,
        grid: TileGrid,
        chunk_duration_ms: u32,
        table: Vec<Vec<Vec<TileVariant>>>,
    ) -> Result<Self> {
        grid.validate()?;
        let chunk_count = table.len();
        let levels = table
            .first()
            .and_then(|c| c.first())
            .map(|t| t.len())
            .unwrap_or(0);
        if levels == 0 || levels > u8::MAX as usize / 2 {
            return Err(Error::Validation(format!(
                "level count must be in 1..=127, got {levels}"
            )));
        }
        let mut variants = Vec::with_capacity(chunk_count * grid.tile_count() * levels);
        for (c, chunk) in table.into_iter().enumerate() {
            if chunk.len() != grid.tile_count() {
                return Err(Error::Validation(format!(
                    "chunk {c}: expected {} tiles, got {}",
                    grid.tile_count(),
                    chunk.len()
                )));
            }
            for (t, tile) in chunk.into_iter().enumerate() {
                if tile.len() != levels {
                    return Err(Error::Validation(format!(
                        "chunk {c} tile {t}: expected {levels} levels, got {}",
                        tile.len()
                    )));
                }
                variants.extend(tile);
            }
        }
        let manifest = TileManifest {
            video_id: video_id.into(),
            grid,
            chunk_duration_ms,
            chunk_count,
            levels: levels as u8,
            variants,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn levels(&self) -> u8 {
        self.levels
    }

    pub fn action_count(&self) -> usize {
        2 * self.levels as usize
    }

    pub fn tile_count(&self) -> usize {
        self.grid.tile_count()
    }

    pub fn chunk_duration_s(&self) -> f64 {
        self.chunk_duration_ms as f64 / 1000.0
    }

    pub fn variant_count(&self) -> usize {
        self.variants.len()
    }

    pub fn variant(&self, chunk: usize, tile: usize, level: u8) -> &TileVariant {
        let l = self.levels as usize;
        &self.variants[(chunk * self.tile_count() + tile) * l + level as usize - 1]
    }

    /// All levels of one tile in one chunk, lowest first.
    pub fn tile_levels(&self, chunk: usize, tile: usize) -> &[TileVariant] {
        let l = self.levels as usize;
        let start = (chunk * self.tile_count() + tile) * l;
        &self.variants[start..start + l]
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_duration_ms == 0 {
            return Err(Error::Validation("chunk_duration_ms must be > 0".into()));
        }
        if self.chunk_count == 0 {
            return Err(Error::Validation("manifest has no chunks".into()));
        }
        let expected = self.chunk_count * self.tile_count() * self.levels as usize;
        if self.variants.len() != expected {
            return Err(Error::Validation(format!(
                "variant table has {} entries, expected {expected}",
                self.variants.len()
            )));
        }
        for chunk in 0..self.chunk_count {
            for tile in 0..self.tile_count() {
                check_tile(self.tile_levels(chunk, tile), chunk, tile)?;
            }
        }
        Ok(())
    }

    /// Serializes to the canonical compact JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("manifest document serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("manifest document serializes")
    }

    fn to_document(&self) -> ManifestDocument {
        let tiles = (0..self.tile_count())
            .map(|tile| TileDocument {
                levels: (0..self.chunk_count)
                    .map(|chunk| {
                        self.tile_levels(chunk, tile)
                            .iter()
                            .map(|v| LevelDocument {
                                level: v.level,
                                comp_bytes: v.compressed_size,
                                uncomp_bytes: v.uncompressed_size,
                                psnr_db: v.psnr,
                                decode_cost: v.decode_cost,
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        ManifestDocument {
            version: MANIFEST_VERSION,
            video_id: self.video_id.clone(),
            grid: self.grid.clone(),
            chunk_duration_ms: self.chunk_duration_ms,
            chunks: self.chunk_count,
            tiles,
        }
    }
}

fn check_tile(levels: &[TileVariant], chunk: usize, tile: usize) -> Result<()> {
    let total = levels.len();
    for (i, v) in levels.iter().enumerate() {
        let at = || format!("chunk {chunk} tile {tile} level {}", v.level);
        if v.level as usize != i + 1 {
            return Err(Error::Validation(format!(
                "{}: expected level {}",
                at(),
                i + 1
            )));
        }
        if v.compressed_size == 0 {
            return Err(Error::Validation(format!(
                "{}: compressed size must be > 0",
                at()
            )));
        }
        if v.uncompressed_size <= v.compressed_size {
            return Err(Error::Validation(format!(
                "{}: uncompressed size {} must exceed compressed size {}",
                at(),
                v.uncompressed_size,
                v.compressed_size
            )));
        }
        if !v.psnr.is_finite() {
            return Err(Error::Validation(format!("{}: psnr must be finite", at())));
        }
        if !(v.decode_cost.is_finite() && v.decode_cost >= 0.0) {
            return Err(Error::Validation(format!(
                "{}: decode cost must be finite and >= 0",
                at()
            )));
        }
        let ratio = (i + 1) as f64 / total as f64;
        if v.sample_ratio != ratio {
            return Err(Error::Validation(format!(
                "{}: sample ratio must be {ratio}",
                at()
            )));
        }
        if i > 0 {
            let prev = &levels[i - 1];
            if v.psnr <= prev.psnr {
                return Err(Error::Validation(format!(
                    "{}: psnr must increase with level",
                    at()
                )));
            }
            if v.decode_cost < prev.decode_cost {
                return Err(Error::Validation(format!(
                    "{}: decode cost decreases with level",
                    at()
                )));
            }
            if v.compressed_size < prev.compressed_size {
                return Err(Error::Validation(format!(
                    "{}: compressed size decreases with level",
                    at()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDocument {
    version: u32,
    video_id: String,
    grid: TileGrid,
    chunk_duration_ms: u32,
    chunks: usize,
    tiles: Vec<TileDocument>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TileDocument {
    /// One entry per chunk, each listing every level.
    levels: Vec<Vec<LevelDocument>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelDocument {
    level: u8,
    comp_bytes: u64,
    uncomp_bytes: u64,
    psnr_db: f64,
    decode_cost: f64,
}

/// Parses and validates a JSON manifest document.
pub fn parse_manifest(bytes: &[u8]) -> Result<TileManifest> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let doc: ManifestDocument = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    if doc.version != MANIFEST_VERSION {
        return Err(Error::Parse {
            path: "version".into(),
            message: format!(
                "unsupported version {}, expected {MANIFEST_VERSION}",
                doc.version
            ),
        });
    }
    doc.grid.validate()?;
    if doc.tiles.len() != doc.grid.tile_count() {
        return Err(Error::Validation(format!(
            "grid has {} tiles but document lists {}",
            doc.grid.tile_count(),
            doc.tiles.len()
        )));
    }
    let levels = doc
        .tiles
        .first()
        .and_then(|t| t.levels.first())
        .map(Vec::len)
        .unwrap_or(0);
    let mut table: Vec<Vec<Vec<TileVariant>>> = (0..doc.chunks)
        .map(|_| Vec::with_capacity(doc.tiles.len()))
        .collect();
    for (t, tile) in doc.tiles.into_iter().enumerate() {
        if tile.levels.len() != doc.chunks {
            return Err(Error::Validation(format!(
                "tile {t}: expected {} chunks, got {}",
                doc.chunks,
                tile.levels.len()
            )));
        }
        for (c, chunk_levels) in tile.levels.into_iter().enumerate() {
            if chunk_levels.len() != levels {
                return Err(Error::Validation(format!(
                    "chunk {c} tile {t}: expected {levels} levels, got {}",
                    chunk_levels.len()
                )));
            }
            table[c].push(
                chunk_levels
                    .into_iter()
                    .map(|l| TileVariant {
                        level: l.level,
                        compressed_size: l.comp_bytes,
                        uncompressed_size: l.uncomp_bytes,
                        psnr: l.psnr_db,
                        decode_cost: l.decode_cost,
                        sample_ratio: l.level as f64 / levels as f64,
                    })
                    .collect(),
            );
        }
    }
    TileManifest::from_table(doc.video_id, doc.grid, doc.chunk_duration_ms, table)
}

/// Reads and parses a manifest file.
pub fn load_manifest(path: impl AsRef<std::path::Path>) -> Result<TileManifest> {
    parse_manifest(&std::fs::read(path)?)
}

/// Size model for synthetic manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeProfile {
    pub levels: u8,
    pub chunk_duration_ms: u32,
    /// Uncompressed bytes of a full-resolution tile chunk.
    pub base_tile_bytes: f64,
    /// Size scales as `sample_ratio ^ level_growth`.
    pub level_growth: f64,
    /// Compressed bytes as a fraction of uncompressed bytes.
    pub compression_ratio: f64,
    pub psnr_base_db: f64,
    pub psnr_step_db: f64,
    /// Decode compute units per megabyte of decoded (uncompressed) data.
    pub decode_cost_per_mb: f64,
    /// Relative per tile-chunk size variation, in `[0, 1)`.
    pub jitter: f64,
}

impl Default for SizeProfile {
    fn default() -> Self {
        SizeProfile {
            levels: 5,
            chunk_duration_ms: 330,
            base_tile_bytes: 400_000.0,
            level_growth: 1.0,
            compression_ratio: 0.2,
            psnr_base_db: 28.0,
            psnr_step_db: 3.0,
            decode_cost_per_mb: 1.0,
            jitter: 0.3,
        }
    }
}

impl SizeProfile {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("size profile: {what}")));
        if self.levels == 0 || self.levels > 127 {
            return bad("levels must be in 1..=127");
        }
        if self.chunk_duration_ms == 0 {
            return bad("chunk duration must be > 0");
        }
        if !(self.base_tile_bytes.is_finite() && self.base_tile_bytes > 0.0) {
            return bad("base tile size must be positive");
        }
        if !(self.level_growth.is_finite() && self.level_growth >= 0.0) {
            return bad("level growth must be >= 0");
        }
        if !(self.compression_ratio > 0.0 && self.compression_ratio < 1.0) {
            return bad("compression ratio must be in (0, 1)");
        }
        if !(self.psnr_step_db.is_finite() && self.psnr_step_db > 0.0)
            || !self.psnr_base_db.is_finite()
        {
            return bad("psnr step must be positive and base finite");
        }
        if !(self.decode_cost_per_mb.is_finite() && self.decode_cost_per_mb >= 0.0) {
            return bad("decode cost must be >= 0");
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad("jitter must be in [0, 1)");
        }
        Ok(())
    }
}

/// Generates a deterministic synthetic manifest.
pub fn generate_synthetic_manifest(
    seed: u64,
    grid: TileGrid,
    chunks: usize,
    profile: &SizeProfile,
) -> Result<TileManifest> {
    profile.validate()?;
    grid.validate().map_err(|e| Error::Config(e.to_string()))?;
    if chunks == 0 {
        return Err(Error::Config("chunk count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = profile.levels;
    let mut table = Vec::with_capacity(chunks);
    for chunk in 0..chunks {
        let mut tiles = Vec::with_capacity(grid.tile_count());
        for tile in 0..grid.tile_count() {
            let scale = 1.0 + profile.jitter * (2.0 * rng.random::<f64>() - 1.0);
            let psnr_offset = profile.jitter * (rng.random::<f64>() - 0.5);
            let mut variants = Vec::with_capacity(levels as usize);
            for level in 1..=levels {
                let ratio = level as f64 / levels as f64;
                let uncompressed =
                    (profile.base_tile_bytes * scale * ratio.powf(profile.level_growth)).round();
                let compressed = (profile.compression_ratio * uncompressed).round();
                if compressed < 1.0 || compressed >= uncompressed {
                    return Err(Error::Config(format!(
                        "size profile yields degenerate sizes at chunk {chunk} tile {tile} level {level}"
                    )));
                }
                variants.push(TileVariant {
                    level,
                    compressed_size: compressed as u64,
                    uncompressed_size: uncompressed as u64,
                    psnr: profile.psnr_base_db
                        + profile.psnr_step_db * (level - 1) as f64
                        + psnr_offset,
                    decode_cost: profile.decode_cost_per_mb * uncompressed / 1e6,
                    sample_ratio: ratio,
                });
            }
            tiles.push(variants);
        }
        table.push(tiles);
    }
    TileManifest::from_table(
        format!("synthetic-{seed}"),
        grid,
        profile.chunk_duration_ms,
        table,
    )
    .map_err(|e| Error::Config(e.to_string()))
}

/// Total bytes of a chunk for every action: visible tiles at the action's
/// variant, every other tile at level 1 compressed.
pub fn chunk_size_vector(manifest: &TileManifest, chunk: usize, visible: &TileSet) -> Vec<u64> {
    assert!(chunk < manifest.chunk_count, "chunk {chunk} out of range");
    let levels = manifest.levels();
    let mut baseline = 0u64;
    for tile in (0..manifest.tile_count()).filter(|t| !visible.contains(*t)) {
        baseline += manifest.variant(chunk, tile, 1).compressed_size;
    }
    (0..manifest.action_count())
        .map(|index| {
            let action = Action::from_index(index, levels).expect("index in range");
            baseline
                + visible
                    .iter()
                    .map(|tile| {
                        manifest
                            .variant(chunk, tile, action.level)
                            .size(action.compressed)
                    })
                    .sum::<u64>()
        })
        .collect()
}
