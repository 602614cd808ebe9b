//! Output files. Every file opens with a `# spec-sha256:` comment line so a
//! result can be traced back to the exact resolved spec that produced it.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use volumetric_abr::eval::Summary;
use volumetric_abr::fed::RoundMetrics;
use volumetric_abr::sim::{ChunkRecord, CHUNK_LOG_HEADER};

use crate::failure::Failure;

pub const EPISODE_HEADER: &str =
    "episode,chunks,mean_qoe,mean_level,mean_psnr,total_rebuffer_s,mean_bandwidth_mbps";
pub const CURVE_HEADER: &str =
    "round,participants,failed,steps,mean_reward,critic_loss,mean_entropy,episodes_finished";
pub const COMPARE_HEADER: &str =
    "algo,mean_qoe,mean_level,mean_psnr,total_rebuffer_s,mean_bandwidth_mbps";

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// A line-oriented output file. Each line is flushed as it is written, so a
/// long training run leaves a readable prefix if it is interrupted.
pub struct LineFile {
    path: PathBuf,
    file: File,
}

impl LineFile {
    pub fn create(path: PathBuf, hash: &str) -> Result<Self, Failure> {
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut f = LineFile { path, file };
        f.line(&format!("# spec-sha256: {hash}"))?;
        Ok(f)
    }

    pub fn line(&mut self, text: &str) -> Result<(), Failure> {
        writeln!(self.file, "{text}")
            .and_then(|_| self.file.flush())
            .map_err(|e| io_err(&self.path, e))
    }
}

pub fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn curve_row(m: &RoundMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        m.round,
        m.participants,
        m.failed,
        m.steps,
        m.mean_reward,
        m.critic_loss,
        m.mean_entropy,
        m.episodes_finished
    )
}

pub fn chunk_header() -> String {
    format!("episode,{CHUNK_LOG_HEADER}")
}

pub fn chunk_row(episode: usize, r: &ChunkRecord) -> String {
    format!(
        "{episode},{},{},{},{},{},{},{},{},{},{}",
        r.chunk,
        r.level,
        r.compressed,
        r.bytes,
        r.download_s,
        r.decode_s,
        r.rebuffer_s,
        r.psnr_sum,
        r.delta_l,
        r.qoe
    )
}

pub fn summary_fields(s: &Summary) -> String {
    format!(
        "{},{},{},{},{}",
        s.mean_qoe, s.mean_level, s.mean_psnr, s.total_rebuffer_s, s.mean_bandwidth_mbps
    )
}

/// Writes a JSON document after the hash line.
pub fn write_json(path: PathBuf, hash: &str, body: &str) -> Result<(), Failure> {
    let mut f = LineFile::create(path, hash)?;
    f.line(body)
}

/// Reads a JSON file written by this tool, skipping leading `#` lines.
pub fn read_json(path: &Path) -> std::io::Result<String> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n"))
}
