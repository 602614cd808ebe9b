//! Experiment specification files and command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use volumetric_abr::agent::{ArchSpec, Hyperparams};
use volumetric_abr::baselines::{Baseline, BaselineConfig};
use volumetric_abr::fed::FedConfig;
use volumetric_abr::scenario::Scenario;

use crate::failure::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    /// Federated actor-critic.
    Frl,
    /// Centralized actor-critic on a single client.
    Rl,
    Bb,
    Quetra,
    Rmpc,
}

impl Algo {
    pub fn is_learned(self) -> bool {
        matches!(self, Algo::Frl | Algo::Rl)
    }

    pub fn baseline(self) -> Option<Baseline> {
        match self {
            Algo::Bb => Some(Baseline::Bb),
            Algo::Quetra => Some(Baseline::Quetra),
            Algo::Rmpc => Some(Baseline::Rmpc),
            Algo::Frl | Algo::Rl => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algo::Frl => "frl",
            Algo::Rl => "rl",
            Algo::Bb => "bb",
            Algo::Quetra => "quetra",
            Algo::Rmpc => "rmpc",
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub algo: Algo,
    #[serde(default)]
    pub fed: FedConfig,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default)]
    pub baseline: BaselineConfig,
    /// Network shape; the standard one for the manifest's level count
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<ArchSpec>,
    /// Trained parameters for evaluating `frl` or `rl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "one")]
    pub episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Required, here or on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Values given on the command line; each replaces the spec's own.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub clients: Option<usize>,
    /// Participation ratio.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub local_epochs: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// A spec with overrides applied and its seed settled.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub spec: ExperimentSpec,
    pub seed: u64,
    pub out: PathBuf,
    /// Hex SHA-256 of the canonical JSON of `spec`, output path excluded.
    pub hash: String,
}

pub fn parse(text: &str) -> Result<ExperimentSpec, Failure> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Failure::Config(format!("spec: {} at `{}`", e.inner(), e.path())))
}

pub fn load(path: &Path) -> Result<ExperimentSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read spec {}: {e}", path.display())))?;
    parse(&text)
}

impl ExperimentSpec {
    pub fn apply(mut self, o: &Overrides) -> Result<Resolved, Failure> {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(a) = o.algo {
            self.algo = a;
        }
        if let Some(r) = o.rounds {
            self.fed.rounds = r;
        }
        if let Some(k) = o.clients {
            self.fed.clients = k;
        }
        if let Some(mu) = o.mu {
            self.fed.participation = mu;
        }
        if let Some(e) = o.local_epochs {
            self.hyper.local_epochs = e;
        }
        if let Some(c) = &o.checkpoint {
            self.checkpoint = Some(c.clone());
        }
        let seed = self
            .seed
            .ok_or_else(|| Failure::Config("a seed is required (spec `seed` or --seed)".into()))?;
        let out = self.out.clone().ok_or_else(|| {
            Failure::Config("an output directory is required (spec `out` or --out)".into())
        })?;
        if self.episodes == 0 {
            return Err(Failure::Config("episodes must be >= 1".into()));
        }
        self.fed.seed = seed;
        self.scenario.player.seed = seed;
        if self.algo == Algo::Rl {
            self.fed.clients = 1;
            self.fed.participation = 1.0;
            self.fed.client_weights = None;
        }
        self.fed.validate()?;
        self.hyper.validate()?;
        self.baseline.validate()?;
        // Where results land does not change them, so the location stays out
        // of the hash and identical runs in different directories match.
        let mut hashed = self.clone();
        hashed.out = None;
        let canonical = serde_json::to_string(&hashed).expect("spec serializes");
        let hash = Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Ok(Resolved {
            spec: self,
            seed,
            out,
            hash,
        })
    }
}
