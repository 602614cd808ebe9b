use std::path::Path;

use serde::Serialize;
use volumetric_abr::agent::{ArchSpec, PolicyParams};
use volumetric_abr::eval::{evaluate, mean_episode_qoe, Controller, Summary};
use volumetric_abr::fed::FedTrainer;
use volumetric_abr::sim::ChunkRecord;

use crate::failure::Failure;
use crate::output::{self, LineFile};
use crate::spec::Resolved;

fn arch_for(r: &Resolved, levels: u8) -> ArchSpec {
    r.spec.arch.unwrap_or_else(|| ArchSpec::standard(levels))
}

pub fn train(r: &Resolved) -> Result<(), Failure> {
    if !r.spec.algo.is_learned() {
        return Err(Failure::Config(format!(
            "`{}` is a fixed rule and has nothing to train",
            r.spec.algo.name()
        )));
    }
    let fed = &r.spec.fed;
    let scenario = r.spec.scenario.resolve(fed.clients)?;
    let arch = arch_for(r, scenario.manifest.levels());
    let init = PolicyParams::init(arch, r.seed)?;
    let mut trainer =
        FedTrainer::new(init, r.spec.hyper.clone(), fed.clone(), |k| scenario.env(k))?;

    output::prepare_dir(&r.out)?;
    let mut curve = LineFile::create(r.out.join("curve.csv"), &r.hash)?;
    curve.line(output::CURVE_HEADER)?;
    for _ in 0..fed.rounds {
        let m = trainer.run_round()?;
        curve.line(&output::curve_row(&m))?;
    }
    output::write_json(
        r.out.join("checkpoint.json"),
        &r.hash,
        &trainer.global.to_checkpoint_json(),
    )
}

fn load_checkpoint(path: &Path) -> Result<PolicyParams, Failure> {
    let text = output::read_json(path)
        .map_err(|e| Failure::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    PolicyParams::from_checkpoint_json(text.as_bytes())
        .map_err(|e| Failure::Config(format!("checkpoint {}: {e}", path.display())))
}

/// Plays the evaluation episodes of one spec.
pub fn play(r: &Resolved) -> Result<Vec<Vec<ChunkRecord>>, Failure> {
    let scenario = r.spec.scenario.resolve(1)?;
    let mut env = scenario.env(0)?;
    let mut controller = match r.spec.algo.baseline() {
        Some(b) => Controller::Baseline(b, r.spec.baseline.clone()),
        None => {
            let path = r.spec.checkpoint.as_ref().ok_or_else(|| {
                Failure::Config(format!(
                    "evaluating `{}` needs a checkpoint (spec `checkpoint` or --checkpoint)",
                    r.spec.algo.name()
                ))
            })?;
            let params = load_checkpoint(path)?;
            let want = arch_for(r, scenario.manifest.levels());
            if params.arch != want {
                return Err(Failure::Config(format!(
                    "checkpoint architecture {:?} does not match the spec's {:?}",
                    params.arch, want
                )));
            }
            Controller::Greedy(params)
        }
    };
    Ok(evaluate(&mut env, &mut controller, r.spec.episodes)?)
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    algo: &'a str,
    episodes: usize,
    mean_episode_qoe: f64,
    #[serde(flatten)]
    summary: Summary,
}

pub fn eval(r: &Resolved) -> Result<(), Failure> {
    let episodes = play(r)?;
    output::prepare_dir(&r.out)?;

    let mut chunks = LineFile::create(r.out.join("chunks.csv"), &r.hash)?;
    chunks.line(&output::chunk_header())?;
    let mut per = LineFile::create(r.out.join("episodes.csv"), &r.hash)?;
    per.line(output::EPISODE_HEADER)?;
    for (i, records) in episodes.iter().enumerate() {
        for rec in records {
            chunks.line(&output::chunk_row(i, rec))?;
        }
        let s = Summary::from_records(records)?;
        per.line(&format!("{i},{},{}", s.chunks, output::summary_fields(&s)))?;
    }

    let all: Vec<ChunkRecord> = episodes.iter().flatten().cloned().collect();
    let file = SummaryFile {
        algo: r.spec.algo.name(),
        episodes: episodes.len(),
        mean_episode_qoe: mean_episode_qoe(&episodes),
        summary: Summary::from_records(&all)?,
    };
    let body = serde_json::to_string_pretty(&file).expect("summary serializes");
    output::write_json(r.out.join("summary.json"), &r.hash, &body)
}

/// Evaluates several specs on the same scenario and seed and tabulates them
/// in input order.
pub fn compare(specs: &[Resolved], out: &Path) -> Result<(), Failure> {
    let first = specs
        .first()
        .ok_or_else(|| Failure::Config("compare needs at least one spec".into()))?;
    for s in &specs[1..] {
        if s.spec.scenario != first.spec.scenario {
            return Err(Failure::Config(
                "compared specs must share the same scenario".into(),
            ));
        }
        if s.seed != first.seed {
            return Err(Failure::Config(format!(
                "compared specs must share the same seed ({} vs {})",
                first.seed, s.seed
            )));
        }
    }
    let mut rows = Vec::with_capacity(specs.len());
    for s in specs {
        let all: Vec<ChunkRecord> = play(s)?.into_iter().flatten().collect();
        let summary = Summary::from_records(&all)?;
        rows.push(format!(
            "{},{}",
            s.spec.algo.name(),
            output::summary_fields(&summary)
        ));
    }
    let joined: Vec<&str> = specs.iter().map(|s| s.hash.as_str()).collect();
    output::prepare_dir(out)?;
    let mut table = LineFile::create(out.join("compare.csv"), &joined.join(","))?;
    table.line(output::COMPARE_HEADER)?;
    for row in rows {
        table.line(&row)?;
    }
    Ok(())
}
