//! Run-directory layout and the (de)serialization of every file in it.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wpcn_core::environment::{EpisodeReport, SlotRecord};
use wpcn_core::neural::{Checkpoint, Mlp};
use wpcn_core::orchestrator::{read_csv, write_csv, EpisodeMetrics, Scheme, SchemeId, Trainer};
use wpcn_core::sac::{Actor, ActorSnapshot};
use wpcn_core::WorldConfig;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
pub const METRICS: &str = "metrics.csv";
pub const TRAJECTORY: &str = "trajectory.jsonl";
pub const REPORTS: &str = "eval_reports.jsonl";
pub const STATE: &str = "state.json";
pub const RNG: &str = "rng.json";
pub const TBAR_SWEEP: &str = "tbar_sweep.csv";
pub const SWEEP: &str = "sweep.csv";
pub const SWEEP_SUMMARY: &str = "sweep_summary.csv";
pub const CHECKPOINTS: &str = "checkpoints";

/// Overrides the base directory of relative `--out` paths.
pub const OUT_ROOT_ENV: &str = "WPCN_OUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Train,
    Eval,
    Benchmark,
    Sweep,
    Export,
}

/// Description of a run directory, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: CommandKind,
    pub config_path: Option<PathBuf>,
    pub profile: String,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub scheme: Option<SchemeId>,
    /// Phase-division switch slot.
    pub tbar: Option<usize>,
    pub episodes_planned: usize,
    pub episodes_done: usize,
    /// Run whose checkpoints an evaluation loaded.
    pub source_run: Option<PathBuf>,
    /// Checkpoint files, relative to the run directory.
    pub checkpoints: Vec<PathBuf>,
    pub resumes: usize,
}

impl RunManifest {
    pub fn scheme(&self) -> Result<Scheme> {
        let id = self.scheme.context("run has no scheme")?;
        Ok(match (id, self.tbar) {
            (SchemeId::PhaseDivision, Some(t)) => Scheme::phase_division(t),
            (SchemeId::PhaseDivision, None) => bail!("phase-division run without a switch slot"),
            (id, _) => Scheme::new(id),
        })
    }
}

/// One line of `trajectory.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub episode: usize,
    #[serde(flatten)]
    pub record: SlotRecord,
}

/// One line of `eval_reports.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub episode: usize,
    #[serde(flatten)]
    pub report: EpisodeReport,
}

/// Resolves a relative `--out` against `WPCN_OUT_ROOT` when it is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Creates an empty output directory. An existing non-empty directory is
/// cleared only with `force`, and only if it is a previous run directory.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if !dir.exists() {
        return fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()));
    }
    ensure!(dir.is_dir(), "{} is not a directory", dir.display());
    let entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    if entries.is_empty() {
        return Ok(());
    }
    ensure!(
        force,
        "output directory {} is not empty (pass --force to overwrite)",
        dir.display()
    );
    ensure!(
        dir.join(MANIFEST).is_file(),
        "refusing to overwrite {}: it has no {MANIFEST}",
        dir.display()
    );
    for e in entries {
        let p = e.path();
        if e.file_type()?.is_dir() {
            fs::remove_dir_all(&p)?;
        } else {
            fs::remove_file(&p)?;
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f))
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l?;
            serde_json::from_str(&l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(rows, BufWriter::new(f))?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_csv(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_config(dir: &Path, cfg: &WorldConfig) -> Result<()> {
    fs::write(dir.join(CONFIG), cfg.to_json_pretty() + "\n")?;
    Ok(())
}

pub fn read_config(dir: &Path) -> Result<WorldConfig> {
    let path = dir.join(CONFIG);
    WorldConfig::from_json_file(&path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_metrics(dir: &Path) -> Result<Vec<EpisodeMetrics>> {
    read_rows(&dir.join(METRICS))
}

fn checkpoint_name(u: usize, what: &str) -> PathBuf {
    Path::new(CHECKPOINTS).join(format!("uav{u}_{what}.json"))
}

/// Writes config, metrics, per-network checkpoints, the full trainer state
/// and its RNG. Returns the checkpoint paths relative to `dir`.
pub fn save_trainer(dir: &Path, trainer: &Trainer) -> Result<Vec<PathBuf>> {
    write_config(dir, trainer.config())?;
    write_rows(&dir.join(METRICS), trainer.metrics())?;
    fs::create_dir_all(dir.join(CHECKPOINTS))?;
    let mut written = Vec::new();
    let mut put = |rel: PathBuf, text: String| -> Result<()> {
        fs::write(dir.join(&rel), text + "\n")?;
        written.push(rel);
        Ok(())
    };
    for (u, actor) in trainer.actors().iter().enumerate() {
        put(
            checkpoint_name(u, "actor"),
            serde_json::to_string_pretty(&actor.snapshot())?,
        )?;
    }
    for (u, m) in trainer.sac_models().iter().enumerate() {
        for (name, net) in [("v1", &m.v1), ("v2", &m.v2), ("q1", &m.q1), ("q2", &m.q2)] {
            put(checkpoint_name(u, name), net.to_checkpoint(name).to_json())?;
        }
    }
    for (u, d) in trainer.dqn_models().iter().enumerate() {
        put(
            checkpoint_name(u, "dqn_eval"),
            d.eval.to_checkpoint("dqn_eval").to_json(),
        )?;
        put(
            checkpoint_name(u, "dqn_target"),
            d.target.to_checkpoint("dqn_target").to_json(),
        )?;
    }
    let mut w = BufWriter::new(File::create(dir.join(STATE))?);
    serde_json::to_writer(&mut w, trainer)?;
    w.flush()?;
    write_json(&dir.join(RNG), trainer.rng_state())?;
    Ok(written)
}

/// Restores the trainer state. The RNG is `None` when `rng.json` is absent.
pub fn load_trainer(dir: &Path) -> Result<(Trainer, Option<ChaCha8Rng>)> {
    let trainer: Trainer =
        read_json(&dir.join(STATE)).context("corrupt or missing trainer state")?;
    let saved = read_config(dir)?;
    ensure!(
        &saved == trainer.config(),
        "{CONFIG} does not match the saved trainer state in {}",
        dir.display()
    );
    let rng_path = dir.join(RNG);
    let rng = if rng_path.exists() {
        Some(read_json(&rng_path)?)
    } else {
        None
    };
    Ok((trainer, rng))
}

/// Evaluation-only trainer built from the actor and evaluate-network checkpoints.
pub fn load_policies(dir: &Path, cfg: WorldConfig, scheme: Scheme) -> Result<Trainer> {
    let mut actors = Vec::new();
    let mut nets = Vec::new();
    for u in 0..cfg.num_uavs {
        let snap: ActorSnapshot = read_json(&dir.join(checkpoint_name(u, "actor")))?;
        actors.push(
            Actor::from_snapshot(&snap).with_context(|| format!("actor checkpoint of UAV {u}"))?,
        );
        let path = dir.join(checkpoint_name(u, "dqn_eval"));
        let text = fs::read_to_string(&path)
            .with_context(|| format!("missing checkpoint {}", path.display()))?;
        let ckpt =
            Checkpoint::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        nets.push(
            Mlp::from_checkpoint(&ckpt).with_context(|| format!("loading {}", path.display()))?,
        );
    }
    Ok(Trainer::from_policies(cfg, scheme, actors, nets)?)
}
