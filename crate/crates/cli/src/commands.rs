use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use serde::Serialize;
use serde_json::Value;
use wpcn_core::orchestrator::{
    best_tbar, coverage_sweep, mean_ci95, scalability_sweep, tbar_candidates, tbar_sweep,
    EpisodeRun, Scheme, SchemeId, Trainer, EVAL_SEED_SALT,
};
use wpcn_core::WorldConfig;

use crate::args::{
    BenchmarkArgs, Cli, Command, ConfigArgs, EvalArgs, ExportArgs, ExportWhat, Profile, ResumeArgs,
    SweepKind, TrainArgs,
};
use crate::artifacts::*;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Resume(a) => resume(a),
        Command::Eval(a) => eval(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Sweep(a) => sweep(a.kind),
        Command::Export(a) => export(a),
    }
}

fn base_config(profile: Profile) -> WorldConfig {
    match profile {
        Profile::Full => WorldConfig::default(),
        Profile::Desk => WorldConfig::desk(),
    }
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// The profile's config with the `--config` file laid over it.
pub fn resolve_config(args: &ConfigArgs) -> Result<WorldConfig> {
    let mut cfg = base_config(args.profile);
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let patch: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut value = serde_json::to_value(&cfg)?;
        merge(&mut value, patch);
        cfg = serde_json::from_value(value)
            .with_context(|| format!("invalid config {}", path.display()))?;
    }
    if let Some(n) = args.episodes {
        cfg.learning.episodes = n;
    }
    Ok(cfg)
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn log_episode(trainer: &Trainer) {
    if let Some(m) = trainer.metrics().last() {
        info!(
            "episode {}/{}: C_total {:.1}, mean return {:.3}",
            m.episode + 1,
            trainer.episodes_planned(),
            m.c_total,
            m.mean_return
        );
    }
}

/// Trains until the plan or `stop_after` is reached, then persists everything.
fn train_and_save(
    dir: &Path,
    trainer: &mut Trainer,
    stop_after: Option<usize>,
    manifest: &mut RunManifest,
) -> Result<()> {
    let limit = stop_after
        .unwrap_or(usize::MAX)
        .min(trainer.episodes_planned());
    while trainer.episodes_done() < limit {
        trainer.train_episode()?;
        log_episode(trainer);
    }
    save_run(dir, trainer, manifest, 1)?;
    println!(
        "{}: {}/{} episodes trained",
        dir.display(),
        trainer.episodes_done(),
        trainer.episodes_planned()
    );
    Ok(())
}

/// Persists the trainer plus `eval_episodes` recorded deterministic episodes.
fn save_run(
    dir: &Path,
    trainer: &Trainer,
    manifest: &mut RunManifest,
    eval_episodes: usize,
) -> Result<Vec<EpisodeRun>> {
    manifest.checkpoints = save_trainer(dir, trainer)?;
    manifest.episodes_done = trainer.episodes_done();
    manifest.episodes_planned = trainer.episodes_planned();
    let runs = trainer.run_evaluation(eval_episodes, manifest.seeds[0] ^ EVAL_SEED_SALT, true)?;
    write_eval(dir, &runs)?;
    write_json(&dir.join(MANIFEST), manifest)?;
    Ok(runs)
}

fn write_eval(dir: &Path, runs: &[EpisodeRun]) -> Result<()> {
    let reports: Vec<ReportLine> = runs
        .iter()
        .enumerate()
        .map(|(episode, r)| ReportLine {
            episode,
            report: r.report.clone(),
        })
        .collect();
    write_jsonl(&dir.join(REPORTS), &reports)?;
    let traj: Vec<TrajectoryLine> = runs
        .iter()
        .enumerate()
        .flat_map(|(episode, r)| {
            r.trajectory.iter().map(move |rec| TrajectoryLine {
                episode,
                record: rec.clone(),
            })
        })
        .collect();
    write_jsonl(&dir.join(TRAJECTORY), &traj)
}

fn print_eval_summary(runs: &[EpisodeRun]) {
    let c: Vec<f64> = runs.iter().map(|r| r.report.c_total).collect();
    let (mean, half) = mean_ci95(&c);
    let count = |f: &dyn Fn(&EpisodeRun) -> usize| runs.iter().map(f).sum::<usize>();
    let c_min = count(&|r| r.report.wn_meets_c_min.iter().filter(|&&x| !x).count());
    let b_min = count(&|r| r.report.uav_meets_b_min.iter().filter(|&&x| !x).count());
    let d_min = count(&|r| r.report.d_min_violations);
    let ci = half.map_or(String::new(), |h| format!(" ± {h:.1}"));
    println!(
        "{} evaluation episodes: mean C_total {mean:.1}{ci}; C_min failures {c_min}; B_min failures {b_min}; d_min violation slots {d_min}",
        runs.len()
    );
}

fn new_manifest(
    command: CommandKind,
    cfg: &ConfigArgs,
    out: &Path,
    seeds: Vec<u64>,
) -> RunManifest {
    RunManifest {
        command,
        config_path: cfg.config.clone(),
        profile: cfg.profile.name().to_string(),
        out_dir: out.to_path_buf(),
        seeds,
        scheme: None,
        tbar: None,
        episodes_planned: 0,
        episodes_done: 0,
        source_run: None,
        checkpoints: Vec::new(),
        resumes: 0,
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.config)?;
    let scheme = match (a.scheme, a.tbar) {
        (SchemeId::PhaseDivision, t) => {
            Scheme::phase_division(t.unwrap_or((cfg.horizon_slots / 2).max(2)))
        }
        (_, Some(_)) => bail!("--tbar only applies to phase_division"),
        (id, None) => Scheme::new(id),
    };
    let episodes = cfg.learning.episodes;
    let mut trainer = Trainer::new(cfg, scheme, a.seed, episodes)?;
    let dir = resolve_out(&a.out.out);
    prepare_out_dir(&dir, a.out.force)?;
    let mut manifest = new_manifest(CommandKind::Train, &a.config, &dir, vec![a.seed]);
    manifest.scheme = Some(scheme.id);
    manifest.tbar = (scheme.id == SchemeId::PhaseDivision).then_some(scheme.tbar);
    train_and_save(&dir, &mut trainer, a.stop_after, &mut manifest)
}

fn resume(a: ResumeArgs) -> Result<()> {
    let dir = a.run;
    let mut manifest: RunManifest = read_json(&dir.join(MANIFEST))?;
    ensure!(
        matches!(
            manifest.command,
            CommandKind::Train | CommandKind::Benchmark
        ),
        "{} is not a training run",
        dir.display()
    );
    let (mut trainer, rng) = load_trainer(&dir)?;
    if let Some(path) = a.config {
        let expected = resolve_config(&ConfigArgs {
            config: Some(path.clone()),
            profile: a.profile,
            episodes: Some(trainer.config().learning.episodes),
        })?;
        ensure!(
            &expected == trainer.config(),
            "config {} does not match the config of run {}",
            path.display(),
            dir.display()
        );
    }
    match rng {
        Some(rng) => trainer.restore_rng(rng),
        None => {
            let seed = a
                .seed
                .unwrap_or_else(|| manifest.seeds[0].wrapping_add(trainer.episodes_done() as u64));
            warn!("{} has no {RNG}; continuing with a fresh RNG seeded {seed}, results will differ from an uninterrupted run", dir.display());
            trainer.reseed(seed);
        }
    }
    manifest.resumes += 1;
    train_and_save(&dir, &mut trainer, a.stop_after, &mut manifest)
}

fn eval(a: EvalArgs) -> Result<()> {
    let src = a.run;
    let source: RunManifest = read_json(&src.join(MANIFEST))?;
    let cfg = read_config(&src)?;
    let trainer = load_policies(&src, cfg.clone(), source.scheme()?)?;
    let dir = resolve_out(&a.out.out);
    ensure!(
        absolute(&dir) != absolute(&src),
        "evaluation output must differ from the source run directory"
    );
    prepare_out_dir(&dir, a.out.force)?;
    let runs = trainer.run_evaluation(a.episodes, a.seed, true)?;
    write_config(&dir, &cfg)?;
    write_eval(&dir, &runs)?;
    let manifest = RunManifest {
        command: CommandKind::Eval,
        config_path: Some(src.join(CONFIG)),
        profile: source.profile.clone(),
        out_dir: dir.clone(),
        seeds: vec![a.seed],
        scheme: source.scheme,
        tbar: source.tbar,
        episodes_planned: a.episodes,
        episodes_done: runs.len(),
        source_run: Some(src),
        checkpoints: source.checkpoints.clone(),
        resumes: 0,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    print_eval_summary(&runs);
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let cfg = resolve_config(&a.config)?;
    let dir = resolve_out(&a.out.out);
    prepare_out_dir(&dir, a.out.force)?;
    let scheme = if a.scheme == SchemeId::PhaseDivision {
        let candidates = tbar_candidates(cfg.horizon_slots, cfg.learning.tbar_stride);
        info!(
            "searching {} switch slots with {} episodes each",
            candidates.len(),
            cfg.learning.tbar_episodes
        );
        let curve = tbar_sweep(
            &cfg,
            a.seed,
            &candidates,
            cfg.learning.tbar_episodes,
            a.eval_episodes,
        )?;
        write_rows(&dir.join(TBAR_SWEEP), &curve)?;
        let best = best_tbar(&curve).context("empty switch-slot grid")?;
        info!(
            "best switch slot {} (C_total {:.1})",
            best.tbar, best.c_total
        );
        Scheme::phase_division(best.tbar)
    } else {
        Scheme::new(a.scheme)
    };
    let episodes = cfg.learning.episodes;
    let mut trainer = Trainer::new(cfg, scheme, a.seed, episodes)?;
    let mut manifest = new_manifest(CommandKind::Benchmark, &a.config, &dir, vec![a.seed]);
    manifest.scheme = Some(scheme.id);
    manifest.tbar = (scheme.id == SchemeId::PhaseDivision).then_some(scheme.tbar);
    while trainer.episodes_done() < episodes {
        trainer.train_episode()?;
        log_episode(&trainer);
    }
    let runs = save_run(&dir, &trainer, &mut manifest, a.eval_episodes)?;
    print!("{}: ", scheme.id);
    print_eval_summary(&runs);
    Ok(())
}

#[derive(Debug, Serialize)]
struct CoverageSummary {
    d_cov: f64,
    runs: usize,
    mean_c_total: f64,
    ci95_half_width: Option<f64>,
}

fn sweep(kind: SweepKind) -> Result<()> {
    match kind {
        SweepKind::Scalability {
            config,
            out,
            uavs,
            c_min,
            seed,
            eval_episodes,
        } => {
            let cfg = resolve_config(&config)?;
            let dir = resolve_out(&out.out);
            prepare_out_dir(&dir, out.force)?;
            let rows = scalability_sweep(
                &cfg,
                &uavs,
                &c_min,
                cfg.learning.episodes,
                eval_episodes,
                seed,
            )?;
            write_config(&dir, &cfg)?;
            write_rows(&dir.join(SWEEP), &rows)?;
            let mut m = new_manifest(CommandKind::Sweep, &config, &dir, vec![seed]);
            m.scheme = Some(SchemeId::Mahdrl);
            m.episodes_planned = cfg.learning.episodes;
            write_json(&dir.join(MANIFEST), &m)?;
            for r in &rows {
                println!(
                    "U={} W={} C_min={} C_total={:.1}",
                    r.num_uavs, r.num_wns, r.c_min, r.c_total
                );
            }
        }
        SweepKind::Dcov {
            config,
            out,
            d_cov,
            seeds,
            eval_episodes,
        } => {
            let cfg = resolve_config(&config)?;
            let dir = resolve_out(&out.out);
            prepare_out_dir(&dir, out.force)?;
            let rows = coverage_sweep(&cfg, &d_cov, &seeds, cfg.learning.episodes, eval_episodes)?;
            write_config(&dir, &cfg)?;
            write_rows(&dir.join(SWEEP), &rows)?;
            let summary: Vec<CoverageSummary> = d_cov
                .iter()
                .map(|&d| {
                    let c: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.d_cov == d)
                        .map(|r| r.c_total)
                        .collect();
                    let (mean, half) = mean_ci95(&c);
                    CoverageSummary {
                        d_cov: d,
                        runs: c.len(),
                        mean_c_total: mean,
                        ci95_half_width: half,
                    }
                })
                .collect();
            write_rows(&dir.join(SWEEP_SUMMARY), &summary)?;
            let mut m = new_manifest(CommandKind::Sweep, &config, &dir, seeds);
            m.scheme = Some(SchemeId::Mahdrl);
            m.episodes_planned = cfg.learning.episodes;
            write_json(&dir.join(MANIFEST), &m)?;
            for s in &summary {
                let ci = s
                    .ci95_half_width
                    .map_or(String::new(), |h| format!(" ± {h:.1}"));
                println!(
                    "d_cov={} C_total={:.1}{ci} ({} runs)",
                    s.d_cov, s.mean_c_total, s.runs
                );
            }
        }
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let name = match a.what {
        ExportWhat::Trajectory => TRAJECTORY,
        ExportWhat::Metrics => METRICS,
        ExportWhat::Config => CONFIG,
        ExportWhat::Reports => REPORTS,
        ExportWhat::Manifest => MANIFEST,
    };
    let path = a.run.join(name);
    ensure!(path.is_file(), "run {} has no {name}", a.run.display());
    // Parse before copying so a corrupt artifact is reported, not passed on.
    match a.what {
        ExportWhat::Trajectory => read_jsonl::<TrajectoryLine>(&path).map(|_| ())?,
        ExportWhat::Reports => read_jsonl::<ReportLine>(&path).map(|_| ())?,
        ExportWhat::Metrics => read_metrics(&a.run).map(|_| ())?,
        ExportWhat::Config => read_config(&a.run).map(|_| ())?,
        ExportWhat::Manifest => read_json::<RunManifest>(&path).map(|_| ())?,
    }
    let bytes = fs::read(&path)?;
    match a.output {
        Some(out) => {
            fs::write(&out, bytes).with_context(|| format!("writing {}", out.display()))?
        }
        None => std::io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}
