use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use wpcn_cli::artifacts::{
    read_json, read_jsonl, read_metrics, read_rows, CommandKind, ReportLine, RunManifest,
    TrajectoryLine, MANIFEST, METRICS, REPORTS, RNG, TBAR_SWEEP, TRAJECTORY,
};
use wpcn_core::orchestrator::{SchemeId, TbarPoint};

const PATCH: &str = r#"{"horizon_slots": 12, "learning": {"tbar_episodes": 1, "tbar_stride": 5}}"#;

struct Sandbox {
    dir: TempDir,
    patch: PathBuf,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let patch = dir.path().join("patch.json");
        fs::write(&patch, PATCH).unwrap();
        Self { dir, patch }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_wpcn"))
            .args(args)
            .env("RUST_LOG", "warn")
            .env_remove("WPCN_OUT_ROOT")
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "wpcn {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let patch = self.patch.to_str().unwrap();
        let mut args = vec![
            "train",
            "--profile",
            "desk",
            "--config",
            patch,
            "--seed",
            "3",
            "--out",
            out,
        ];
        args.extend_from_slice(extra);
        self.ok(&args);
        self.path(out)
    }
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn train_writes_a_complete_run_directory() {
    let sb = Sandbox::new();
    let run = sb.train("run", &["--episodes", "4"]);
    let metrics = read_metrics(&run).unwrap();
    assert_eq!(metrics.len(), 4);
    assert!(metrics.iter().enumerate().all(|(i, m)| m.episode == i));

    let manifest: RunManifest = read_json(&run.join(MANIFEST)).unwrap();
    assert_eq!(manifest.command, CommandKind::Train);
    assert_eq!(manifest.scheme, Some(SchemeId::Mahdrl));
    assert_eq!((manifest.episodes_planned, manifest.episodes_done), (4, 4));
    assert!(manifest.checkpoints.iter().all(|c| run.join(c).is_file()));
    assert!(!manifest.checkpoints.is_empty());

    let traj: Vec<TrajectoryLine> = read_jsonl(&run.join(TRAJECTORY)).unwrap();
    assert_eq!(traj.len(), 12);
    let reports: Vec<ReportLine> = read_jsonl(&run.join(REPORTS)).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].report.slots, 12);
}

#[test]
fn stopping_and_resuming_matches_a_straight_run() {
    let sb = Sandbox::new();
    let straight = sb.train("straight", &["--episodes", "6"]);
    let split = sb.train("split", &["--episodes", "6", "--stop-after", "3"]);
    assert_eq!(read_metrics(&split).unwrap().len(), 3);
    sb.ok(&["resume", "--run", "split", "--profile", "desk"]);
    assert_eq!(bytes(&straight.join(METRICS)), bytes(&split.join(METRICS)));
    let manifest: RunManifest = read_json(&split.join(MANIFEST)).unwrap();
    assert_eq!(manifest.resumes, 1);
    assert_eq!(manifest.episodes_done, 6);
}

#[test]
fn resume_without_rng_state_warns_and_continues() {
    let sb = Sandbox::new();
    let run = sb.train("run", &["--episodes", "4", "--stop-after", "2"]);
    fs::remove_file(run.join(RNG)).unwrap();
    let out = sb.ok(&["resume", "--run", "run", "--profile", "desk", "--seed", "9"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("WARN"));
    assert_eq!(read_metrics(&run).unwrap().len(), 4);
}

#[test]
fn resume_rejects_a_different_config() {
    let sb = Sandbox::new();
    sb.train("run", &["--episodes", "4", "--stop-after", "2"]);
    let other = sb.path("other.json");
    fs::write(&other, r#"{"horizon_slots": 13}"#).unwrap();
    let out = sb.run(&[
        "resume",
        "--run",
        "run",
        "--profile",
        "desk",
        "--config",
        other.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert_eq!(read_metrics(&sb.path("run")).unwrap().len(), 2);
}

#[test]
fn output_directories_are_never_clobbered_silently() {
    let sb = Sandbox::new();
    let stray = sb.path("stray");
    fs::create_dir(&stray).unwrap();
    fs::write(stray.join("notes.txt"), "keep").unwrap();
    let patch = sb.patch.to_str().unwrap();
    let args = [
        "train",
        "--profile",
        "desk",
        "--config",
        patch,
        "--episodes",
        "1",
        "--out",
        "stray",
    ];
    assert!(!sb.run(&args).status.success());
    let mut forced = args.to_vec();
    forced.push("--force");
    // --force only replaces directories that hold a run.
    assert!(!sb.run(&forced).status.success());
    assert_eq!(fs::read_to_string(stray.join("notes.txt")).unwrap(), "keep");

    sb.train("run", &["--episodes", "1"]);
    assert!(!sb
        .run(&[
            "train",
            "--profile",
            "desk",
            "--config",
            patch,
            "--episodes",
            "2",
            "--out",
            "run"
        ])
        .status
        .success());
    sb.train("run", &["--episodes", "2", "--force"]);
    assert_eq!(read_metrics(&sb.path("run")).unwrap().len(), 2);
}

#[test]
fn relative_outputs_follow_the_output_root() {
    let sb = Sandbox::new();
    let root = sb.path("root");
    fs::create_dir(&root).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wpcn"))
        .args([
            "train",
            "--profile",
            "desk",
            "--config",
            sb.patch.to_str().unwrap(),
        ])
        .args(["--episodes", "1", "--out", "nested"])
        .env("WPCN_OUT_ROOT", &root)
        .env("RUST_LOG", "warn")
        .current_dir(sb.dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(read_metrics(&root.join("nested")).unwrap().len(), 1);
    assert!(!sb.path("nested").exists());
}

#[test]
fn eval_and_export_read_a_trained_run() {
    let sb = Sandbox::new();
    let run = sb.train("run", &["--episodes", "2"]);
    sb.ok(&[
        "eval",
        "--run",
        "run",
        "--episodes",
        "3",
        "--seed",
        "5",
        "--out",
        "eval",
    ]);
    let eval = sb.path("eval");
    let reports: Vec<ReportLine> = read_jsonl(&eval.join(REPORTS)).unwrap();
    assert_eq!(reports.len(), 3);
    let manifest: RunManifest = read_json(&eval.join(MANIFEST)).unwrap();
    assert_eq!(manifest.command, CommandKind::Eval);
    assert!(manifest.source_run.is_some());

    assert!(!sb
        .run(&["eval", "--run", "run", "--out", "run", "--force"])
        .status
        .success());

    let stdout = sb
        .ok(&["export", "--run", "run", "--what", "metrics"])
        .stdout;
    assert_eq!(stdout, bytes(&run.join(METRICS)));
    let copy = sb.path("traj.jsonl");
    sb.ok(&[
        "export",
        "--run",
        "run",
        "--what",
        "trajectory",
        "--output",
        copy.to_str().unwrap(),
    ]);
    assert_eq!(bytes(&copy), bytes(&run.join(TRAJECTORY)));
    assert!(!sb
        .run(&["export", "--run", "missing", "--what", "config"])
        .status
        .success());
}

#[test]
fn phase_division_benchmark_records_its_switch_slot_search() {
    let sb = Sandbox::new();
    let patch = sb.patch.to_str().unwrap();
    sb.ok(&[
        "benchmark",
        "--profile",
        "desk",
        "--config",
        patch,
        "--episodes",
        "1",
        "--scheme",
        "phase_division",
        "--eval-episodes",
        "1",
        "--out",
        "pd",
    ]);
    let pd = sb.path("pd");
    let curve: Vec<TbarPoint> = read_rows(&pd.join(TBAR_SWEEP)).unwrap();
    assert_eq!(curve.iter().map(|p| p.tbar).collect::<Vec<_>>(), [2, 7, 12]);
    let manifest: RunManifest = read_json(&pd.join(MANIFEST)).unwrap();
    assert_eq!(manifest.command, CommandKind::Benchmark);
    assert!(curve.iter().any(|p| Some(p.tbar) == manifest.tbar));
}

#[test]
fn train_rejects_a_switch_slot_for_other_schemes() {
    let sb = Sandbox::new();
    let patch = sb.patch.to_str().unwrap();
    let out = sb.run(&[
        "train",
        "--profile",
        "desk",
        "--config",
        patch,
        "--tbar",
        "4",
        "--out",
        "x",
    ]);
    assert!(!out.status.success());
}

#[test]
fn sweeps_write_rows_for_every_cell() {
    let sb = Sandbox::new();
    let patch = sb.patch.to_str().unwrap();
    sb.ok(&[
        "sweep",
        "dcov",
        "--profile",
        "desk",
        "--config",
        patch,
        "--episodes",
        "1",
        "--d-cov",
        "5,80",
        "--seeds",
        "0,1",
        "--eval-episodes",
        "1",
        "--out",
        "dcov",
    ]);
    let text = fs::read_to_string(sb.path("dcov").join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
    let summary = fs::read_to_string(sb.path("dcov").join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);
}
