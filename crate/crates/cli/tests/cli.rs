use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use auxfuse_core::data::{load_grayscale, DatasetManifest};
use auxfuse_core::losses::SsimParams;
use auxfuse_core::metrics::{evaluate_pair, MetricReport, METRIC_COLUMNS};

fn auxfuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auxfuse"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = auxfuse(args, cwd);
    assert!(
        out.status.success(),
        "auxfuse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_CONFIG: &str = r#"
[model]
width = 8
[model.laterals]
from_subtask1 = false
[train]
seed = 5
out_dir = "runs"
[train.subtask1]
manifests = [{ path = "data/recon.tsv" }]
batch_size = 2
max_steps = 2
patch_width = 32
patch_height = 32
[train.subtask2]
manifests = [{ path = "data/mf.tsv" }]
batch_size = 2
max_steps = 2
patch_width = 40
patch_height = 32
[train.main]
manifests = [{ path = "data/cvs.tsv" }]
batch_size = 2
max_steps = 3
patch_width = 40
patch_height = 32
"#;

/// Scenes, manifests for all three stages and the tiny config.
fn prepare(dir: &Path, config: &str, width: usize, height: usize, count: usize) {
    let (w, h, n) = (width.to_string(), height.to_string(), count.to_string());
    ok(&["make-scenes", "--out", "scenes", "--count", &n, "--width", &w, "--height", &h, "--seed", "11"], dir);
    for (kind, name) in [("cvs-synth", "cvs"), ("recon", "recon"), ("multifocus", "mf")] {
        let out = format!("data/{name}.tsv");
        ok(&["prepare-data", "--input", "scenes", "--out", &out, "--kind", kind, "--seed", "2"], dir);
    }
    fs::write(dir.join("run.toml"), config).unwrap();
}

/// A directory with all three stages trained on the tiny config.
fn trained() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = fresh_dir("trained");
        prepare(&dir, TINY_CONFIG, 40, 32, 4);
        for stage in ["subtask1", "subtask2", "main"] {
            ok(&["train", "--stage", stage, "--config", "run.toml"], &dir);
        }
        dir
    })
}

#[test]
fn prepare_data_is_deterministic_and_counts_records() {
    let dir = fresh_dir("prepare");
    ok(&["make-scenes", "--out", "scenes", "--count", "10", "--seed", "1"], &dir);
    for out in ["one/cvs.tsv", "two/cvs.tsv"] {
        ok(&["prepare-data", "--input", "scenes", "--out", out, "--kind", "cvs-synth", "--seed", "9"], &dir);
    }
    let one = DatasetManifest::load(&dir.join("one/cvs.tsv")).unwrap();
    let two = DatasetManifest::load(&dir.join("two/cvs.tsv")).unwrap();
    assert_eq!(one.len(), 10);
    assert_eq!(one.records, two.records);
    for r in &one.records {
        assert_eq!(fs::read(one.root.join(&r.a)).unwrap(), fs::read(two.root.join(&r.a)).unwrap());
        assert_eq!(fs::read(one.root.join(&r.b)).unwrap(), fs::read(two.root.join(&r.b)).unwrap());
    }
    for f in ["cvs_provenance.txt", "cvs_config.toml", "cvs_resolved.toml"] {
        assert!(dir.join("one").join(f).is_file(), "{f} missing");
    }
}

#[test]
fn recon_pairs_are_degraded_and_multifocus_has_ground_truth() {
    let dir = fresh_dir("kinds");
    ok(&["make-scenes", "--out", "scenes", "--count", "2", "--seed", "4"], &dir);
    ok(&["prepare-data", "--input", "scenes", "--out", "r.tsv", "--kind", "recon", "--seed", "1"], &dir);
    ok(&["prepare-data", "--input", "scenes", "--out", "m.tsv", "--kind", "multifocus", "--seed", "1"], &dir);
    let recon = DatasetManifest::load(&dir.join("r.tsv")).unwrap();
    for p in recon.load_pairs().unwrap() {
        assert!(p.a.max_abs_diff(&p.b) > 0.0);
    }
    let mf = DatasetManifest::load(&dir.join("m.tsv")).unwrap();
    assert!(mf.records.iter().all(|r| r.gt.is_some()));
}

#[test]
fn empty_input_is_a_data_error() {
    let dir = fresh_dir("empty");
    fs::create_dir_all(dir.join("nothing")).unwrap();
    let out = auxfuse(&["prepare-data", "--input", "nothing", "--out", "x.tsv", "--kind", "recon"], &dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.join("x.tsv").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = fresh_dir("usage");
    assert_eq!(auxfuse(&["frobnicate"], &dir).status.code(), Some(1));
    assert_eq!(auxfuse(&["train", "--stage", "nope", "--config", "x"], &dir).status.code(), Some(1));
    fs::write(dir.join("bad.toml"), "[model]\nwidht = 3\n").unwrap();
    assert_eq!(auxfuse(&["train", "--stage", "subtask1", "--config", "bad.toml"], &dir).status.code(), Some(1));
    assert_eq!(auxfuse(&["--help"], &dir).status.code(), Some(0));
}

#[test]
fn thread_cap_must_be_positive() {
    let dir = fresh_dir("threads");
    let out = Command::new(env!("CARGO_BIN_EXE_auxfuse"))
        .args(["describe", "--kind", "recon_subtask1"])
        .env("AUXFUSE_THREADS", "0")
        .current_dir(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_auxfuse"))
        .args(["describe", "--kind", "recon_subtask1"])
        .env("AUXFUSE_THREADS", "1")
        .current_dir(&dir)
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn main_stage_names_missing_prerequisite() {
    let dir = fresh_dir("prereq");
    prepare(&dir, TINY_CONFIG, 40, 32, 2);
    let out = auxfuse(&["train", "--stage", "main", "--config", "run.toml"], &dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("subtask1"));
    assert!(!dir.join("runs/main_provenance.txt").exists());

    ok(&["train", "--stage", "subtask1", "--config", "run.toml"], &dir);
    let out = auxfuse(&["train", "--stage", "main", "--config", "run.toml"], &dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("subtask2"));
}

#[test]
fn training_writes_log_rows_per_step_and_provenance() {
    let dir = trained();
    for (stage, steps) in [("subtask1", 2), ("subtask2", 2), ("main", 3)] {
        let log = fs::read_to_string(dir.join(format!("runs/{stage}_log.csv"))).unwrap();
        assert_eq!(log.lines().count(), steps + 1, "{stage}");
        assert!(dir.join(format!("runs/{stage}.ckpt")).is_file());
        assert_eq!(fs::read_to_string(dir.join(format!("runs/{stage}_config.toml"))).unwrap(), TINY_CONFIG);
        let prov = fs::read_to_string(dir.join(format!("runs/{stage}_provenance.txt"))).unwrap();
        assert!(prov.contains("seed=5") && prov.contains("core_version="));
    }
}

#[test]
fn resume_with_other_criterion_is_rejected() {
    let dir = trained();
    let cfg = TINY_CONFIG.replace("[model]\n", "[fusion]\ncriterion = \"maximum\"\n[model]\n");
    fs::write(dir.join("maximum.toml"), cfg).unwrap();
    let out = auxfuse(
        &[
            "train", "--stage", "main", "--config", "maximum.toml", "--resume", "runs/main.ckpt", "--out", "resumed",
            "--subtask1", "runs/subtask1.ckpt", "--subtask2", "runs/subtask2.ckpt",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("criterion"));
}

#[test]
fn fuse_keeps_size_and_is_repeatable() {
    let dir = trained();
    let a = "data/cvs_images/a/0001.png";
    let b = "data/cvs_images/b/0001.png";
    ok(&["fuse", "--ckpt", "runs/main.ckpt", "--a", a, "--b", b, "--out", "fuse/one.png", "--dump-weights", "fuse/w"], dir);
    ok(&["fuse", "--ckpt", "runs/main.ckpt", "--a", a, "--b", b, "--out", "fuse/two.png"], dir);
    let one = fs::read(dir.join("fuse/one.png")).unwrap();
    assert_eq!(one, fs::read(dir.join("fuse/two.png")).unwrap());
    let fused = load_grayscale(&dir.join("fuse/one.png")).unwrap();
    assert_eq!(fused.dims(), load_grayscale(&dir.join(a)).unwrap().dims());
    let w1 = load_grayscale(&dir.join("fuse/w/w1.png")).unwrap();
    let w2 = load_grayscale(&dir.join("fuse/w/w2.png")).unwrap();
    for (x, y) in w1.pixels().iter().zip(w2.pixels()) {
        // Each map is quantized to 1/255 separately.
        assert!((x + y - 1.0).abs() <= 2.0 / 255.0 + 1e-9);
    }
}

#[test]
fn fuse_identical_sources_returns_the_source() {
    let dir = trained();
    let a = "data/cvs_images/a/0002.png";
    ok(&["fuse", "--ckpt", "runs/main.ckpt", "--a", a, "--b", a, "--out", "fuse/same.png"], dir);
    let src = load_grayscale(&dir.join(a)).unwrap();
    let out = load_grayscale(&dir.join("fuse/same.png")).unwrap();
    assert!(src.max_abs_diff(&out) <= 1.0 / 255.0 + 1e-12);
}

#[test]
fn fuse_rejects_size_mismatch_and_other_criterion() {
    let dir = trained();
    ok(&["make-scenes", "--out", "odd", "--count", "1", "--width", "48", "--height", "32"], dir);
    let a = "data/cvs_images/a/0000.png";
    let out = auxfuse(&["fuse", "--ckpt", "runs/main.ckpt", "--a", a, "--b", "odd/scene_0000.png", "--out", "x.png"], dir);
    assert_eq!(out.status.code(), Some(2));
    let b = "data/cvs_images/b/0000.png";
    let args = ["fuse", "--ckpt", "runs/main.ckpt", "--a", a, "--b", b, "--out", "x.png", "--criterion"];
    let out = auxfuse(&[&args[..], &["sum"]].concat(), dir);
    assert_eq!(out.status.code(), Some(2));
    ok(&[&args[..], &["nonlinear"]].concat(), dir);
    let out = auxfuse(&["fuse", "--ckpt", "runs/subtask1.ckpt", "--a", a, "--b", b, "--out", "x.png"], dir);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_report_matches_metric_recomputation() {
    let dir = trained();
    ok(
        &[
            "evaluate", "--manifest", "data/cvs.tsv", "--ckpt", "runs/main.ckpt", "--out", "eval/report.csv", "--plots",
            "eval/plots", "--fused-dir", "eval/fused",
        ],
        dir,
    );
    let text = fs::read_to_string(dir.join("eval/report.csv")).unwrap();
    assert_eq!(text.lines().count(), 4 + 1);
    let plots = fs::read_dir(dir.join("eval/plots")).unwrap().count();
    assert_eq!(plots, METRIC_COLUMNS.len());

    // Oracle: recompute from the saved fused images. These are quantized,
    // so agreement is loose for PSNR and tight for nothing else.
    let report = MetricReport::from_csv(&text).unwrap();
    let manifest = DatasetManifest::load(&dir.join("data/cvs.tsv")).unwrap();
    let pairs = manifest.load_pairs().unwrap();
    for (row, pair) in report.rows.iter().zip(&pairs) {
        let fused = load_grayscale(&dir.join(format!("eval/fused/{}.png", row.pair))).unwrap();
        let again = evaluate_pair(&fused, &pair.a, &pair.b, &SsimParams::default()).unwrap();
        assert!((row.ssim_a - again.ssim_a).abs() < 1e-2);
        assert!((row.entropy - again.entropy).abs() < 0.1);
    }
    let means = report.means();
    let summary = fs::read_to_string(dir.join("eval/report_summary.csv")).unwrap();
    let line: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    for (i, m) in means.iter().enumerate() {
        let v: f64 = line[3 + i].parse().unwrap();
        assert!((v - m).abs() <= 1e-12 * m.abs().max(1.0));
    }
}

#[test]
fn ablate_criteria_emits_four_checkpoints_and_one_comparison() {
    let dir = trained();
    ok(&["ablate", "--mode", "criteria", "--config", "run.toml", "--out", "ablate_criteria"], dir);
    let out = dir.join("ablate_criteria");
    for label in ["nonlinear", "maximum", "sum", "weighted_average"] {
        assert!(out.join(label).join("main.ckpt").is_file(), "{label}");
    }
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().next().unwrap().starts_with("method,dataset,pairs,ag,entropy"));
    assert!(!out.join("subtasks").exists(), "existing subtask checkpoints should be reused");
}

#[test]
fn ablate_tasks_emits_four_rows() {
    let dir = fresh_dir("ablate_tasks");
    let config = TINY_CONFIG
        .replace("width = 8\n[model.laterals]\nfrom_subtask1 = false\n", "width = 64\n")
        .replace("max_steps = 2", "max_steps = 1")
        .replace("max_steps = 3", "max_steps = 1")
        .replace("patch_width = 40", "patch_width = 32");
    prepare(&dir, &config, 32, 32, 2);
    ok(&["ablate", "--mode", "tasks", "--config", "run.toml", "--out", "ablation"], &dir);
    let csv = fs::read_to_string(dir.join("ablation/comparison.csv")).unwrap();
    let methods: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["main_only", "main_subtask1", "main_subtask2", "full"]);
    assert!(dir.join("ablation/subtasks/subtask1.ckpt").is_file());
}
