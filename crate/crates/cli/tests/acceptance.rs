//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Exits 0 even when a criterion fails so the workspace test run stays
//! usable; set `AUXFUSE_ACCEPTANCE_STRICT=1` to exit 1 on any failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use auxfuse_core::autograd::{Activation, Var};
use auxfuse_core::config::RunConfig;
use auxfuse_core::data::{
    synthesize_cross_modal_pair, synthesize_multifocus_pair, synthesize_recon_pair, synthetic_scene, DegradationSpec,
    Image, ImagePair,
};
use auxfuse_core::fusion::{merge_features, nonlinear_fuse, CriterionKind, FusionCriterion, FusionWeightMaps};
use auxfuse_core::gradcheck::{standard_suite, GradCheckOptions};
use auxfuse_core::losses::{psnr_db, ssim, SsimParams};
use auxfuse_core::metrics::{average_gradient, entropy, mos_aggregate, vif};
use auxfuse_core::networks::{
    forward_fuse, forward_with_laterals, instantiate, Auxiliary, Checkpoint, FusionConfig, LateralConfig, LateralInput,
    ModelConfig, Network, NetworkKind, NetworkSpec, Stage, TaskIndex,
};
use auxfuse_core::nn::{Conv2d, ConvSpec, Mode, ParamStore};
use auxfuse_core::training::{train_stage_on, DataSource, Priors, StageConfig, StageRunner, TrainOptions};
use auxfuse_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DESK: &str = include_str!("../../../configs/desk.toml");

type Check = Result<String, String>;

fn desk() -> RunConfig {
    RunConfig::parse(DESK).expect("desk preset parses")
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn shape_audit() -> Check {
    let mut audited = 0;
    for (criterion, late_in) in [(CriterionKind::Concat, 256), (CriterionKind::Hybrid, 128), (CriterionKind::Sum, 64)] {
        for kind in [NetworkKind::ReconSubtask1, NetworkKind::MultifocusSubtask2, NetworkKind::FusionMain] {
            let spec = NetworkSpec::new(kind, ModelConfig::default(), FusionConfig { criterion, ..FusionConfig::default() });
            let net = instantiate(spec, 0).map_err(fail)?;
            net.shape_audit().map_err(fail)?;
            if kind != NetworkKind::ReconSubtask1 {
                for name in ["c6", "c7"] {
                    let row = net.layer_table().into_iter().find(|r| r.name == name).ok_or("missing c6/c7")?;
                    if row.input != late_in {
                        return Err(format!("{kind} {criterion:?}: {name} input {} != {late_in}", row.input));
                    }
                }
            }
            audited += 1;
        }
    }
    Ok(format!("{audited} networks audited, c6/c7 inputs 256/128/64"))
}

fn gradient_suite() -> Check {
    let opts = GradCheckOptions::default();
    let mut worst: f64 = 0.0;
    let suite = standard_suite();
    let mut min_instances = u64::MAX;
    for entry in &suite {
        let out = entry.run(&opts)?;
        worst = worst.max(out.worst_error);
        min_instances = min_instances.min(out.instances);
    }
    if min_instances < 20 {
        return Err(format!("only {min_instances} instances"));
    }
    Ok(format!("{} entries x {min_instances} instances, worst relative error {worst:.2e}", suite.len()))
}

fn criterion_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (16, 12);
    let as_var = |img: &Image| Var::<f64>::constant(img.to_tensor());
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = random_image(&mut rng, w, h);
        let b = random_image(&mut rng, w, h);
        let pick: Vec<f64> = a.pixels().iter().zip(b.pixels()).map(|(x, y)| f64::from(u8::from(x >= y))).collect();
        let rest = pick.iter().map(|p| 1.0 - p).collect();
        let cases = [
            (FusionWeightMaps::new(w, h, vec![pick, rest]).map_err(fail)?, FusionCriterion::new(CriterionKind::Maximum)),
            (FusionWeightMaps::constant(w, h, &[1.0, 1.0]).map_err(fail)?, FusionCriterion::new(CriterionKind::Sum)),
            (
                FusionWeightMaps::constant(w, h, &[0.5, 0.5]).map_err(fail)?,
                FusionCriterion::weighted(CriterionKind::WeightedAverage, 0.5).map_err(fail)?,
            ),
        ];
        for (maps, criterion) in cases {
            let fused = nonlinear_fuse(&[&a, &b], &maps).map_err(fail)?;
            let merged = merge_features(&as_var(&a), &as_var(&b), &criterion).map_err(fail)?;
            for (x, y) in fused.raw.iter().zip(merged.value().data()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    if worst < 1e-6 {
        Ok(format!("100 pairs, max abs diff {worst:.1e}"))
    } else {
        Err(format!("max abs diff {worst:.3e}"))
    }
}

/// Direct evaluation of the windowed SSIM formula.
fn ssim_oracle(x: &Image, y: &Image, p: &SsimParams) -> f64 {
    let (k, r) = (p.window, p.window / 2);
    let g: Vec<f64> = (0..k).map(|i| (-((i as f64 - r as f64).powi(2)) / (2.0 * p.sigma * p.sigma)).exp()).collect();
    let norm = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = ((p.k1).powi(2), (p.k2).powi(2));
    let (w, h) = x.dims();
    let mut total = 0.0;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let mut m = [0.0; 5];
            for j in 0..k {
                for i in 0..k {
                    let wt = g[i] * g[j] / norm;
                    let (a, b) = (x.get(ox + i, oy + j), y.get(ox + i, oy + j));
                    for (acc, v) in m.iter_mut().zip([a, b, a * a, b * b, a * b]) {
                        *acc += wt * v;
                    }
                }
            }
            let [mx, my, sxx, syy, sxy] = m;
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    total / ((w - k + 1) * (h - k + 1)) as f64
}

fn ssim_against_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = SsimParams::default();
    let (mut oracle_err, mut self_err, mut sym_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let x = random_image(&mut rng, 16, 16);
        let y = random_image(&mut rng, 16, 16);
        let s = ssim(&x, &y, &p).map_err(fail)?;
        oracle_err = oracle_err.max((s - ssim_oracle(&x, &y, &p)).abs());
        self_err = self_err.max((ssim(&x, &x, &p).map_err(fail)? - 1.0).abs());
        sym_err = sym_err.max((s - ssim(&y, &x, &p).map_err(fail)?).abs());
    }
    let detail = format!("oracle {oracle_err:.1e}, self {self_err:.1e}, symmetry {sym_err:.1e}");
    if oracle_err < 1e-6 && self_err < 1e-12 && sym_err < 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn zero_laterals() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = ConvSpec::new(3, 8, 8, Activation::Relu);
    let mut own_store = ParamStore::<f32>::new();
    let own = Conv2d::new(&mut own_store, &mut rng, "c4", spec, true).map_err(fail)?;
    let mut lat_store = ParamStore::<f32>::new();
    let lat = Conv2d::new(&mut lat_store, &mut rng, "mf.c4", spec, true).map_err(fail)?;
    let ids: Vec<_> = lat_store.iter().map(|(id, _)| id).collect();
    for id in ids {
        lat_store.tensor_mut(id).data_mut().fill(0.0);
    }
    let (own_p, lat_p) = (own_store.bind(Mode::Eval), lat_store.bind(Mode::Eval));
    for i in 0..100 {
        let mut sample = || {
            let data = (0..8 * 8 * 8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            Var::constant(Tensor::from_vec([1, 8, 8, 8], data).expect("shape"))
        };
        let (x, side) = (sample(), sample());
        let plain = own.forward(&own_p, &x).map_err(fail)?;
        let lats = [LateralInput { source: TaskIndex::MultiFocus, conv: &lat, params: &lat_p, input: side }];
        let with = forward_with_laterals(TaskIndex::Fusion, &own, &own_p, &x, &lats).map_err(fail)?;
        let bits = |v: &Var<f32>| v.value().data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        if bits(&plain) != bits(&with) {
            return Err(format!("input {i} differs"));
        }
    }
    Ok("100 inputs bit-identical".into())
}

fn metric_invariants() -> Check {
    let flat = Image::constant(32, 32, 0.6).map_err(fail)?;
    let card = Image::from_fn(16, 16, |x, y| (y * 16 + x) as f64 / 255.0).map_err(fail)?;
    let scene = synthetic_scene(64, 48, 1).map_err(fail)?;
    let ag = average_gradient(&flat).map_err(fail)?;
    let h0 = entropy(&flat, 256).map_err(fail)?;
    let h8 = entropy(&card, 256).map_err(fail)?;
    let v = vif(&scene, &scene).map_err(fail)?;
    let mos = mos_aggregate(&[1.0, 2.0, 3.0, 4.0, 10.0]).map_err(fail)?;
    let detail = format!("AG {ag}, H(const) {h0}, H(card) {h8}, VIF {v:.9}, MOS {mos}");
    if ag == 0.0 && h0 == 0.0 && (h8 - 8.0).abs() < 1e-6 && (v - 1.0).abs() < 1e-6 && mos == 3.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Frozen subtask networks plus the main network trained on the desk preset.
struct DeskRun {
    priors: Priors,
    main: Checkpoint,
    cvs: Vec<ImagePair>,
}

fn scenes(n: u64, w: usize, h: usize) -> Vec<Image> {
    (0..n).map(|i| synthetic_scene(w, h, 100 + i).expect("scene")).collect()
}

fn desk_run() -> Result<(DeskRun, String), String> {
    let cfg = desk();
    let base = scenes(10, 80, 64);
    let degrade = DegradationSpec::default();
    let recon: Vec<_> =
        base.iter().enumerate().map(|(i, s)| synthesize_recon_pair(s, &degrade.with_seed(i as u64))).collect::<Result<_, _>>().map_err(fail)?;
    let mf: Vec<_> = base.iter().enumerate().map(|(i, s)| synthesize_multifocus_pair(s, i as u64)).collect::<Result<_, _>>().map_err(fail)?;
    let cvs: Vec<_> = base.iter().enumerate().map(|(i, s)| synthesize_cross_modal_pair(s, i as u64)).collect::<Result<_, _>>().map_err(fail)?;

    let none = Priors::default();
    let opts = TrainOptions::default();
    let sub1 = train_stage_on(&cfg.stage_config(Stage::Subtask1), &[DataSource::new(recon)], &none, &opts).map_err(fail)?;
    let with_sub1 = Priors::new(Some(sub1.checkpoint.clone()), None).map_err(fail)?;
    let sub2 = train_stage_on(&cfg.stage_config(Stage::Subtask2), &[DataSource::new(mf)], &with_sub1, &opts).map_err(fail)?;

    let before = [sub1.checkpoint.checksum(), sub2.checkpoint.checksum()];
    let priors = Priors::new(Some(sub1.checkpoint), Some(sub2.checkpoint)).map_err(fail)?;
    let main_cfg = cfg.stage_config(Stage::Main);
    let main = train_stage_on(&main_cfg, &[DataSource::new(cvs.clone())], &priors, &opts).map_err(fail)?;
    let after = [
        priors.subtask1.as_ref().ok_or("subtask1 missing")?.checkpoint().checksum(),
        priors.subtask2.as_ref().ok_or("subtask2 missing")?.checkpoint().checksum(),
    ];
    if before != after {
        return Err(format!("checksums changed: {before:?} -> {after:?}"));
    }
    let detail = format!("{} main steps, subtask checksums {}.. and {}.. unchanged", main.log.rows.len(), &after[0][..12], &after[1][..12]);
    Ok((DeskRun { priors, main: main.checkpoint, cvs }, detail))
}

fn reduction(cfg: &StageConfig, pairs: Vec<ImagePair>, priors: &Priors) -> Result<(f64, f64), String> {
    let runner = StageRunner::new(cfg, priors).map_err(fail)?;
    let initial = instantiate(cfg.network_spec(), cfg.seed).map_err(fail)?;
    let before = runner.dataset_loss(&initial, &pairs).map_err(fail)?;
    let out = train_stage_on(cfg, &[DataSource::new(pairs.clone())], priors, &TrainOptions::default()).map_err(fail)?;
    let trained = Network::from_checkpoint(&out.checkpoint).map_err(fail)?;
    let after = runner.dataset_loss(&trained, &pairs).map_err(fail)?;
    Ok((before, after))
}

fn overfit(priors: &Priors) -> Check {
    let base = desk().stage_config(Stage::Main);
    let pair = synthesize_cross_modal_pair(&synthetic_scene(80, 64, 7).map_err(fail)?, 7).map_err(fail)?;
    let single = StageConfig { batch_size: 1, epochs: 200, max_steps: Some(200), patch_width: 80, patch_height: 64, ..base.clone() };
    let (b1, a1) = reduction(&single, vec![pair], priors)?;

    let smoke: Vec<_> = scenes(8, 80, 64)
        .iter()
        .enumerate()
        .map(|(i, s)| synthesize_cross_modal_pair(s, 50 + i as u64))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let eight = StageConfig { batch_size: 8, epochs: 50, max_steps: Some(50), patch_width: 80, patch_height: 64, ..base };
    let (b8, a8) = reduction(&eight, smoke, priors)?;

    let (r1, r8) = (1.0 - a1 / b1, 1.0 - a8 / b8);
    let detail = format!(
        "single pair Lf {b1:.4} -> {a1:.4} ({:.1}%, need 80%), 8 pairs {b8:.4} -> {a8:.4} ({:.1}%, need 50%)",
        100.0 * r1,
        100.0 * r8
    );
    if r1 >= 0.8 && r8 >= 0.5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean_psnr(pairs: &[(Image, &Image)]) -> f64 {
    pairs
        .iter()
        .map(|(x, y)| {
            let mse = x.pixels().iter().zip(y.pixels()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.pixels().len() as f64;
            psnr_db(mse)
        })
        .sum::<f64>()
        / pairs.len() as f64
}

fn reconstruction() -> Check {
    let degrade = DegradationSpec::default();
    let pairs: Vec<ImagePair> = (0..100)
        .map(|i| synthesize_recon_pair(&synthetic_scene(64, 64, 1000 + i).expect("scene"), &degrade.with_seed(i)))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let base = desk().stage_config(Stage::Subtask1);
    let cfg = StageConfig { batch_size: 4, epochs: 20, max_steps: Some(500), learning_rate: 1e-3, ..base };
    let out = train_stage_on(&cfg, &[DataSource::new(pairs.clone())], &Priors::default(), &TrainOptions::default())
        .map_err(fail)?;
    let net = Network::from_checkpoint(&out.checkpoint).map_err(fail)?;
    let recon = net.as_recon().map_err(fail)?;
    let p = net.params.bind(Mode::Eval);
    let mut restored = Vec::new();
    for pair in &pairs {
        let y = recon.forward(&p, &Var::constant(pair.a.to_tensor::<f32>())).map_err(fail)?;
        let px = y.value().data().iter().map(|&v| f64::from(v)).collect();
        restored.push((Image::from_clipped(64, 64, px).map_err(fail)?, &pair.b));
    }
    let identity: Vec<_> = pairs.iter().map(|p| (p.a.clone(), &p.b)).collect();
    let (net_db, id_db) = (mean_psnr(&restored), mean_psnr(&identity));
    let detail = format!("{} steps: {net_db:.2} dB vs identity {id_db:.2} dB (gain {:.2} dB)", out.log.rows.len(), net_db - id_db);
    if net_db - id_db >= 3.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pixel_bounds(run: &DeskRun) -> Check {
    let net = Network::from_checkpoint(&run.main).map_err(fail)?;
    let recon = run.priors.subtask1.as_ref().map(|f| f.network()).transpose().map_err(fail)?;
    let mf = run.priors.subtask2.as_ref().map(|f| f.network()).transpose().map_err(fail)?;
    let laterals: LateralConfig = net.spec().model.laterals;
    let aux = Auxiliary::from_networks(laterals, recon.as_ref(), mf.as_ref()).map_err(fail)?;
    let mut worst: f64 = 0.0;
    let mut pixels = 0;
    for pair in &run.cvs {
        let out = forward_fuse(&net, &aux, &pair.a, &pair.b).map_err(fail)?;
        for ((f, a), b) in out.raw.iter().zip(pair.a.pixels()).zip(pair.b.pixels()) {
            worst = worst.max(a.min(*b) - f).max(f - a.max(*b));
            pixels += 1;
        }
    }
    // The network runs in f32.
    if worst <= 1e-6 {
        Ok(format!("{pixels} pixels, worst excursion {worst:.1e}"))
    } else {
        Err(format!("worst excursion {worst:.3e}"))
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_auxfuse"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(fail)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("auxfuse {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn pipeline(dir: &Path) -> Result<(), String> {
    let _ = fs::remove_dir_all(dir);
    fs::create_dir_all(dir).map_err(fail)?;
    fs::write(dir.join("desk.toml"), DESK).map_err(fail)?;
    run_cli(dir, &["make-scenes", "--out", "scenes", "--count", "10", "--seed", "3"])?;
    for (kind, name) in [("recon", "recon"), ("multifocus", "multifocus"), ("cvs-synth", "cvs")] {
        run_cli(dir, &["prepare-data", "--input", "scenes", "--out", &format!("data/{name}.tsv"), "--kind", kind, "--seed", "1"])?;
    }
    for stage in ["subtask1", "subtask2", "main"] {
        run_cli(dir, &["train", "--stage", stage, "--config", "desk.toml"])?;
    }
    let (a, b) = ("data/cvs_images/a/0000.png", "data/cvs_images/b/0000.png");
    run_cli(dir, &["fuse", "--ckpt", "runs/desk/main.ckpt", "--a", a, "--b", b, "--out", "fused/0000.png"])?;
    run_cli(
        dir,
        &["evaluate", "--manifest", "data/cvs.tsv", "--ckpt", "runs/desk/main.ckpt", "--out", "eval/report.csv", "--config", "desk.toml"],
    )
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn end_to_end() -> Check {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let (one, two) = (root.join("run1"), root.join("run2"));
    pipeline(&one)?;
    pipeline(&two)?;
    let (f1, f2) = (files(&one), files(&two));
    if f1 != f2 {
        return Err(format!("file sets differ: {} vs {} files", f1.len(), f2.len()));
    }
    for f in &f1 {
        if fs::read(one.join(f)).map_err(fail)? != fs::read(two.join(f)).map_err(fail)? {
            return Err(format!("{} differs", f.display()));
        }
    }
    let count = |ext: &str| f1.iter().filter(|p| p.extension().is_some_and(|e| e == ext)).count();
    Ok(format!("{} files identical ({} checkpoints, {} csv, {} png)", f1.len(), count("ckpt"), count("csv"), count("png")))
}

fn report(n: usize, title: &str, started: Instant, result: Check, failures: &mut Vec<usize>) {
    let secs = started.elapsed().as_secs_f64();
    match result {
        Ok(detail) => println!("criterion {n:>2} PASS  {title}: {detail} [{secs:.1}s]"),
        Err(detail) => {
            println!("criterion {n:>2} FAIL  {title}: {detail} [{secs:.1}s]");
            failures.push(n);
        }
    }
}

fn main() {
    let mut failures = Vec::new();
    let t = Instant::now();
    report(1, "shape audit", t, shape_audit(), &mut failures);
    let t = Instant::now();
    report(2, "gradient suite", t, gradient_suite(), &mut failures);
    let t = Instant::now();
    report(3, "criterion equivalence", t, criterion_equivalence(), &mut failures);
    let t = Instant::now();
    report(4, "ssim oracle", t, ssim_against_oracle(), &mut failures);
    let t = Instant::now();
    report(5, "zero laterals", t, zero_laterals(), &mut failures);

    let t = Instant::now();
    let desk = desk_run();
    let run = desk.as_ref().ok().map(|(r, _)| r);
    report(6, "freeze contract", t, desk.as_ref().map(|(_, d)| d.clone()).map_err(Clone::clone), &mut failures);
    let t = Instant::now();
    let result = run.ok_or_else(|| "desk run failed".to_string()).and_then(|r| overfit(&r.priors));
    report(7, "overfit sanity", t, result, &mut failures);
    let t = Instant::now();
    report(8, "reconstruction sanity", t, reconstruction(), &mut failures);
    let t = Instant::now();
    report(9, "metric invariants", t, metric_invariants(), &mut failures);
    let t = Instant::now();
    report(10, "end-to-end determinism", t, end_to_end(), &mut failures);
    let t = Instant::now();
    let result = run.ok_or_else(|| "desk run failed".to_string()).and_then(pixel_bounds);
    report(11, "per-pixel bounds", t, result, &mut failures);

    println!("{} of 11 criteria passed; failed: {failures:?}", 11 - failures.len());
    if !failures.is_empty() && std::env::var("AUXFUSE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
