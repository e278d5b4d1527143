use auxfuse_core::autograd::{Activation, Var};
use auxfuse_core::data::Image;
use auxfuse_core::fusion::{merge_features, nonlinear_fuse, CriterionKind, FusionCriterion, FusionWeightMaps};
use auxfuse_core::networks::{
    forward_fuse, instantiate, Auxiliary, Checkpoint, FusionConfig, LateralConfig, LateralInput, ModelConfig, Network,
    NetworkKind, NetworkSpec, TaskIndex,
};
use auxfuse_core::networks::forward_with_laterals;
use auxfuse_core::nn::{Conv2d, ConvSpec, Mode, ParamStore};
use auxfuse_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(kind: NetworkKind, width: usize, criterion: CriterionKind) -> NetworkSpec {
    let laterals = LateralConfig { from_subtask1: width == 64, from_subtask2: true };
    let model = ModelConfig { width, laterals, ..ModelConfig::default() };
    NetworkSpec::new(kind, model, FusionConfig { criterion, ..FusionConfig::default() })
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn layer_input(net: &Network<f32>, name: &str) -> usize {
    net.layer_table().into_iter().find(|r| r.name == name).unwrap().input
}

#[test]
fn reference_width_layer_tables() {
    for (criterion, late_in) in [(CriterionKind::Concat, 256), (CriterionKind::Hybrid, 128), (CriterionKind::Sum, 64)] {
        for kind in [NetworkKind::MultifocusSubtask2, NetworkKind::FusionMain] {
            let net = instantiate(spec(kind, 64, criterion), 1).unwrap();
            net.shape_audit().unwrap();
            assert_eq!(layer_input(&net, "c6"), late_in);
            assert_eq!(layer_input(&net, "c7"), late_in);
            assert_eq!(layer_input(&net, "c10"), 256);
            assert_eq!(net.layer_table().len(), 10 + 2 * 9);
        }
    }
    let recon = instantiate(spec(NetworkKind::ReconSubtask1, 64, CriterionKind::Nonlinear), 1).unwrap();
    recon.shape_audit().unwrap();
    let rows = recon.layer_table();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows.iter().find(|r| r.name == "dc1").map(|r| (r.input, r.output)), Some((64, 64)));
    assert_eq!(rows.last().unwrap().output, 1);
}

#[test]
fn reconstruction_lateral_needs_reference_width() {
    let mut s = spec(NetworkKind::FusionMain, 16, CriterionKind::Nonlinear);
    s.model.laterals.from_subtask1 = true;
    assert!(matches!(instantiate(s, 0), Err(Error::InvalidArgument(_))));
}

#[test]
fn equal_seeds_give_equal_weights() {
    let s = spec(NetworkKind::FusionMain, 8, CriterionKind::Nonlinear);
    let a = instantiate(s, 42).unwrap().to_checkpoint();
    let b = instantiate(s, 42).unwrap().to_checkpoint();
    let c = instantiate(s, 43).unwrap().to_checkpoint();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn fuses_reference_and_large_sizes() {
    let net = instantiate(spec(NetworkKind::MultifocusSubtask2, 4, CriterionKind::Nonlinear), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (w, h) in [(80, 64), (1280, 1024)] {
        let a = random_image(&mut rng, w, h);
        let b = random_image(&mut rng, w, h);
        let out = forward_fuse(&net, &Auxiliary::none(), &a, &b).unwrap();
        assert_eq!(out.fused.dims(), (w, h));
        assert!(out.raw.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn identical_sources_fuse_to_themselves() {
    let net = instantiate(spec(NetworkKind::MultifocusSubtask2, 8, CriterionKind::Nonlinear), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_image(&mut rng, 24, 16);
    let out = forward_fuse(&net, &Auxiliary::none(), &a, &a).unwrap();
    assert!(out.fused.max_abs_diff(&a) < 1e-5);
}

#[test]
fn fused_pixels_stay_between_sources() {
    let net = instantiate(spec(NetworkKind::MultifocusSubtask2, 8, CriterionKind::Nonlinear), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let a = random_image(&mut rng, 20, 12);
        let b = random_image(&mut rng, 20, 12);
        let out = forward_fuse(&net, &Auxiliary::none(), &a, &b).unwrap();
        for ((f, x), y) in out.raw.iter().zip(a.pixels()).zip(b.pixels()) {
            assert!(*f >= x.min(*y) - 1e-6 && *f <= x.max(*y) + 1e-6, "{f} outside [{x}, {y}]");
        }
        for s in out.maps.pixel_sums() {
            assert!((s - 1.0).abs() < 1e-4);
        }
    }
}

fn var(img: &Image) -> Var<f64> {
    Var::constant(img.to_tensor())
}

fn values(v: &Var<f64>) -> Vec<f64> {
    v.value().data().to_vec()
}

fn max_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn fixed_criteria_are_weight_map_special_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (w, h) = (12, 10);
    for _ in 0..100 {
        let a = random_image(&mut rng, w, h);
        let b = random_image(&mut rng, w, h);
        let srcs = [&a, &b];

        let pick: Vec<f64> = a.pixels().iter().zip(b.pixels()).map(|(x, y)| if x >= y { 1.0 } else { 0.0 }).collect();
        let other = pick.iter().map(|p| 1.0 - p).collect();
        let maps = FusionWeightMaps::new(w, h, vec![pick, other]).unwrap();
        let merged = merge_features(&var(&a), &var(&b), &FusionCriterion::new(CriterionKind::Maximum)).unwrap();
        assert!(max_diff(&nonlinear_fuse(&srcs, &maps).unwrap().raw, &values(&merged)) < 1e-6);

        let maps = FusionWeightMaps::constant(w, h, &[1.0, 1.0]).unwrap();
        let merged = merge_features(&var(&a), &var(&b), &FusionCriterion::new(CriterionKind::Sum)).unwrap();
        assert!(max_diff(&nonlinear_fuse(&srcs, &maps).unwrap().raw, &values(&merged)) < 1e-6);

        let maps = FusionWeightMaps::constant(w, h, &[0.5, 0.5]).unwrap();
        let avg = FusionCriterion::weighted(CriterionKind::WeightedAverage, 0.5).unwrap();
        let merged = merge_features(&var(&a), &var(&b), &avg).unwrap();
        assert!(max_diff(&nonlinear_fuse(&srcs, &maps).unwrap().raw, &values(&merged)) < 1e-6);
    }
}

#[test]
fn zero_lateral_weights_change_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut own_store = ParamStore::<f32>::new();
    let own = Conv2d::new(&mut own_store, &mut rng, "c4", ConvSpec::new(3, 4, 4, Activation::Relu), true).unwrap();
    let mut lat_store = ParamStore::<f32>::new();
    let lat = Conv2d::new(&mut lat_store, &mut rng, "mf.c4", ConvSpec::new(3, 4, 4, Activation::Relu), true).unwrap();
    let ids: Vec<_> = lat_store.iter().map(|(id, _)| id).collect();
    for id in ids {
        lat_store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let own_p = own_store.bind(Mode::Eval);
    let lat_p = lat_store.bind(Mode::Eval);
    for _ in 0..100 {
        let mut sample = || {
            let data = (0..4 * 6 * 5).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            Var::constant(Tensor::from_vec([1, 4, 6, 5], data).unwrap())
        };
        let x = sample();
        let side = sample();
        let plain = own.forward(&own_p, &x).unwrap();
        let laterals = [LateralInput { source: TaskIndex::MultiFocus, conv: &lat, params: &lat_p, input: side }];
        let with = forward_with_laterals(TaskIndex::Fusion, &own, &own_p, &x, &laterals).unwrap();
        let bits = |v: &Var<f32>| v.value().data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&plain), bits(&with));
    }
}

#[test]
fn laterals_must_come_from_earlier_tasks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f32>::new();
    let conv = Conv2d::new(&mut store, &mut rng, "c", ConvSpec::new(1, 1, 1, Activation::None), false).unwrap();
    let p = store.bind(Mode::Eval);
    let x = Var::constant(Tensor::zeros([1, 1, 2, 2]));
    let laterals = [LateralInput { source: TaskIndex::Fusion, conv: &conv, params: &p, input: x.clone() }];
    assert!(forward_with_laterals(TaskIndex::MultiFocus, &conv, &p, &x, &laterals).is_err());
}

#[test]
fn checkpoint_round_trip_and_rejections() {
    let s = spec(NetworkKind::FusionMain, 8, CriterionKind::Nonlinear);
    let ckpt = instantiate(s, 17).unwrap().to_checkpoint();
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.checksum(), ckpt.checksum());
    let net = Network::from_checkpoint(&back).unwrap();
    assert_eq!(net.spec(), &s);

    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::CorruptCheckpoint(_))));
    assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());

    let sum = FusionCriterion::new(CriterionKind::Sum);
    assert!(matches!(ckpt.ensure_criterion(&sum), Err(Error::CriterionMismatch { .. })));
    ckpt.ensure_criterion(&FusionCriterion::new(CriterionKind::Nonlinear)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("main.ckpt");
    auxfuse_core::networks::save_checkpoint(&ckpt, &path).unwrap();
    assert_eq!(auxfuse_core::networks::load_checkpoint(&path).unwrap(), ckpt);
    assert!(matches!(
        auxfuse_core::networks::load_checkpoint(&dir.path().join("missing.ckpt")),
        Err(Error::MissingFile(_))
    ));
}
