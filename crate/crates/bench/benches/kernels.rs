use auxfuse_core::autograd::{Activation, Var};
use auxfuse_core::data::synthetic_scene;
use auxfuse_core::losses::{ssim, SsimParams};
use auxfuse_core::networks::{forward_fuse, instantiate, Auxiliary, FusionConfig, LateralConfig, ModelConfig, NetworkKind, NetworkSpec};
use auxfuse_core::nn::{Conv2d, ConvSpec, Mode, ParamStore};
use auxfuse_core::Tensor;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3_80x64");
    for channels in [16, 64] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let layer = Conv2d::new(&mut store, &mut rng, "c", ConvSpec::new(3, channels, channels, Activation::Relu), true).unwrap();
        let p = store.bind(Mode::Eval);
        let x = Var::constant(Tensor::full([1, channels, 64, 80], 0.5f32));
        group.bench_with_input(BenchmarkId::from_parameter(channels), &channels, |b, _| {
            b.iter(|| layer.forward(&p, black_box(&x)).unwrap())
        });
    }
    group.finish();
}

fn ssim_metric(c: &mut Criterion) {
    let a = synthetic_scene(256, 256, 1).unwrap();
    let b = synthetic_scene(256, 256, 2).unwrap();
    let p = SsimParams::default();
    c.bench_function("ssim_256x256", |bench| bench.iter(|| ssim(black_box(&a), black_box(&b), &p).unwrap()));
}

fn fusion_forward(c: &mut Criterion) {
    let model = ModelConfig { width: 16, laterals: LateralConfig::NONE, ..ModelConfig::default() };
    let net = instantiate(NetworkSpec::new(NetworkKind::FusionMain, model, FusionConfig::default()), 0).unwrap();
    let a = synthetic_scene(80, 64, 3).unwrap();
    let b = synthetic_scene(80, 64, 4).unwrap();
    let aux = Auxiliary::none();
    c.bench_function("fusion_forward_w16_80x64", |bench| {
        bench.iter(|| forward_fuse(&net, &aux, black_box(&a), black_box(&b)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, ssim_metric, fusion_forward
}
criterion_main!(benches);
