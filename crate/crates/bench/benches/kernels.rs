use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use polypseg_core::dataset::{assemble_batch, synth_dataset, SynthConfig};
use polypseg_core::network::{mini_fcn, MiniConfig, Network, Variant};
use polypseg_core::sfs::{lax_friedrichs_solve, render_lambertian, AlbedoSource, CameraModel, SfsConfig, SyntheticSurface};
use polypseg_core::tensor::{conv2d_backward, conv2d_forward, conv2d_transpose, softmax_xent, BnMode, LossNorm, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn conv(c: &mut Criterion) {
    let x = random(Shape::new(4, 16, 64, 64), 1);
    let k = random(Shape::new(32, 16, 3, 3), 2);
    c.bench_function("conv2d_forward 4x16x64x64 -> 32", |b| {
        b.iter(|| conv2d_forward(black_box(&x), black_box(&k), None, 1, 1).unwrap())
    });
    let g = random(Shape::new(4, 32, 64, 64), 3);
    c.bench_function("conv2d_backward 4x16x64x64 -> 32", |b| {
        b.iter(|| conv2d_backward(black_box(&x), black_box(&k), black_box(&g), 1, 1).unwrap())
    });
    let s = random(Shape::new(4, 2, 16, 16), 4);
    let up = random(Shape::new(2, 2, 16, 16), 5);
    c.bench_function("conv2d_transpose x8 16x16 -> 136x136", |b| {
        b.iter(|| conv2d_transpose(black_box(&s), black_box(&up), 8).unwrap())
    });
}

fn sfs(c: &mut Criterion) {
    let cam = CameraModel::centered(64, 64, 64.0, [0.0; 3]).unwrap();
    let surface = SyntheticSurface::Hemisphere {
        base: 2.0,
        height: 0.6,
        radius: 1.0,
    };
    let image = render_lambertian(&surface.sample(64, 64, &cam), &cam, 1.0).unwrap();
    let cfg = SfsConfig {
        albedo: AlbedoSource::Fixed { value: 1.0 },
        ..Default::default()
    };
    c.bench_function("lax_friedrichs_solve hemisphere 64x64", |b| {
        b.iter(|| lax_friedrichs_solve(black_box(&image), &cam, &cfg).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let data = synth_dataset(&SynthConfig {
        count: 4,
        ..Default::default()
    })
    .unwrap();
    let (x, labels) = assemble_batch(&data, false).unwrap();
    let cfg = MiniConfig {
        downsample: 4,
        ..Default::default()
    };
    let mut net = Network::new(mini_fcn(&cfg, Variant::Bn).unwrap(), 0).unwrap();
    c.bench_function("mini fcn forward+backward batch 4 64x64", |b| {
        b.iter(|| {
            let trace = net.forward(black_box(&x), BnMode::Train).unwrap();
            let (_, g) = softmax_xent(trace.output(), &labels, LossNorm::Mean).unwrap();
            net.backward(&trace, &g).unwrap()
        })
    });
}

criterion_group!(benches, conv, sfs, train_step);
criterion_main!(benches);
