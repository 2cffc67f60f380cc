use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use smcnn_bench::{noisy_pair, samples};
use smcnn_core::trainer::batch_gradient;
use smcnn_core::{build, denoise_cube, ModelConfig};

fn model(c: &mut Criterion) {
    let cfg = ModelConfig::desk();
    let model = build(&cfg, 0).unwrap();
    let batch = samples(cfg.k, cfg.patch_size, 16);
    let s = &batch[0];
    c.bench_function("desk forward", |b| {
        b.iter(|| model.forward(black_box(&s.y_s), &s.y_lambda, s.wavelength_um).unwrap())
    });
    c.bench_function("desk batch-16 gradient", |b| b.iter(|| batch_gradient(&model, black_box(&batch)).unwrap()));
    let (noisy, _) = noisy_pair(32, 32, 16);
    c.bench_function("desk denoise 32x32x16", |b| b.iter(|| denoise_cube(&model, black_box(&noisy)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = model
}
criterion_main!(benches);
