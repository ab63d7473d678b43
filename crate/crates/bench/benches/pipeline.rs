use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hazediff_core::filters::guided_filter;
use hazediff_core::hazesynth::make_toy_dataset;
use hazediff_core::patches::{aggregate_noise, make_uniform_weights, plan_patches};
use hazediff_core::sampler::{dehaze, OracleDenoiser, SamplerConfig, TinySample};
use hazediff_core::transmission::estimate_transmission;
use hazediff_core::{DcpParams, FieldImage, PistParams, PixelImage, TinyConfig, TinyDenoiser};

fn filters(c: &mut Criterion) {
    let guide = PixelImage::from_fn(128, 128, 1, |y, x, _| ((y * 7 + x * 3) % 23) as f64 / 23.0)
        .unwrap();
    let p = guide.as_field().map(|v| 1.0 - v);
    c.bench_function("guided_filter_128_r8", |b| {
        b.iter(|| guided_filter(black_box(&p), black_box(&guide), 8, 1e-3).unwrap())
    });
    let scene = &make_toy_dataset(1, 128, 1).unwrap()[0];
    let hazy = scene.hazy();
    let params = DcpParams::default();
    c.bench_function("estimate_transmission_128", |b| {
        b.iter(|| estimate_transmission(black_box(&hazy), &params).unwrap())
    });
}

fn aggregation(c: &mut Criterion) {
    let grid = plan_patches(256, 256, 64, 16).unwrap();
    let weights = make_uniform_weights(&grid);
    let estimates: Vec<_> = grid
        .origins
        .iter()
        .map(|&o| (o, FieldImage::filled(64, 64, 3, 0.5)))
        .collect();
    c.bench_function("aggregate_256_p64_r16", |b| {
        b.iter(|| aggregate_noise(black_box(&estimates), &grid, &weights).unwrap())
    });
}

fn tiny(c: &mut Criterion) {
    let model = TinyDenoiser::new(TinyConfig::default(), 0).unwrap();
    let field = |ch| FieldImage::from_fn(32, 32, ch, |y, x, k| ((y + 2 * x + k) % 9) as f64 / 9.0);
    let sample = TinySample {
        noisy: field(3),
        condition: field(3),
        hazy: field(3),
        tmap: field(1),
        gamma: 0.5,
        step: 300,
    };
    let eps = field(3);
    c.bench_function("tiny_forward_32", |b| b.iter(|| model.predict(black_box(&sample)).unwrap()));
    c.bench_function("tiny_loss_and_grad_32", |b| {
        b.iter(|| model.loss_and_grad(black_box(&sample), &eps).unwrap())
    });
}

fn sampler(c: &mut Criterion) {
    let scene = &make_toy_dataset(1, 96, 2).unwrap()[0];
    let hazy = scene.hazy();
    let cfg = SamplerConfig {
        patch: 32,
        stride: 16,
        pist: PistParams { steps: 10, ..Default::default() },
        deterministic: true,
        ..Default::default()
    };
    let oracle = OracleDenoiser::new(&scene.clear, &scene.tmap, cfg.pist).unwrap();
    c.bench_function("dehaze_oracle_96_10_steps", |b| {
        b.iter(|| dehaze(black_box(&hazy), &scene.tmap, &oracle, &cfg).unwrap())
    });
}

criterion_group!(benches, filters, aggregation, tiny, sampler);
criterion_main!(benches);
