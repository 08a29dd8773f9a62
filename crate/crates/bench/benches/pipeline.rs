use criterion::{black_box, criterion_group, criterion_main, Criterion};

use scanforge::local_align::{locally_align_pair, LocalAlignConfig, PatchSize};
use scanforge::metrics::{ms_ssim, ssim};
use scanforge::rectify::{canny_edges, find_photo_quad, CannyParams};
use scanforge::registration::{detect_and_describe, register, warp_perspective, AlignParams, SiftParams};
use scanforge::{synth, Homography, Size};

fn registration(c: &mut Criterion) {
    let img = synth::texture(320, 240, 1);
    let h = Homography::new([[1.02, 0.01, 3.0], [-0.01, 0.99, -2.0], [0.0, 0.0, 1.0]]).unwrap();
    let moved = warp_perspective(&img, &h, img.size());
    c.bench_function("sift 320x240", |b| b.iter(|| detect_and_describe(black_box(&img), &SiftParams::default())));
    c.bench_function("register 320x240", |b| b.iter(|| register(black_box(&moved), &img, &AlignParams::default())));
    c.bench_function("warp 320x240", |b| b.iter(|| warp_perspective(black_box(&img), &h, img.size())));
}

fn rectification(c: &mut Criterion) {
    let cap = synth::photo_on_white(Size::new(320, 240).unwrap(), 3);
    c.bench_function("canny + quad 320x240", |b| {
        b.iter(|| find_photo_quad(&canny_edges(black_box(&cap.capture), &CannyParams::default()).unwrap()))
    });
}

fn metrics(c: &mut Criterion) {
    let a = synth::texture(256, 256, 4);
    let b2 = synth::add_noise(&a, 0.05, 5);
    c.bench_function("ssim 256x256 rgb", |b| b.iter(|| ssim(black_box(&a), &b2)));
    c.bench_function("ms-ssim 256x256 rgb", |b| b.iter(|| ms_ssim(black_box(&a), &b2)));
}

fn local_alignment(c: &mut Criterion) {
    let gt = synth::texture(540, 360, 6);
    let scan = synth::misaligned_scan(&gt, 3.0, 7);
    let cfg = LocalAlignConfig {
        frame: Size::new(540, 360).unwrap(),
        r2: 0.8,
        stride: 0.5,
        patch: PatchSize::Square(160),
        ..LocalAlignConfig::training()
    };
    let mut group = c.benchmark_group("local alignment");
    group.sample_size(10);
    group.bench_function("540x360, 160 px patches", |b| b.iter(|| locally_align_pair(black_box(&gt), &scan, &cfg)));
    group.finish();
}

criterion_group!(benches, registration, rectification, metrics, local_alignment);
criterion_main!(benches);
