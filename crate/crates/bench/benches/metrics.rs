use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use mscanet_core::metrics::{iou, match_targets, niou, Mask};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(h: usize, w: usize, density: f64, rng: &mut ChaCha8Rng) -> Mask {
    Array2::from_shape_fn((h, w), |_| u8::from(rng.random::<f64>() < density))
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(Mask, Mask)> = (0..100)
        .map(|_| {
            (
                random_mask(256, 256, 0.002, &mut rng),
                random_mask(256, 256, 0.002, &mut rng),
            )
        })
        .collect();

    c.bench_function("iou_100_images_256", |b| {
        b.iter(|| black_box(iou(&pairs).unwrap()))
    });
    c.bench_function("niou_100_images_256", |b| {
        b.iter(|| black_box(niou(&pairs).unwrap()))
    });
    c.bench_function("match_targets_256", |b| {
        b.iter(|| black_box(match_targets(&pairs[0].0, &pairs[0].1, 3.0).unwrap()))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_metrics
}
criterion_main!(benches);
