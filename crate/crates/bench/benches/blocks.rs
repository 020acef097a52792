use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use mscanet_core::blocks::{Cab, Mseda, Pcbam, SpatialFusion};
use mscanet_core::network::{build_mscanet, NetworkConfig};
use mscanet_core::{Params, Tape};
use ndarray::{Array4, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array(shape: &[usize], seed: u64) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    ArrayD::from_shape_vec(
        IxDyn(shape),
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
    )
    .unwrap()
}

fn bench_blocks(c: &mut Criterion) {
    let x = rand_array(&[1, 16, 32, 32], 1);

    let mut params = Params::new(1);
    let mseda = Mseda::new(&mut params, "m", 16, &[1, 2, 3], 0.1).unwrap();
    let pcbam = Pcbam::new(&mut params, "p", 16, 4096, SpatialFusion::Additive);
    let cab = Cab::new(&mut params, "c", 16);

    c.bench_function("mseda_forward_16x32x32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bind = params.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            black_box(mseda.forward(&mut tape, &bind, xv).unwrap());
        })
    });

    c.bench_function("pcbam_forward_16x32x32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bind = params.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            black_box(pcbam.forward(&mut tape, &bind, xv).unwrap());
        })
    });

    c.bench_function("cab_forward_16x32x32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bind = params.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            black_box(cab.forward(&mut tape, &bind, xv).unwrap());
        })
    });
}

fn bench_network(c: &mut Criterion) {
    let model = build_mscanet(&NetworkConfig::tiny(), 3).unwrap();
    let image = {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        Array4::from_shape_fn((1, 1, 64, 64), |_| rng.random::<f64>())
    };

    c.bench_function("tiny_net_inference_64", |b| {
        b.iter(|| black_box(model.forward(&image).unwrap()))
    });

    c.bench_function("tiny_net_train_step_64", |b| {
        let target = image.mapv(|v| f64::from(v > 0.9)).into_dyn();
        b.iter(|| {
            let mut tape = Tape::new();
            let bind = model.params.bind(&mut tape);
            let xv = tape.leaf(image.clone().into_dyn());
            let out = model.net.forward_tape(&mut tape, &bind, xv).unwrap();
            let loss = tape.mse(out, target.clone());
            black_box(tape.backward(loss));
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_blocks, bench_network
}
criterion_main!(benches);
