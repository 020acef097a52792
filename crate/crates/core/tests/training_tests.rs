//! Training harness contracts: schedule endpoints, loss semantics, step
//! behavior, determinism, checkpoint round-trips and numeric aborts.

use mscanet_core::checkpoint::{load_checkpoint, save_checkpoint};
use mscanet_core::data::{synth_generate, SynthConfig};
use mscanet_core::network::{build_mscanet, NetworkConfig};
use mscanet_core::train::{
    cosine_lr, evaluate, mse_loss, predict_prob, train, Adam, TrainConfig,
};
use mscanet_core::{Error, Tape};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn paper_schedule() -> TrainConfig {
    TrainConfig::default() // epochs 1000, lr 1e-3 -> 1e-5
}

#[test]
fn cosine_schedule_hits_both_endpoints_exactly() {
    let cfg = paper_schedule();
    assert_eq!(cosine_lr(0, &cfg).unwrap(), 1e-3);
    assert_eq!(cosine_lr(cfg.epochs, &cfg).unwrap(), 1e-5);
}

#[test]
fn cosine_schedule_midpoint() {
    let cfg = paper_schedule();
    let mid = cosine_lr(cfg.epochs / 2, &cfg).unwrap();
    assert!((mid - 5.05e-4).abs() < 1e-12, "midpoint {mid}");
}

#[test]
fn cosine_schedule_is_monotone_non_increasing() {
    let cfg = TrainConfig {
        epochs: 137,
        ..paper_schedule()
    };
    let mut prev = f64::INFINITY;
    for e in 0..=cfg.epochs {
        let lr = cosine_lr(e, &cfg).unwrap();
        assert!(lr <= prev + 1e-18, "epoch {e}: {lr} > {prev}");
        prev = lr;
    }
    assert!(cosine_lr(cfg.epochs + 1, &cfg).is_err());
}

#[test]
fn mse_loss_point_values() {
    let gt = Array2::from_shape_fn((4, 4), |(y, x)| u8::from((y + x) % 3 == 0));
    let perfect = gt.mapv(f64::from);
    assert_eq!(mse_loss(&perfect, &gt).unwrap(), 0.0);

    let half = Array2::from_elem((4, 4), 0.5);
    assert_eq!(mse_loss(&half, &gt).unwrap(), 0.25);

    let wrong_shape = Array2::<f64>::zeros((3, 4));
    assert!(matches!(
        mse_loss(&wrong_shape, &gt),
        Err(Error::Argument(_))
    ));
}

#[test]
fn mse_gradient_matches_analytic_form() {
    // d/dpred mean((pred - gt)^2) = 2 (pred - gt) / n
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pred = Array4::from_shape_fn((1, 1, 3, 3), |_| rng.random::<f64>());
    let target = Array4::from_shape_fn((1, 1, 3, 3), |_| f64::from(rng.random::<bool>()));
    let mut tape = Tape::new();
    let p = tape.leaf(pred.clone().into_dyn());
    let loss = tape.mse(p, target.clone().into_dyn());
    let grads = tape.backward(loss);
    let got = grads.wrt(p).unwrap();
    let expected = (&pred - &target) * (2.0 / 9.0);
    for (a, b) in got.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-15);
    }
}

fn micro_net() -> NetworkConfig {
    NetworkConfig {
        base_channels: 4,
        depth: 1,
        channel_multipliers: vec![1, 2],
        pcbam_levels: vec![0],
        ..NetworkConfig::default()
    }
}

fn tiny_synth(n: usize, seed: u64) -> Vec<mscanet_core::data::SegmentationSample> {
    synth_generate(&SynthConfig {
        n_images: n,
        height: 48,
        width: 48,
        targets_min: 1,
        targets_max: 1,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn one_adam_step_decreases_single_sample_loss() {
    // smoke test over 10 random trials
    for trial in 0..10 {
        let mut model = build_mscanet(&micro_net(), 100 + trial).unwrap();
        let sample = &tiny_synth(1, 200 + trial)[0];
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            lr_max: 1e-3,
            lr_min: 1e-3 - 1e-9,
            checkpoint_every: 10,
            seed: trial,
            ..TrainConfig::default()
        };
        let before = sample_loss(&model, sample);
        let dir = tempfile::tempdir().unwrap();
        train(
            &mut model,
            std::slice::from_ref(sample),
            &cfg,
            dir.path(),
            None,
            0,
            None,
        )
        .unwrap();
        let after = sample_loss(&model, sample);
        assert!(
            after < before,
            "trial {trial}: loss did not decrease ({before} -> {after})"
        );
    }
}

fn sample_loss(
    model: &mscanet_core::network::Model,
    sample: &mscanet_core::data::SegmentationSample,
) -> f64 {
    let prob = predict_prob(model, sample).unwrap();
    mse_loss(&prob, &sample.mask).unwrap()
}

#[test]
fn partial_batches_are_kept_not_dropped() {
    // 4 samples with batch size 16 is a single step per epoch: training must
    // behave exactly like batch size 4
    let samples = tiny_synth(4, 7);
    let mk = |batch_size: usize| {
        let mut model = build_mscanet(&micro_net(), 5).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size,
            checkpoint_every: 100,
            seed: 11,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        train(&mut model, &samples, &cfg, dir.path(), None, 0, None).unwrap();
        model
    };
    let a = mk(16);
    let b = mk(4);
    for ((_, va), (_, vb)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(va, vb); // bitwise
    }
}

#[test]
fn training_is_deterministic() {
    let samples = tiny_synth(4, 13);
    let run = || {
        let mut model = build_mscanet(&micro_net(), 21).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            checkpoint_every: 100,
            seed: 17,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        train(&mut model, &samples, &cfg, dir.path(), None, 0, None).unwrap();
        std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b, "train_log.csv must be byte-identical");
    assert!(a.starts_with("epoch,lr,loss\n"));
    assert_eq!(a.lines().count(), 4); // header + 3 epochs
}

#[test]
fn checkpoint_roundtrip_reproduces_outputs_bitwise() {
    let samples = tiny_synth(3, 23);
    let mut model = build_mscanet(&micro_net(), 31).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        checkpoint_every: 100,
        seed: 3,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let outcome = train(&mut model, &samples, &cfg, dir.path(), Some(&samples), 0, None).unwrap();

    let (loaded, meta) = load_checkpoint(&outcome.final_dir).unwrap();
    assert_eq!(meta.epoch, 2);
    assert_eq!(meta.seed, 31);
    assert!(meta.metrics.is_some());

    for s in &samples {
        let a = predict_prob(&model, s).unwrap();
        let b = predict_prob(&loaded, s).unwrap();
        assert_eq!(a, b); // bitwise
    }

    // evaluation reports agree exactly too
    let ra = evaluate(&model, &samples, 0.5, 3.0).unwrap();
    let rb = evaluate(&loaded, &samples, 0.5, 3.0).unwrap();
    assert_eq!(ra.miou, rb.miou);
    assert_eq!(ra.detection, rb.detection);
}

#[test]
fn checkpoint_rejects_mismatched_blob() {
    let model = build_mscanet(&micro_net(), 1).unwrap();
    let other = build_mscanet(&NetworkConfig::tiny(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &model, 0, None).unwrap();
    // overwrite meta with the other architecture: parameter names mismatch
    let meta = mscanet_core::checkpoint::CheckpointMeta {
        schema_version: 1,
        config: other.net.config().clone(),
        seed: 1,
        epoch: 0,
        metrics: None,
    };
    std::fs::write(
        dir.path().join("meta.json"),
        serde_json::to_string(&meta).unwrap(),
    )
    .unwrap();
    assert!(matches!(
        load_checkpoint(dir.path()),
        Err(Error::Load(_))
    ));
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let samples = tiny_synth(2, 29);
    let mut model = build_mscanet(&micro_net(), 41).unwrap();
    // poison the head weight so the loss turns NaN after the blocks ran
    let head = model.params.id_of("head.w").unwrap();
    model.params.value_mut(head).as_slice_mut().unwrap()[0] = f64::NAN;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        checkpoint_every: 100,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    match train(&mut model, &samples, &cfg, dir.path(), None, 0, None) {
        Err(Error::Numeric { epoch, batch, loss }) => {
            assert_eq!((epoch, batch), (0, 0));
            assert!(loss.is_nan());
        }
        other => panic!("expected numeric abort, got {other:?}"),
    }
}

#[test]
fn adam_state_shapes_follow_params() {
    let model = build_mscanet(&micro_net(), 51).unwrap();
    let _ = Adam::new(&model.params, &TrainConfig::default());
}

#[test]
fn oracle_and_all_zero_model_reports() {
    // an oracle "model" is simulated by evaluating ground truth as its own
    // prediction through the metric path
    let samples = tiny_synth(4, 31);
    let pairs: Vec<_> = samples
        .iter()
        .map(|s| (s.mask.clone(), s.mask.clone()))
        .collect();
    let report = mscanet_core::metrics::report(&pairs, 0.5, 3.0).unwrap();
    assert_eq!(report.miou, 1.0);
    assert_eq!(report.niou, 1.0);
    assert_eq!(report.pd, 1.0);
    assert_eq!(report.fa, 0.0);

    // all-zero predictions against nonempty targets
    let zeros: Vec<_> = samples
        .iter()
        .map(|s| (Array2::<u8>::zeros(s.mask.dim()), s.mask.clone()))
        .collect();
    let report = mscanet_core::metrics::report(&zeros, 0.5, 3.0).unwrap();
    assert_eq!(report.miou, 0.0);
    assert_eq!(report.fa, 0.0);
    assert_eq!(report.pd, 0.0);
}
