//! Manual overfit probe:
//! `cargo test -p mscanet-core --test overfit_probe -- --ignored --nocapture`
//! Env overrides: OVERFIT_EPOCHS, OVERFIT_BATCH, OVERFIT_LR, OVERFIT_LR_MIN.

use mscanet_core::data::{synth_generate, SynthConfig};
use mscanet_core::network::{build_mscanet, NetworkConfig};
use mscanet_core::train::{evaluate, train, TrainConfig};

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

#[test]
#[ignore]
fn overfit_200_epochs() {
    let synth = if std::env::var("OVERFIT_HARD").is_ok() {
        SynthConfig {
            n_images: 20,
            seed: 9,
            ..SynthConfig::default()
        }
    } else {
        SynthConfig::overfit(20, 9)
    };
    let samples = synth_generate(&synth).unwrap();
    let areas: Vec<usize> = samples
        .iter()
        .map(|s| s.mask.iter().map(|&v| v as usize).sum())
        .collect();
    eprintln!("mask areas: {areas:?}");
    let mut model = build_mscanet(&NetworkConfig::tiny(), 7).unwrap();
    let desk = TrainConfig::desk();
    let tc = TrainConfig {
        epochs: env_or("OVERFIT_EPOCHS", desk.epochs),
        batch_size: env_or("OVERFIT_BATCH", desk.batch_size),
        lr_max: env_or("OVERFIT_LR", desk.lr_max),
        lr_min: env_or("OVERFIT_LR_MIN", desk.lr_min),
        adam_beta2: env_or("OVERFIT_BETA2", desk.adam_beta2),
        adam_restart_every: env_or("OVERFIT_RESTART", desk.adam_restart_every),
        checkpoint_every: 1000,
        seed: 3,
        ..TrainConfig::default()
    };
    eprintln!(
        "epochs {} batch {} lr {} -> {} restart {}",
        tc.epochs, tc.batch_size, tc.lr_max, tc.lr_min, tc.adam_restart_every
    );
    let dir = tempfile::tempdir().unwrap();
    let t0 = std::time::Instant::now();
    let mut cb = |s: mscanet_core::train::EpochStats| {
        if s.epoch % 20 == 0 {
            eprintln!(
                "epoch {:3}  lr {:.2e}  loss {:.6}  [{:.0?}]",
                s.epoch,
                s.lr,
                s.mean_loss,
                t0.elapsed()
            );
        }
    };
    train(&mut model, &samples, &tc, dir.path(), None, 0, Some(&mut cb)).unwrap();
    let report = evaluate(&model, &samples, 0.5, 3.0).unwrap();
    eprintln!(
        "trained in {:.1?}; train-set {}",
        t0.elapsed(),
        report.format_line()
    );
    assert!(report.miou >= 0.90, "mIoU {}", report.miou);
}
