//! Manual timing probe: `cargo test -p mscanet-core --test timing_probe -- --ignored --nocapture`

use mscanet_core::data::{synth_generate, SynthConfig};
use mscanet_core::network::{build_mscanet, NetworkConfig};
use mscanet_core::train::{train, TrainConfig};

#[test]
#[ignore]
fn one_epoch_timing() {
    let synth = SynthConfig {
        n_images: 20,
        seed: 9,
        ..SynthConfig::default()
    };
    let samples = synth_generate(&synth).unwrap();
    let cfg = NetworkConfig::tiny();
    let mut model = build_mscanet(&cfg, 7).unwrap();
    eprintln!("tiny model parameters: {}", model.count_parameters());

    let tc = TrainConfig {
        epochs: 5,
        batch_size: 16,
        checkpoint_every: 1000,
        seed: 3,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let t0 = std::time::Instant::now();
    train(&mut model, &samples, &tc, dir.path(), None, 0, None).unwrap();
    let dt = t0.elapsed();
    eprintln!(
        "5 epochs on 20 images took {:.2?} ({:.3} s/epoch) -> 200 epochs ~ {:.0} s",
        dt,
        dt.as_secs_f64() / 5.0,
        dt.as_secs_f64() / 5.0 * 200.0
    );
}
