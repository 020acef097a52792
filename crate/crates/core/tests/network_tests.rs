//! Network assembly contracts: shapes, determinism, ablation structure and
//! an independent parameter-count audit.

use mscanet_core::network::{build_mscanet, default_pcbam_levels, NetworkConfig};
use mscanet_core::Error;
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_input(b: usize, c: usize, h: usize, w: usize, seed: u64) -> Array4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_fn((b, c, h, w), |_| rng.random::<f64>())
}

fn tiny() -> NetworkConfig {
    NetworkConfig::tiny()
}

#[test]
fn forward_preserves_spatial_shape_and_range() {
    let model = build_mscanet(&tiny(), 1).unwrap();
    let x = rand_input(2, 1, 64, 64, 2);
    let out = model.forward(&x).unwrap();
    assert_eq!(out.dim(), (2, 1, 64, 64));
    assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn forward_rejects_indivisible_input() {
    let cfg = NetworkConfig::default(); // depth 4
    let model = build_mscanet(&cfg, 1).unwrap();
    let x = rand_input(1, 1, 63, 64, 3);
    match model.forward(&x) {
        Err(Error::Divisibility { h, multiple, .. }) => {
            assert_eq!((h, multiple), (63, 16));
        }
        other => panic!("expected divisibility error, got {other:?}"),
    }
}

#[test]
fn build_is_deterministic_in_seed() {
    let a = build_mscanet(&tiny(), 9).unwrap();
    let b = build_mscanet(&tiny(), 9).unwrap();
    assert_eq!(a.count_parameters(), b.count_parameters());
    for ((na, va), (nb, vb)) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(na, nb);
        assert_eq!(va, vb); // bitwise
    }
    let c = build_mscanet(&tiny(), 10).unwrap();
    let differs = a
        .params
        .iter()
        .zip(c.params.iter())
        .any(|((_, va), (_, vc))| va != vc);
    assert!(differs, "different seeds must draw different weights");
}

#[test]
fn forward_is_deterministic() {
    let model = build_mscanet(&tiny(), 4).unwrap();
    let x = rand_input(1, 1, 32, 32, 5);
    let a = model.forward(&x).unwrap();
    let b = model.forward(&x).unwrap();
    assert_eq!(a, b); // bitwise
}

#[test]
fn ablation_flags_only_add_parameters() {
    let base_cfg = tiny().ablation_row(false, false, false);
    let base = build_mscanet(&base_cfg, 3).unwrap();
    let with_mseda = build_mscanet(&tiny().ablation_row(true, false, false), 3).unwrap();
    let with_two = build_mscanet(&tiny().ablation_row(true, true, false), 3).unwrap();
    let full = build_mscanet(&tiny(), 3).unwrap();

    let counts = [
        base.count_parameters(),
        with_mseda.count_parameters(),
        with_two.count_parameters(),
        full.count_parameters(),
    ];
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");

    // every baseline parameter persists, with identical initial values
    let base_names: std::collections::HashMap<&str, _> = base.params.iter().collect();
    for (name, value) in base_names.iter() {
        let in_full = full.params.id_of(name).expect("baseline param kept");
        assert_eq!(&full.params.value(in_full), value, "shared draw for {name}");
    }
}

#[test]
fn parameter_count_matches_hand_audit() {
    // depth 2, base 4, multipliers [1, 2, 4], all block flags off
    let cfg = NetworkConfig {
        base_channels: 4,
        depth: 2,
        channel_multipliers: vec![1, 2, 4],
        pcbam_levels: vec![1],
        use_mseda: false,
        use_pcbam: false,
        use_cab: false,
        ..NetworkConfig::default()
    };
    let model = build_mscanet(&cfg, 1).unwrap();

    // layer-by-layer arithmetic, written out independently of the builder
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let ln = |c: usize| 2 * c;
    let stage = |cin: usize, cout: usize| conv(cin, cout, 3) + ln(cout) + conv(cout, cout, 3) + ln(cout);
    let expected = stage(1, 4)            // encoder level 0
        + stage(4, 8)                     // encoder level 1
        + stage(8, 16)                    // bottleneck
        + conv(16, 8, 1) + stage(16, 8)   // decoder level 1 (up + stage)
        + conv(8, 4, 1) + stage(8, 4)     // decoder level 0
        + conv(4, 1, 1); // head
    assert_eq!(model.count_parameters(), expected);
}

#[test]
fn default_pcbam_levels_fit_budget_at_256() {
    let cfg = NetworkConfig::default();
    assert_eq!(cfg.pcbam_levels, default_pcbam_levels(4));
    assert_eq!(cfg.pcbam_levels, vec![2, 3]);
    // at 256x256 input, level k runs at (256 / 2^k)^2 positions
    for &level in &cfg.pcbam_levels {
        let side = 256usize >> level;
        assert!(
            side * side <= cfg.pam_budget,
            "level {level}: {side}x{side} exceeds budget {}",
            cfg.pam_budget
        );
    }
    // the finest level would blow the budget: the forward pass refuses it
    let bad = NetworkConfig {
        pcbam_levels: vec![0],
        ..NetworkConfig::default()
    };
    let model = build_mscanet(&bad, 1).unwrap();
    let x = rand_input(1, 1, 256, 256, 6);
    assert!(matches!(
        model.forward(&x),
        Err(Error::AttentionBudget { .. })
    ));
}

#[test]
fn full_default_forward_runs_at_256() {
    let model = build_mscanet(&NetworkConfig::default(), 2).unwrap();
    let x = rand_input(1, 1, 256, 256, 7);
    let out = model.forward(&x).unwrap();
    assert_eq!(out.dim(), (1, 1, 256, 256));
    assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn invalid_configs_name_the_violated_constraint() {
    let mut cfg = NetworkConfig::default();
    cfg.channel_multipliers = vec![1, 2];
    match cfg.validate() {
        Err(Error::Config(msg)) => assert!(msg.contains("channel_multipliers"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }

    let mut cfg = NetworkConfig::default();
    cfg.pcbam_levels = vec![7];
    match cfg.validate() {
        Err(Error::Config(msg)) => assert!(msg.contains("pcbam"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }

    let mut cfg = NetworkConfig::default();
    cfg.head_count = 2;
    match cfg.validate() {
        Err(Error::Config(msg)) => assert!(msg.contains("head_dilations"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn channel_plan_follows_multipliers() {
    let cfg = NetworkConfig::default();
    assert_eq!(
        (0..=4).map(|k| cfg.channels_at(k)).collect::<Vec<_>>(),
        vec![16, 32, 64, 128, 256]
    );
}
