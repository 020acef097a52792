//! Dataset loading, synthesis and padding contracts.

use mscanet_core::data::{
    load_dataset, pad_to_multiple, split_counts, synth_generate, unpad_prediction, write_dataset,
    write_split_lists, Background, SegmentationSample, SynthConfig,
};
use mscanet_core::Error;
use ndarray::Array2;
use proptest::prelude::*;

fn default_cfg() -> SynthConfig {
    SynthConfig {
        n_images: 10,
        seed: 42,
        ..SynthConfig::default()
    }
}

#[test]
fn synth_respects_area_cap() {
    let cfg = SynthConfig {
        targets_min: 1,
        targets_max: 3,
        sigma_min: 0.55,
        sigma_max: 0.65,
        ..default_cfg()
    };
    let samples = synth_generate(&cfg).unwrap();
    assert_eq!(samples.len(), 10);
    let cap = cfg.area_cap_pixels(); // 0.15% of 64x64 = 6 pixels
    assert_eq!(cap, 6);
    for s in &samples {
        let area: usize = s.mask.iter().map(|&v| v as usize).sum();
        assert!(area >= 1 && area <= cap, "mask area {area} out of [1, {cap}]");
        assert!(s.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(s.image.dim(), s.mask.dim());
    }
}

#[test]
fn synth_is_deterministic() {
    let cfg = default_cfg();
    let a = synth_generate(&cfg).unwrap();
    let b = synth_generate(&cfg).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.id, y.id);
        assert_eq!(x.image, y.image); // bitwise
        assert_eq!(x.mask, y.mask);
    }
}

#[test]
fn synth_noiseless_mask_is_a_level_set() {
    // flat zero background, no noise, one target: the mask is exactly the
    // super-half-peak region, so mask pixels are strictly brighter than
    // every non-mask pixel
    let cfg = SynthConfig {
        n_images: 5,
        targets_min: 1,
        targets_max: 1,
        background: Background::Flat,
        background_level: 0.0,
        noise_std: 0.0,
        ..default_cfg()
    };
    let samples = synth_generate(&cfg).unwrap();
    for s in &samples {
        let min_in = s
            .image
            .iter()
            .zip(s.mask.iter())
            .filter(|(_, &m)| m > 0)
            .map(|(&v, _)| v)
            .fold(f64::INFINITY, f64::min);
        let max_out = s
            .image
            .iter()
            .zip(s.mask.iter())
            .filter(|(_, &m)| m == 0)
            .map(|(&v, _)| v)
            .fold(0.0, f64::max);
        assert!(
            min_in > max_out,
            "level-set violated: min inside {min_in} <= max outside {max_out}"
        );
    }
}

#[test]
fn synth_rejects_infeasible_area_cap() {
    let cfg = SynthConfig {
        sigma_min: 3.0,
        sigma_max: 3.0,
        ..default_cfg()
    };
    match synth_generate(&cfg) {
        Err(Error::Config(msg)) => assert!(msg.contains("area cap"), "message: {msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn synth_rejects_high_contrast() {
    let cfg = SynthConfig {
        peak_min: 0.3,
        peak_max: 0.6,
        ..default_cfg()
    };
    assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
}

#[test]
fn split_counts_follow_floor_rule() {
    assert_eq!(split_counts(427, 0.7), (298, 129));
    assert_eq!(split_counts(10, 1.0), (10, 0));
    assert_eq!(split_counts(10, 0.0), (0, 10));
    assert_eq!(split_counts(1, 0.7), (0, 1));
}

#[test]
fn dataset_roundtrip_split_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = default_cfg();
    let samples = synth_generate(&cfg).unwrap();
    write_dataset(dir.path(), &samples, &cfg).unwrap();
    assert!(dir.path().join("manifest.json").is_file());

    let (train, test) = load_dataset(dir.path(), 0.7, 5).unwrap();
    assert_eq!(train.len(), 7);
    assert_eq!(test.len(), 3);

    // disjoint and exhaustive
    let mut ids: Vec<&str> = train.iter().chain(&test).map(|s| s.id.as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 10);

    // loader normalization
    for s in train.iter().chain(&test) {
        assert!(s.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(s.mask.iter().all(|&v| v <= 1));
    }

    // deterministic split
    let (train2, test2) = load_dataset(dir.path(), 0.7, 5).unwrap();
    let id = |set: &[SegmentationSample]| set.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
    assert_eq!(id(&train), id(&train2));
    assert_eq!(id(&test), id(&test2));

    // masks survive the 8-bit round trip exactly
    let by_id = |set: &[SegmentationSample], want: &str| {
        set.iter().find(|s| s.id == format!("{want}.png")).cloned()
    };
    for s in &samples {
        let loaded = by_id(&train, &s.id).or_else(|| by_id(&test, &s.id)).unwrap();
        assert_eq!(loaded.mask, s.mask);
    }

    // ratio 1.0 puts everything in train
    let (all, none) = load_dataset(dir.path(), 1.0, 5).unwrap();
    assert_eq!((all.len(), none.len()), (10, 0));

    write_split_lists(dir.path(), &train, &test).unwrap();
    let train_txt = std::fs::read_to_string(dir.path().join("train.txt")).unwrap();
    assert_eq!(train_txt.lines().count(), 7);
}

#[test]
fn loader_errors_name_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_images: 3,
        ..default_cfg()
    };
    let samples = synth_generate(&cfg).unwrap();
    write_dataset(dir.path(), &samples, &cfg).unwrap();
    std::fs::remove_file(dir.path().join("masks/synth_0001.png")).unwrap();
    match load_dataset(dir.path(), 0.7, 1) {
        Err(Error::Load(msg)) => assert!(msg.contains("synth_0001"), "message: {msg}"),
        other => panic!("expected load error, got {other:?}"),
    }

    let empty = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(empty.path().join("images")).unwrap();
    std::fs::create_dir_all(empty.path().join("masks")).unwrap();
    assert!(matches!(
        load_dataset(empty.path(), 0.7, 1),
        Err(Error::Load(_))
    ));
}

#[test]
fn pad_to_multiple_examples() {
    let sample = SegmentationSample {
        id: "s".into(),
        image: Array2::from_shape_fn((63, 64), |(y, x)| (y * 64 + x) as f64 / 4032.0),
        mask: Array2::from_shape_fn((63, 64), |(y, x)| u8::from((y + x) % 17 == 0)),
    };
    let padded = pad_to_multiple(&sample, 16);
    assert_eq!(padded.sample.image.dim(), (64, 64));
    assert_eq!((padded.orig_h, padded.orig_w), (63, 64));

    // already divisible: unchanged
    let square = SegmentationSample {
        id: "q".into(),
        image: Array2::zeros((32, 32)),
        mask: Array2::zeros((32, 32)),
    };
    let same = pad_to_multiple(&square, 16);
    assert_eq!(same.sample.image.dim(), (32, 32));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pad_unpad_roundtrip(h in 1usize..40, w in 1usize..40, multiple in 1usize..17) {
        let sample = SegmentationSample {
            id: "p".into(),
            image: Array2::from_shape_fn((h, w), |(y, x)| ((y * 31 + x * 17) % 256) as f64 / 255.0),
            mask: Array2::from_shape_fn((h, w), |(y, x)| u8::from((y + 2 * x) % 13 == 0)),
        };
        let padded = pad_to_multiple(&sample, multiple);
        prop_assert_eq!(padded.sample.image.dim().0 % multiple, 0);
        prop_assert_eq!(padded.sample.image.dim().1 % multiple, 0);
        let restored = unpad_prediction(&padded.sample.image, padded.orig_h, padded.orig_w);
        prop_assert_eq!(&restored, &sample.image);
    }
}
