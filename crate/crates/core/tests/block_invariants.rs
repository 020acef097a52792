//! Contract tests for the attention blocks: shape preservation, identity at
//! initialization, softmax normalization, receptive fields, determinism and
//! finiteness.

use mscanet_core::blocks::{Cab, Cam, Mseda, MultiDilateAttention, Pam, Pcbam, Sam, SpatialFusion};
use mscanet_core::tape::{pam_softmax, window_attention_weights};
use mscanet_core::{Error, Params, Tape, Var};
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array(shape: &[usize], lo: f64, hi: f64, seed: u64) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * (hi - lo) + lo).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

fn view4(v: &ArrayD<f64>) -> ndarray::ArrayView4<'_, f64> {
    v.view().into_dimensionality::<ndarray::Ix4>().unwrap()
}

// ---------------------------------------------------------------------------
// MSEDA
// ---------------------------------------------------------------------------

#[test]
fn mseda_preserves_shape() {
    let mut params = Params::new(1);
    let block = Mseda::new(&mut params, "m", 16, &[1, 2, 3], 0.0).unwrap();
    let x = rand_array(&[1, 16, 32, 32], -1.0, 1.0, 2);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x);
    let out = block.forward(&mut tape, &bind, xv).unwrap();
    assert_eq!(tape.shape(out), &[1, 16, 32, 32]);
}

#[test]
fn mseda_zero_lambdas_keep_pre_embedding_feature_identical() {
    let mut params = Params::new(3);
    let block = Mseda::new(&mut params, "m", 8, &[1, 2, 3], 0.0).unwrap();
    let x = rand_array(&[2, 8, 12, 12], -2.0, 2.0, 4);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let (pre_embed, _) = block.forward_parts(&mut tape, &bind, xv).unwrap();
    // residual branches are scaled by zero: bitwise equality
    assert_eq!(tape.value(pre_embed), &x);
}

#[test]
fn mseda_rejects_channel_mismatch_and_nonfinite() {
    let mut params = Params::new(5);
    let block = Mseda::new(&mut params, "m", 8, &[1, 2, 3], 0.0).unwrap();
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let bad = tape.leaf(rand_array(&[1, 4, 8, 8], -1.0, 1.0, 6));
    assert!(matches!(
        block.forward(&mut tape, &bind, bad),
        Err(Error::ChannelMismatch { expected: 8, got: 4 })
    ));
    let mut nan = rand_array(&[1, 8, 8, 8], -1.0, 1.0, 7);
    nan.as_slice_mut().unwrap()[11] = f64::NAN;
    let nan = tape.leaf(nan);
    assert!(matches!(
        block.forward(&mut tape, &bind, nan),
        Err(Error::NonFinite { .. })
    ));
}

// ---------------------------------------------------------------------------
// multi-dilation windowed attention
// ---------------------------------------------------------------------------

#[test]
fn attention_rejects_indivisible_head_split() {
    let mut params = Params::new(8);
    let err = MultiDilateAttention::new(&mut params, "a", 7, 7, &[1, 2, 3]);
    assert!(matches!(
        err,
        Err(Error::HeadSplit {
            channels: 7,
            heads: 3
        })
    ));
}

#[test]
fn attention_window_rows_sum_to_one() {
    let q = rand_array(&[2, 6, 9, 7], -2.0, 2.0, 9);
    let k = rand_array(&[2, 6, 9, 7], -2.0, 2.0, 10);
    let s = window_attention_weights(&view4(&q), &view4(&k), &[1, 2, 3]);
    for b in 0..2 {
        for hd in 0..3 {
            for y in 0..9 {
                for x in 0..7 {
                    let sum: f64 = (0..9).map(|t| s[[b, hd, y, x, t]]).sum();
                    assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
                }
            }
        }
    }
}

#[test]
fn attention_constant_kv_returns_value_everywhere() {
    // k and v spatially constant per channel: softmax over equal logits is
    // a uniform average, so the output equals the v value at every position
    let q = rand_array(&[1, 6, 8, 8], -1.0, 1.0, 11);
    let mut k = ArrayD::zeros(IxDyn(&[1, 6, 8, 8]));
    let mut v = ArrayD::zeros(IxDyn(&[1, 6, 8, 8]));
    for c in 0..6 {
        let kc = 0.3 * (c as f64 + 1.0);
        let vc = 1.7 * (c as f64 + 1.0) - 4.0;
        k.slice_mut(ndarray::s![0, c, .., ..]).fill(kc);
        v.slice_mut(ndarray::s![0, c, .., ..]).fill(vc);
    }
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.leaf(q), tape.leaf(k), tape.leaf(v.clone()));
    let out = tape.windowed_attention(qv, kv, vv, &[1, 2, 3]);
    let out = view4(tape.value(out));
    for c in 0..6 {
        let expected = 1.7 * (c as f64 + 1.0) - 4.0;
        for y in 0..8 {
            for x in 0..8 {
                assert!(
                    (out[[0, c, y, x]] - expected).abs() < 1e-9,
                    "channel {c} at ({y},{x}): {} vs {expected}",
                    out[[0, c, y, x]]
                );
            }
        }
    }
}

#[test]
fn attention_receptive_fields_match_dilations() {
    // gradient support of one output entry w.r.t. v marks the window: for
    // head dilation r the influence set spans exactly 2r+1 pixels
    let dilations = [1usize, 2, 3];
    let (c, h, w) = (6usize, 9usize, 9usize);
    let cg = c / dilations.len();
    let q = rand_array(&[1, c, h, w], -1.0, 1.0, 12);
    let k = rand_array(&[1, c, h, w], -1.0, 1.0, 13);
    let v = rand_array(&[1, c, h, w], -1.0, 1.0, 14);
    let (qy, qx) = (4usize, 4usize);
    for (head, &r) in dilations.iter().enumerate() {
        let mut tape = Tape::new();
        let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
        let out = tape.windowed_attention(qv, kv, vv, &dilations);
        // select a single output scalar of this head
        let mut sel = ArrayD::zeros(IxDyn(&[1, c, h, w]));
        sel[[0, head * cg, qy, qx]] = 1.0;
        let loss = tape.weighted_sum(out, sel);
        let grads = tape.backward(loss);
        let dv = grads.wrt(vv).unwrap();
        let mut max_abs_offset = 0usize;
        for y in 0..h {
            for x in 0..w {
                let influenced = (0..c).any(|ci| dv[[0, ci, y, x]] != 0.0);
                if influenced {
                    let dy = y.abs_diff(qy);
                    let dx = x.abs_diff(qx);
                    assert!(
                        (dy == 0 || dy == r) && (dx == 0 || dx == r),
                        "head {head} (r={r}) influenced by offset ({dy},{dx})"
                    );
                    max_abs_offset = max_abs_offset.max(dy).max(dx);
                }
            }
        }
        assert_eq!(2 * max_abs_offset + 1, 2 * r + 1, "receptive field span");
    }
}

// ---------------------------------------------------------------------------
// CAM / SAM / PAM / PCBAM
// ---------------------------------------------------------------------------

#[test]
fn cam_output_shape_and_range() {
    let mut params = Params::new(20);
    let cam = Cam::new(&mut params, "cam", 16);
    assert_eq!(cam.hidden_width(), 2); // C = 16 -> C/8
    let x = rand_array(&[3, 16, 8, 8], -3.0, 3.0, 21);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x);
    let out = cam.forward(&mut tape, &bind, xv).unwrap();
    assert_eq!(tape.shape(out), &[3, 16, 1, 1]);
    for &v in tape.value(out).iter() {
        assert!(v > 0.0 && v < 1.0);
    }
}

#[test]
fn cam_zero_input_gives_half() {
    // zero input pools to zero; the MLP has zero biases, so both branches
    // emit zero and sigmoid(0 + 0) = 0.5 in every channel
    let mut params = Params::new(22);
    let cam = Cam::new(&mut params, "cam", 8);
    let x = ArrayD::zeros(IxDyn(&[2, 8, 4, 4]));
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x);
    let out = cam.forward(&mut tape, &bind, xv).unwrap();
    for &v in tape.value(out).iter() {
        assert_eq!(v, 0.5);
    }
}

#[test]
fn cam_hidden_width_floors_at_one() {
    let mut params = Params::new(23);
    let cam = Cam::new(&mut params, "cam", 4);
    assert_eq!(cam.hidden_width(), 1);
}

#[test]
fn sam_spatial_map_shape_and_range() {
    let mut params = Params::new(24);
    let sam = Sam::new(&mut params, "sam");
    let x = rand_array(&[1, 16, 32, 32], -2.0, 2.0, 25);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x);
    let out = sam.forward(&mut tape, &bind, xv).unwrap();
    assert_eq!(tape.shape(out), &[1, 1, 32, 32]);
    for &v in tape.value(out).iter() {
        assert!(v > 0.0 && v < 1.0);
    }
}

#[test]
fn pam_is_identity_at_initialization() {
    let mut params = Params::new(26);
    let pam = Pam::new(&mut params, "pam", 8, 4096);
    let x = rand_array(&[2, 8, 6, 6], -2.0, 2.0, 27);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let out = pam.forward(&mut tape, &bind, xv).unwrap();
    // alpha starts at zero: bitwise identity
    assert_eq!(tape.value(out), &x);
}

#[test]
fn pam_softmax_rows_sum_to_one() {
    let b = rand_array(&[2, 4, 5, 5], -1.5, 1.5, 28);
    let z = rand_array(&[2, 4, 5, 5], -1.5, 1.5, 29);
    let s = pam_softmax(&view4(&b), &view4(&z));
    for bi in 0..2 {
        for j in 0..25 {
            let sum: f64 = (0..25).map(|i| s[[bi, j, i]]).sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {j} sums to {sum}");
        }
    }
}

#[test]
fn pam_single_position_reduces_to_alpha_d_plus_f() {
    // N = 1: the softmax matrix is [[1]] and the mix returns the value
    // projection itself, so F_P = alpha * D + f
    let mut params = Params::new(30);
    let pam = Pam::new(&mut params, "pam", 3, 4096);
    params.value_mut(pam.alpha_id()).as_slice_mut().unwrap()[0] = 0.8;
    let f = rand_array(&[1, 3, 1, 1], -1.0, 1.0, 31);

    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let fv = tape.leaf(f.clone());
    let (k, q) = pam.kq(&mut tape, &bind, fv);
    let s = pam_softmax(&view4(tape.value(k)), &view4(tape.value(q)));
    assert_eq!(s.shape(), &[1, 1, 1]);
    assert!((s[[0, 0, 0]] - 1.0).abs() < 1e-12);

    let out = pam.forward(&mut tape, &bind, fv).unwrap();
    let d = pam.project_value(&mut tape, &bind, fv);
    let expected = tape.value(d) * 0.8 + &f;
    let diff = (tape.value(out) - &expected).iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "max abs diff {diff}");
}

#[test]
fn pam_refuses_over_budget_inputs() {
    let mut params = Params::new(32);
    let pam = Pam::new(&mut params, "pam", 2, 16);
    let x = rand_array(&[1, 2, 5, 5], -1.0, 1.0, 33);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x);
    let err = pam.forward(&mut tape, &bind, xv).unwrap_err();
    match &err {
        Error::AttentionBudget { positions, budget } => {
            assert_eq!((*positions, *budget), (25, 16));
        }
        other => panic!("expected budget error, got {other:?}"),
    }
    assert!(err.to_string().contains("coarser"));
}

#[test]
fn pcbam_preserves_shape() {
    let mut params = Params::new(34);
    let block = Pcbam::new(&mut params, "p", 32, 4096, SpatialFusion::Additive);
    let x = rand_array(&[2, 32, 16, 16], -1.0, 1.0, 35);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x);
    let out = block.forward(&mut tape, &bind, xv).unwrap();
    assert_eq!(tape.shape(out), &[2, 32, 16, 16]);
}

#[test]
fn pcbam_at_initialization_is_channel_plus_spatial_plus_input() {
    // alpha = 0 makes the position branch the identity, so the literal sum
    // is F_C' + broadcast(F_S) + f
    let mut params = Params::new(36);
    let block = Pcbam::new(&mut params, "p", 8, 4096, SpatialFusion::Additive);
    let f = rand_array(&[1, 8, 6, 6], -1.0, 1.0, 37);

    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let fv = tape.leaf(f.clone());
    let out = block.forward(&mut tape, &bind, fv).unwrap();

    let weights = block.cam().forward(&mut tape, &bind, fv).unwrap();
    let fc_prime = tape.mul_channel_map(weights, fv);
    let fs = block.sam().forward(&mut tape, &bind, fc_prime).unwrap();
    let with_spatial = tape.add_spatial_map(fc_prime, fs);
    let fvv = tape.leaf(f);
    let expected = tape.add(with_spatial, fvv);

    let diff = (tape.value(out) - tape.value(expected))
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-12, "max abs diff {diff}");
}

#[test]
fn pcbam_multiplicative_fusion_differs() {
    let mut params = Params::new(38);
    let add = Pcbam::new(&mut params, "a", 4, 4096, SpatialFusion::Additive);
    let mul = Pcbam::new(&mut params, "b", 4, 4096, SpatialFusion::Multiplicative);
    let f = rand_array(&[1, 4, 4, 4], 0.1, 1.0, 39);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let fv = tape.leaf(f);
    let oa = add.forward(&mut tape, &bind, fv).unwrap();
    let ob = mul.forward(&mut tape, &bind, fv).unwrap();
    assert_eq!(tape.shape(oa), tape.shape(ob));
    assert_ne!(tape.value(oa), tape.value(ob));
}

// ---------------------------------------------------------------------------
// CAB
// ---------------------------------------------------------------------------

#[test]
fn cab_preserves_shape() {
    let mut params = Params::new(40);
    let block = Cab::new(&mut params, "cab", 16);
    let x = rand_array(&[1, 16, 32, 32], -1.0, 1.0, 41);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x);
    let out = block.forward(&mut tape, &bind, xv).unwrap();
    assert_eq!(tape.shape(out), &[1, 16, 32, 32]);
}

#[test]
fn cab_zero_gamma_makes_ca_equal_y() {
    let mut params = Params::new(42);
    let block = Cab::new(&mut params, "cab", 8);
    let x = rand_array(&[2, 8, 8, 8], -2.0, 2.0, 43);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x);
    let parts = block.forward_parts(&mut tape, &bind, xv).unwrap();
    // gamma_C starts at zero: bitwise equality
    assert_eq!(tape.value(parts.ca), tape.value(parts.y));
}

// ---------------------------------------------------------------------------
// cross-cutting: determinism and finiteness
// ---------------------------------------------------------------------------

fn forward_all_blocks(seed: u64, x: &ArrayD<f64>) -> Vec<ArrayD<f64>> {
    let mut params = Params::new(seed);
    let mseda = Mseda::new(&mut params, "m", 8, &[1, 2], 0.0).unwrap();
    let pcbam = Pcbam::new(&mut params, "p", 8, 4096, SpatialFusion::Additive);
    let cab = Cab::new(&mut params, "c", 8);
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let a = mseda.forward(&mut tape, &bind, xv).unwrap();
    let b = pcbam.forward(&mut tape, &bind, xv).unwrap();
    let c = cab.forward(&mut tape, &bind, xv).unwrap();
    vec![
        tape.value(a).clone(),
        tape.value(b).clone(),
        tape.value(c).clone(),
    ]
}

#[test]
fn blocks_are_deterministic() {
    let x = rand_array(&[2, 8, 8, 8], -1.0, 1.0, 50);
    let first = forward_all_blocks(77, &x);
    let second = forward_all_blocks(77, &x);
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(a, b); // bitwise
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn blocks_stay_finite_and_shape_preserving(
        seed in 0u64..1000,
        b in 1usize..3,
        hw in 1usize..12,
    ) {
        let x = rand_array(&[b, 8, hw, hw], -10.0, 10.0, seed);
        for out in forward_all_blocks(seed ^ 0xabc, &x) {
            prop_assert_eq!(out.shape(), x.shape());
            prop_assert!(out.iter().all(|v| v.is_finite()));
        }
    }
}
