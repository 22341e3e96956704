use licp::codec::{init_weights, run_float, run_int, ChannelConfig, Codec, QuantMode, Raster, GA};
use licp::quant::{
    calibrate, convert_to_int8, lsq_grad_input, lsq_grad_step, lsq_quantize, sqnr_db, CalibPolicy,
    CalibrationStats, QN, QP,
};
use licp::rng::SplitMix64;
use licp::tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn quantize_is_idempotent(v in -1e4f64..1e4, s in 1e-3f64..10.0) {
        let q = lsq_quantize(v, s, QN, QP).unwrap();
        prop_assert_eq!(lsq_quantize(q, s, QN, QP).unwrap(), q);
    }

    #[test]
    fn error_is_half_a_step_inside_the_range(r in -128f64..=127.0, s in 1e-3f64..10.0) {
        let v = r * s;
        let q = lsq_quantize(v, s, QN, QP).unwrap();
        prop_assert!((q - v).abs() <= s / 2.0 * (1.0 + 1e-9));
    }

    #[test]
    fn step_gradient_matches_frozen_rounding(n in -140i32..140, frac in 0.01f64..0.49, up in any::<bool>(), s in 0.05f64..4.0) {
        let r = n as f64 + if up { frac } else { -frac };
        prop_assume!((r + QN).abs() > 0.01 && (r - QP).abs() > 0.01);
        let v = r * s;
        let g = lsq_grad_step(v, s, QN, QP).unwrap();
        let fd = frozen_fd(v, s);
        prop_assert!((fd - g).abs() < 1e-4, "fd {} grad {}", fd, g);
        let gi = lsq_grad_input(v, s, QN, QP).unwrap();
        prop_assert_eq!(gi, if -QN < r && r < QP { 1.0 } else { 0.0 });
    }

    #[test]
    fn percentile_never_exceeds_absmax(
        values in prop::collection::vec(-1e3f32..1e3, 1..400),
        p in 0.1f64..100.0,
    ) {
        let mut s = CalibrationStats::new();
        s.observe(&values);
        let a = calibrate(&s, CalibPolicy::Absmax).unwrap();
        let q = calibrate(&s, CalibPolicy::Percentile(p)).unwrap();
        prop_assert!(q <= a);
    }
}

/// Central difference of the quantizer with the rounding residual
/// round(v/s) - v/s held at its value at `s`, and the clip decision fixed.
fn frozen_fd(v: f64, s: f64) -> f64 {
    let r = v / s;
    let q = r.round();
    let f = |t: f64| {
        if r <= -QN {
            -QN * t
        } else if r >= QP {
            QP * t
        } else {
            t * (v / t + (q - r))
        }
    };
    let e = 1e-6 * s;
    (f(s + e) - f(s - e)) / (2.0 * e)
}

fn image(w: usize, h: usize, seed: u64) -> Tensor {
    // Smooth gradient plus noise so activations resemble natural content.
    let mut rng = SplitMix64::new(seed);
    let data: Vec<u8> = (0..w * h * 3)
        .map(|i| {
            let x = (i / 3) % w;
            let y = (i / 3) / w;
            let base = (x * 255 / w + y * 128 / h) as i64 % 256;
            (base + rng.below(33) as i64 - 16).clamp(0, 255) as u8
        })
        .collect();
    Raster::new(w, h, data).unwrap().to_tensor()
}

#[test]
fn converted_model_tracks_the_float_path() {
    let model = init_weights(&ChannelConfig::ORIGIN, 3).unwrap();
    let calib: Vec<Tensor> = (0..2).map(|i| image(64, 64, i)).collect();
    let q = convert_to_int8(&model, &calib).unwrap();
    assert!(q.is_full_int());
    let x = image(64, 64, 9);
    let yf = run_float(&model.layers[GA], &x).unwrap();
    let yi = run_int(&q.layers[GA], &x).unwrap();
    let db = sqnr_db(yf.data(), yi.data());
    assert!(db > 20.0, "g_a SQNR {db:.1} dB");

    let codec = Codec::new(q)
        .unwrap()
        .with_mode(QuantMode::FullInt)
        .unwrap();
    let bytes = codec.encode(&x).unwrap();
    let a = codec.decode(&bytes).unwrap();
    let b = codec.decode(&bytes).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dims(), [1, 3, 64, 64]);
}

#[test]
fn conversion_needs_images() {
    let model = init_weights(&ChannelConfig::ORIGIN, 3).unwrap();
    assert!(convert_to_int8(&model, &[]).is_err());
}
