use proptest::prelude::*;

use raven_core::diffusion::{load_backend, Backend, BackendSpec};
use raven_core::eval::calibrate_threshold;
use raven_core::toy::toy_set;
use raven_core::watermark::{
    bit_accuracy, detect, embed, embed_fourier_ring, generate_unmarked, score, Decision, Payload, Scheme, WatermarkKey,
};
use raven_core::{derive_stream, ImageBuffer};

fn ring_of(key: &WatermarkKey) -> &raven_core::watermark::RingKey {
    match &key.payload {
        Payload::Ring(r) => r,
        _ => unreachable!(),
    }
}

fn null_ring_scores(key: &WatermarkKey, backend: &Backend, n: u64) -> Vec<f64> {
    let shape = backend.latent_shape(32, 32);
    (0..n)
        .map(|i| {
            let x = generate_unmarked(90_000 + i, shape, backend).unwrap().quantized();
            score(&x, key, Some(backend)).unwrap().0
        })
        .collect()
}

#[test]
fn fourier_ring_detection_rates() {
    let backend = load_backend(&BackendSpec::tiny()).unwrap();
    let shape = backend.latent_shape(32, 32);
    let mut rng = derive_stream(21, "ring").unwrap();
    let key = WatermarkKey::random_ring(shape, &mut rng).unwrap();
    let nulls = null_ring_scores(&key, &backend, 100);
    let thr = calibrate_threshold(&nulls, 0.01).unwrap();

    let hits = (0..100u64)
        .filter(|i| {
            let x = embed_fourier_ring(10_000 + i, ring_of(&key), &backend).unwrap().quantized();
            score(&x, &key, Some(&backend)).unwrap().0 > thr
        })
        .count();
    assert!(hits >= 80, "marked detected {hits}/100");

    let on_calibration = nulls.iter().filter(|s| **s > thr).count();
    assert!(on_calibration <= 1, "calibration nulls above threshold {on_calibration}/100");
    // 300 fresh nulls at a true rate of about 1/101: P(count > 9) < 1e-3.
    let fresh = (0..300u64)
        .filter(|i| {
            let x = generate_unmarked(50_000 + i, shape, &backend).unwrap().quantized();
            score(&x, &key, Some(&backend)).unwrap().0 > thr
        })
        .count();
    assert!(fresh <= 9, "fresh unmarked detected {fresh}/300");

    let mut sorted = nulls.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[2], sorted[97]);
    let wrong = WatermarkKey::random_ring(shape, &mut rng).unwrap();
    let inside = (0..40u64)
        .filter(|i| {
            let x = embed_fourier_ring(20_000 + i, ring_of(&wrong), &backend).unwrap().quantized();
            let s = score(&x, &key, Some(&backend)).unwrap().0;
            (lo..=hi).contains(&s)
        })
        .count();
    // P(count < 34) is about 1.4% under a true 95% coverage.
    assert!(inside >= 34, "wrong-key statistics inside null band {inside}/40");
}

#[test]
fn ring_needs_backend_and_rejects_post_hoc_embed() {
    let backend = load_backend(&BackendSpec::tiny()).unwrap();
    let key = WatermarkKey::random_ring(backend.latent_shape(32, 32), &mut derive_stream(1, "r").unwrap()).unwrap();
    let x = ImageBuffer::filled(32, 32, [0.5; 3], "x").unwrap();
    assert!(score(&x, &key, None).is_err());
    assert!(embed(&x, &key).is_err());
}

#[test]
fn random_bits_give_chance_accuracy() {
    let mut rng = derive_stream(3, "bits").unwrap();
    let fixed: Vec<bool> = (0..32).map(|i| i % 3 == 0).collect();
    let mut acc = 0.0;
    for _ in 0..10_000 {
        let r: Vec<bool> = (0..32).map(|_| rng.coin()).collect();
        acc += bit_accuracy(&r, &fixed).unwrap();
    }
    acc /= 10_000.0;
    assert!((acc - 0.5).abs() <= 0.02, "{acc}");
}

#[test]
fn exact_decode_is_detected() {
    let mut rng = derive_stream(4, "k").unwrap();
    let x = &toy_set(4, 1, (64, 64)).unwrap()[0];
    for scheme in [Scheme::DwtDct, Scheme::DwtDctSvd] {
        let key = WatermarkKey::random_bits(scheme, 32, &mut rng).unwrap();
        let xw = embed(x, &key).unwrap().quantized();
        let out = detect(&xw, &key, None, 0.9).unwrap();
        assert_eq!(out.decoded.as_deref(), key.bits());
        assert_eq!(out.statistic, 1.0);
        assert_eq!(out.decision, Decision::Detected);
    }
}

#[test]
fn bit_accuracy_length_mismatch() {
    assert!(bit_accuracy(&[true], &[true, false]).is_err());
    assert!(bit_accuracy(&[], &[]).is_err());
}

#[test]
fn key_json_round_trip() {
    let mut rng = derive_stream(5, "k").unwrap();
    for key in [
        WatermarkKey::random_bits(Scheme::DwtDct, 48, &mut rng).unwrap(),
        WatermarkKey::random_ring((4, 8, 8), &mut rng).unwrap(),
    ] {
        assert_eq!(WatermarkKey::from_json(&key.to_json().unwrap()).unwrap(), key);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bitstream_round_trip_any_payload(seed in 0u64..10_000, len_idx in 0usize..3, svd in any::<bool>()) {
        let scheme = if svd { Scheme::DwtDctSvd } else { Scheme::DwtDct };
        let mut rng = derive_stream(seed, "p").unwrap();
        let key = WatermarkKey::random_bits(scheme, [32, 48, 64][len_idx], &mut rng).unwrap();
        let x = &toy_set(seed, 1, (64, 64)).unwrap()[0];
        let xw = embed(x, &key).unwrap();
        prop_assert_eq!(xw.dims(), x.dims());
        prop_assert!(xw.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let (s, _) = score(&xw.quantized(), &key, None).unwrap();
        prop_assert!(s >= 0.9, "{}", s);
    }
}
