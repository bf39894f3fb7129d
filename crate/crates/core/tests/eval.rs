use nalgebra::DMatrix;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

use raven_core::attack::RavenConfig;
use raven_core::baseline::{AttackKind, AttackSpec};
use raven_core::eval::report::{CLEAN_LABEL, PSNR_CAP, REPORT_SCHEMA};
use raven_core::eval::{
    calibrate_threshold, evaluate_grid, frechet_distance, tpr_at_fpr, FrechetStats, GridContext, RandomPatchEmbedding,
    SchemeSetup, Threshold,
};
use raven_core::toy::toy_set;
use raven_core::watermark::{embed, score, Scheme, WatermarkKey};
use raven_core::{derive_stream, Error};

/// Principal square root by the Denman-Beavers iteration.
fn sqrtm_db(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let (mut y, mut z) = (a.clone(), DMatrix::identity(n, n));
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        y = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
    }
    y
}

fn random_psd(seed: u64, n: usize) -> DMatrix<f64> {
    let mut rng = derive_stream(seed, "psd").unwrap();
    let g = DMatrix::from_vec(n, n, rng.normals(n * n));
    &g * g.transpose() + DMatrix::identity(n, n) * 0.1
}

#[test]
fn frechet_matches_denman_beavers_reference() {
    let n = 5;
    let (sa, sb) = (random_psd(1, n), random_psd(2, n));
    let mut rng = derive_stream(3, "mu").unwrap();
    let (ma, mb) = (rng.normals(n), rng.normals(n));
    let diff: f64 = ma.iter().zip(&mb).map(|(a, b)| (a - b).powi(2)).sum();
    let want = diff + sa.trace() + sb.trace() - 2.0 * sqrtm_db(&(&sa * &sb)).trace();
    let a = FrechetStats::new(ma, sa.as_slice().to_vec(), 100).unwrap();
    let b = FrechetStats::new(mb, sb.as_slice().to_vec(), 100).unwrap();
    let got = frechet_distance(&a, &b).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn frechet_identity_and_mean_shift() {
    let eye = DMatrix::<f64>::identity(3, 3).as_slice().to_vec();
    let a = FrechetStats::new(vec![0.0; 3], eye.clone(), 10).unwrap();
    let b = FrechetStats::new(vec![1.0, 2.0, 2.0], eye, 10).unwrap();
    assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-9);
    assert!((frechet_distance(&a, &b).unwrap() - 9.0).abs() < 1e-9);
}

#[test]
fn calibration_needs_enough_nulls() {
    let err = calibrate_threshold(&[0.5; 50], 0.01).unwrap_err();
    assert!(matches!(err, Error::TooFewSamples { minimum: 100, got: 50 }));
}

fn setup(scheme: Scheme, seed: u64, n: usize) -> SchemeSetup {
    let mut rng = derive_stream(seed, "key").unwrap();
    let key = WatermarkKey::random_bits(scheme, 32, &mut rng).unwrap();
    let originals: Vec<_> = toy_set(seed, n, (64, 64)).unwrap().into_iter().map(|x| x.quantized()).collect();
    let marked = originals.iter().map(|x| embed(x, &key).unwrap().quantized()).collect();
    let null_scores: Vec<(String, f64)> = toy_set(seed + 1000, 100, (64, 64))
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, x)| (format!("null{i:04}"), score(&x.quantized(), &key, None).unwrap().0))
        .collect();
    let values: Vec<f64> = null_scores.iter().map(|(_, s)| *s).collect();
    let value = calibrate_threshold(&values, 0.01).unwrap();
    SchemeSetup {
        threshold: Threshold {
            scheme,
            value,
            fpr: 0.01,
            n_null: values.len(),
            achieved_fpr: tpr_at_fpr(&values, value).unwrap(),
            null_hash: format!("{:x}", Sha256::digest(format!("{values:?}"))),
        },
        key,
        marked,
        originals: Some(originals),
        null_scores,
    }
}

fn ctx(extractor: &RandomPatchEmbedding) -> GridContext<'_> {
    GridContext {
        seed: 5,
        fpr: 0.01,
        raven: RavenConfig::default(),
        backend: None,
        extractor,
        attacked: None,
    }
}

#[test]
fn identity_attack_cell_matches_clean() {
    let e = RandomPatchEmbedding::default();
    let s = setup(Scheme::DwtDct, 1, 6);
    let id = AttackSpec {
        label: Some("bright1".into()),
        ..AttackSpec::new(AttackKind::Brightness { factor: 1.0 })
    };
    let r = evaluate_grid(&[s], &[id], &ctx(&e)).unwrap();
    let (clean, att) = (&r.cells[0], &r.cells[1]);
    assert_eq!(clean.attack, CLEAN_LABEL);
    assert_eq!(att.value, clean.value);
    assert_eq!(att.psnr, Some(PSNR_CAP));
    assert!(att.frechet.unwrap().abs() < 1e-9);
}

#[test]
fn empty_attack_list_gives_clean_rows() {
    let e = RandomPatchEmbedding::default();
    let r = evaluate_grid(&[setup(Scheme::DwtDct, 2, 4), setup(Scheme::DwtDctSvd, 3, 4)], &[], &ctx(&e)).unwrap();
    assert_eq!(r.cells.len(), 2);
    assert!(r.cells.iter().all(|c| c.attack == CLEAN_LABEL && c.n == 4));
}

#[test]
fn smoke_grid_is_schema_valid() {
    let e = RandomPatchEmbedding::default();
    let attacks = vec![
        AttackSpec::new(AttackKind::Jpeg { quality: 50 }),
        AttackSpec::new(AttackKind::GaussianBlur { sigma: 1.0 }),
        AttackSpec::new(AttackKind::GaussianNoise { sigma: 0.05 }),
    ];
    let r = evaluate_grid(&[setup(Scheme::DwtDct, 4, 20), setup(Scheme::DwtDctSvd, 5, 20)], &attacks, &ctx(&e)).unwrap();
    assert_eq!(r.cells.len(), 8);
    assert_eq!(r.failure_count(), 0);
    let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let v = jsonschema::JSONSchema::compile(&schema).unwrap();
    if let Err(errs) = v.validate(&json) {
        panic!("{:?}", errs.map(|e| e.to_string()).collect::<Vec<_>>());
    }
    assert_eq!(r.to_csv().lines().count(), 1 + 8 * 4);
}

proptest! {
    #[test]
    fn achieved_fpr_never_exceeds_target(
        scores in prop::collection::vec(-10.0f64..10.0, 100..400),
        fpr in 0.001f64..0.5,
    ) {
        let t = calibrate_threshold(&scores, fpr).unwrap();
        prop_assert!(tpr_at_fpr(&scores, t).unwrap() <= fpr);
    }

    #[test]
    fn tpr_is_monotone_in_threshold(scores in prop::collection::vec(-5.0f64..5.0, 1..50), a in -6.0f64..6.0, b in -6.0f64..6.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(tpr_at_fpr(&scores, hi).unwrap() <= tpr_at_fpr(&scores, lo).unwrap());
    }
}
