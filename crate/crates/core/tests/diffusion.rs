use raven_core::diffusion::ddim::{guided_eps, noise_to};
use raven_core::diffusion::{
    ddim_invert, ddim_sample, forward_noise, load_backend, Backend, BackendSpec, Conditioning, StandardRouter,
};
use raven_core::{derive_stream, gaussian_like, Error, Latent};

fn tiny() -> Backend {
    load_backend(&BackendSpec::tiny()).unwrap()
}

fn latent(seed: u64, shape: (usize, usize, usize)) -> Latent {
    gaussian_like(shape, &mut derive_stream(seed, "test:latent").unwrap()).unwrap()
}

#[test]
fn tiny_backend_contract() {
    let a = tiny();
    let b = tiny();
    assert_eq!(a.factor(), 4);
    assert_eq!(a.schedule.len(), 50);
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(a.schedule.hash(), b.schedule.hash());
    assert_eq!(a.latent_shape(64, 48), (4, 16, 12));
}

#[test]
fn unknown_backend_is_an_error() {
    let spec = BackendSpec {
        name: "definitely-not-a-model".into(),
        ..BackendSpec::tiny()
    };
    assert!(matches!(load_backend(&spec), Err(Error::Backend(_))));
    let spec = BackendSpec {
        steps: 0,
        ..BackendSpec::tiny()
    };
    assert!(load_backend(&spec).is_err());
}

#[test]
fn forward_noise_moments() {
    let b = tiny();
    let z = latent(1, (1, 2, 2));
    let n = 10_000;
    let tau = b.schedule.strength_to_timestep(0.3).unwrap();
    let ab = b.schedule.alpha_bar(tau);
    let mut rng = derive_stream(2, "moments").unwrap();
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..n {
        let (x, t) = forward_noise(&z, 0.3, &b.schedule, &mut rng).unwrap();
        assert_eq!(t, tau);
        for (k, v) in x.data().iter().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    let var = 1.0 - ab;
    for k in 0..4 {
        let mean = sum[k] / n as f64;
        let v = sq[k] / n as f64 - mean * mean;
        let want = ab.sqrt() * z.data()[k];
        assert!((mean - want).abs() <= 3.0 * var.sqrt() / (n as f64).sqrt(), "mean {mean} vs {want}");
        assert!((v / var - 1.0).abs() <= 0.05, "variance {v} vs {var}");
    }
}

#[test]
fn invert_requires_steps() {
    let b = tiny();
    let z = latent(3, (4, 8, 8));
    assert!(ddim_invert(&b, &z, 0, &b.null_conditioning(), 1.0, None).is_err());
}

#[test]
fn invert_sample_round_trip() {
    let b = tiny();
    let x = &raven_core::toy::toy_set(8, 2, (32, 32)).unwrap()[1];
    let z0 = b.encode(x).unwrap();
    let null = b.null_conditioning();
    let zt = ddim_invert(&b, &z0, 50, &null, 1.0, None).unwrap();
    assert_eq!(zt.timestep_tag, Some(50));
    let back = ddim_sample(&b, &zt, 50, &null, 1.0, None).unwrap();
    assert!(back.relative_l2(&z0) <= 0.05, "{}", back.relative_l2(&z0));
}

#[test]
fn guidance_matters_only_with_conditioning() {
    let b = tiny();
    let z = latent(4, (4, 8, 8)).with_tag(20);
    let cond = Conditioning(vec![0.7, -0.3, 0.2, 0.5]);
    let e1 = guided_eps(&b, &z, 20, &cond, 1.0, None).unwrap();
    let e25 = guided_eps(&b, &z, 20, &cond, 2.5, None).unwrap();
    assert_ne!(e1.data(), e25.data());
    let s1 = ddim_sample(&b, &z, 50, &cond, 1.0, None).unwrap();
    let s25 = ddim_sample(&b, &z, 50, &cond, 2.5, None).unwrap();
    assert!(s1.relative_l2(&s25) > 1e-6);
    let null = b.null_conditioning();
    let n1 = ddim_sample(&b, &z, 50, &null, 1.0, None).unwrap();
    let n25 = ddim_sample(&b, &z, 50, &null, 2.5, None).unwrap();
    assert_eq!(n1.data(), n25.data());
}

#[test]
fn sampling_from_zero_is_identity() {
    let b = tiny();
    let z = latent(5, (4, 8, 8)).with_tag(0);
    let out = ddim_sample(&b, &z, 50, &b.null_conditioning(), 2.5, None).unwrap();
    assert_eq!(out.data(), z.data());
}

#[test]
fn standard_router_matches_no_router() {
    let b = tiny();
    let z = latent(6, (4, 8, 8)).with_tag(12);
    let null = b.null_conditioning();
    let plain = ddim_sample(&b, &z, 50, &null, 2.5, None).unwrap();
    let mut r = StandardRouter;
    let routed = ddim_sample(&b, &z, 50, &null, 2.5, Some(&mut r)).unwrap();
    assert_eq!(plain.data(), routed.data());
}

#[test]
fn untagged_latent_cannot_be_sampled() {
    let b = tiny();
    assert!(ddim_sample(&b, &latent(7, (4, 4, 4)), 50, &b.null_conditioning(), 1.0, None).is_err());
}

#[test]
fn golden_sample_regression() {
    let b = tiny();
    let z = latent(2024, (4, 8, 8));
    let eps = latent(2025, (4, 8, 8));
    let zt = noise_to(&z, 25, &b.schedule, &eps).unwrap();
    let out = ddim_sample(&b, &zt, 50, &b.null_conditioning(), 2.5, None).unwrap();
    assert_eq!(out.content_hash(), "ef12c446d16af0a84f3029ed04ff819b8930c6e94bc67f9f4b49fe7dee450767");
}
