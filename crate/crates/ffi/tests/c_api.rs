use std::ffi::{CStr, CString};
use std::ptr;

use raven_ffi::*;

fn last_error() -> String {
    let p = raven_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn toy_rgb(h: usize, w: usize) -> Vec<u8> {
    (0..h * w * 3)
        .map(|i| {
            let (p, c) = (i / 3, i % 3);
            let (y, x) = (p / w, p % w);
            (40 + (y * 3 + x * 2 + c * 50) % 170) as u8
        })
        .collect()
}

unsafe fn image(h: usize, w: usize) -> *mut RavenImage {
    let data = toy_rgb(h, w);
    let mut img = ptr::null_mut();
    let id = CString::new("toy").unwrap();
    assert_eq!(raven_image_from_rgb8(h, w, data.as_ptr(), data.len(), id.as_ptr(), &mut img), RavenStatus::Ok);
    img
}

unsafe fn read_rgb(img: *const RavenImage) -> Vec<u8> {
    let (mut h, mut w) = (0, 0);
    assert_eq!(raven_image_dims(img, &mut h, &mut w), RavenStatus::Ok);
    let mut buf = vec![0u8; h * w * 3];
    assert_eq!(raven_image_to_rgb8(img, buf.as_mut_ptr(), buf.len()), RavenStatus::Ok);
    buf
}

#[test]
fn rgb8_round_trip_and_dims() {
    unsafe {
        let img = image(16, 24);
        assert_eq!(read_rgb(img), toy_rgb(16, 24));
        let mut small = vec![0u8; 10];
        assert_eq!(raven_image_to_rgb8(img, small.as_mut_ptr(), small.len()), RavenStatus::Dimension);
        assert!(last_error().contains("10 bytes"));
        raven_image_free(img);
    }
}

#[test]
fn null_handles_are_reported() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(raven_embed(ptr::null(), ptr::null(), &mut out), RavenStatus::NullPointer);
        assert!(last_error().contains("img"));
        raven_image_free(ptr::null_mut());
        raven_string_free(ptr::null_mut());
        raven_backend_free(ptr::null_mut());
    }
}

#[test]
fn unknown_backend_is_backend_error() {
    unsafe {
        let name = CString::new("no-such-model").unwrap();
        let mut b = ptr::null_mut();
        assert_eq!(raven_backend_load(name.as_ptr(), &mut b), RavenStatus::Backend);
        assert!(b.is_null());
    }
}

#[test]
fn embed_detect_bitstream() {
    unsafe {
        let img = image(64, 64);
        let scheme = CString::new("dwt_dct").unwrap();
        let mut key = ptr::null_mut();
        assert_eq!(raven_key_generate(ptr::null(), scheme.as_ptr(), 32, 0, 0, 9, &mut key), RavenStatus::Ok);
        let mut marked = ptr::null_mut();
        assert_eq!(raven_embed(img, key, &mut marked), RavenStatus::Ok);
        let (mut stat, mut det) = (0.0, 0);
        assert_eq!(raven_detect(ptr::null(), marked, key, 0.9, &mut stat, &mut det), RavenStatus::Ok);
        assert_eq!(stat, 1.0);
        assert_eq!(det, 1);

        let attack = CString::new(r#"{"name": "brightness", "factor": 1.0}"#).unwrap();
        let mut same = ptr::null_mut();
        assert_eq!(raven_apply_attack(ptr::null(), marked, attack.as_ptr(), 1, &mut same), RavenStatus::Ok);
        assert_eq!(read_rgb(same), read_rgb(marked));

        let bad = CString::new(r#"{"name": "sharpen"}"#).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(raven_apply_attack(ptr::null(), marked, bad.as_ptr(), 1, &mut none), RavenStatus::Config);
        for p in [img, marked, same] {
            raven_image_free(p);
        }
        raven_string_free(key);
    }
}

#[test]
fn attack_through_tiny_backend_is_deterministic() {
    unsafe {
        let name = CString::new("tiny").unwrap();
        let mut b = ptr::null_mut();
        assert_eq!(raven_backend_load(name.as_ptr(), &mut b), RavenStatus::Ok);
        let img = image(32, 32);
        let cfg = CString::new(r#"{"strength": 0.15, "seed": 3}"#).unwrap();
        let mut outs = Vec::new();
        let mut trace = ptr::null_mut();
        for _ in 0..2 {
            let mut y = ptr::null_mut();
            assert_eq!(raven_attack(b, img, cfg.as_ptr(), &mut y, &mut trace), RavenStatus::Ok, "{}", last_error());
            outs.push(read_rgb(y));
            raven_image_free(y);
        }
        assert_eq!(outs[0], outs[1]);
        let t = CStr::from_ptr(trace).to_str().unwrap();
        assert!(t.contains("\"tau\": 7"), "{t}");
        raven_string_free(trace);

        let bad = CString::new(r#"{"strength": 3.0}"#).unwrap();
        let mut y = ptr::null_mut();
        assert_eq!(raven_attack(b, img, bad.as_ptr(), &mut y, ptr::null_mut()), RavenStatus::Config);
        raven_image_free(img);
        raven_backend_free(b);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/raven.h")).unwrap();
    for f in [
        "raven_backend_load",
        "raven_image_from_rgb8",
        "raven_image_to_rgb8",
        "raven_attack",
        "raven_apply_attack",
        "raven_key_generate",
        "raven_embed",
        "raven_detect",
        "raven_string_free",
        "typedef struct RavenImage RavenImage",
        "RAVEN_STATUS_OK = 0",
    ] {
        assert!(header.contains(f), "missing {f}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile_dir();
    let src = dir.join("use.c");
    std::fs::write(
        &src,
        "#include \"raven.h\"\nint main(void) { RavenImage *img = 0; raven_image_free(img); return RAVEN_STATUS_OK; }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("raven-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
