use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use raven_core::cli::manifest::inventory;

const MINIMAL: &str = r#"
version = 1
seed = 3

[data]
count = 3
size = 64

[watermark]
schemes = ["dwt_dct"]
"#;

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, format!("{MINIMAL}{extra}")).unwrap();
    p
}

fn raven(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raven"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_embed_writes_images_and_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = raven(&["embed"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let marked = std::fs::read_dir(out.join("embed/marked/dwt_dct")).unwrap().count();
    assert_eq!(marked, 3);
    assert!(out.join("embed/keys/dwt_dct.json").exists());
    assert!(out.join("embed/manifest.json").exists());
}

#[test]
fn config_errors_are_aggregated_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, "version = 1\n[watermark]\nschemes = [\"dwt_dct\"]\n[data]\ncount = \"x\"\n").unwrap();
    let o = raven(&["embed"], &cfg, &dir.path().join("run"));
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("seed") && err.contains("data.count"), "{err}");
}

#[test]
fn unknown_attack_does_no_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[[attacks]]\nname = \"sharpen\"\n");
    let out = dir.path().join("run");
    let o = raven(&["embed"], &cfg, &out);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sharpen"));
    assert!(!out.exists());
}

#[test]
fn too_few_nulls_names_the_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    assert_eq!(code(&raven(&["embed"], &cfg, &out)), 0);
    let o = raven(&["calibrate", "--set", "data.null_count=50"], &cfg, &out);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("100"), "{}", stderr(&o));
}

#[test]
fn identity_brightness_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[[attacks]]\nname = \"brightness\"\nfactor = 1.0\n");
    let out = dir.path().join("run");
    assert_eq!(code(&raven(&["embed"], &cfg, &out)), 0);
    let o = raven(&["attack"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let marked = out.join("embed/marked/dwt_dct");
    for entry in std::fs::read_dir(&marked).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(marked.join(&name)).unwrap();
        let b = std::fs::read(out.join("attack/dwt_dct/brightness").join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }
}

#[test]
fn raven_attack_on_five_images_within_a_minute() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[backend]\nname = \"tiny\"\n[[attacks]]\nname = \"raven\"\n");
    let out = dir.path().join("run");
    assert_eq!(code(&raven(&["embed", "--set", "data.count=5"], &cfg, &out)), 0);
    let t = Instant::now();
    let o = raven(&["attack", "--set", "data.count=5"], &cfg, &out);
    let secs = t.elapsed().as_secs_f64();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(secs <= 60.0, "{secs} s");
    let traces = std::fs::read_dir(out.join("attack/dwt_dct/raven/traces")).unwrap().count();
    assert_eq!(traces, 5);
}

#[test]
fn stale_calibration_cache_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    assert_eq!(code(&raven(&["embed"], &cfg, &out)), 0);
    assert_eq!(code(&raven(&["calibrate"], &cfg, &out)), 0);
    assert_eq!(code(&raven(&["calibrate"], &cfg, &out)), 0);
    let o = raven(&["calibrate", "--set", "eval.fpr=0.05"], &cfg, &out);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = raven(&["calibrate", "--recalibrate", "--set", "eval.fpr=0.05"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn unknown_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[backend]\nname = \"no-such-model\"\n[[attacks]]\nname = \"regen\"\n");
    let o = raven(&["embed"], &cfg, &dir.path().join("run"));
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn failing_external_attack_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[[attacks]]\nname = \"external\"\ncommand = \"false\"\n");
    let out = dir.path().join("run");
    assert_eq!(code(&raven(&["embed"], &cfg, &out)), 0);
    let o = raven(&["attack"], &cfg, &out);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(out.join("attack/dwt_dct/external/failures.json").exists());
}

#[test]
fn manifest_replays_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&raven(&["embed"], &cfg, &a)), 0);
    let o = raven(&["embed"], &a.join("embed/manifest.json"), &b);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(inventory(&a).unwrap(), inventory(&b).unwrap());
}
