//! Run configuration: strict TOML schema, scalar overrides, typed view.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::attack::{BoundaryMode, RavenConfig, SignMode, TranslationRange};
use crate::baseline::AttackSpec;
use crate::diffusion::{BackendSpec, RouterMode};
use crate::error::{Error, Result};
use crate::eval::features::DEFAULT_FEATURE_SEED;
use crate::watermark::{ExternalScheme, Scheme, DWT_DCT_STEP, DWT_DCT_SVD_STEP, PAYLOAD_LENGTHS};

pub const CONFIG_VERSION: i64 = 1;

#[derive(Clone, Copy)]
enum Ty {
    UInt,
    Float,
    Bool,
    Str,
    StrList,
    FloatPair,
    OneOf(&'static [&'static str]),
    ManyOf(&'static [&'static str]),
    Table(&'static [Field]),
    Attacks,
}

struct Field {
    name: &'static str,
    ty: Ty,
    required: bool,
}

const fn f(name: &'static str, ty: Ty) -> Field {
    Field {
        name,
        ty,
        required: false,
    }
}

const fn req(name: &'static str, ty: Ty) -> Field {
    Field { name, ty, required: true }
}

const SCHEMES: &[&str] = &["dwt_dct", "dwt_dct_svd", "fourier_ring", "external"];
const ATTACKS: &[&str] = &[
    "brightness",
    "contrast",
    "jpeg",
    "gaussian_blur",
    "gaussian_noise",
    "center_crop",
    "random_crop",
    "regen",
    "rinse",
    "raven",
    "external",
];

const BACKEND: &[Field] = &[
    req("name", Ty::Str),
    f("weights_path", Ty::Str),
    f("steps", Ty::UInt),
    f("guidance", Ty::Float),
    f("noising_mode", Ty::OneOf(&["stochastic", "ddim-inversion"])),
];
const DATA: &[Field] = &[
    f("source", Ty::OneOf(&["toy", "dir"])),
    f("images_dir", Ty::Str),
    f("null_dir", Ty::Str),
    f("count", Ty::UInt),
    f("size", Ty::UInt),
    f("null_count", Ty::UInt),
];
const EXTERNAL: &[Field] = &[req("command", Ty::Str), f("args", Ty::StrList)];
const WATERMARK: &[Field] = &[
    req("schemes", Ty::ManyOf(SCHEMES)),
    f("payload_bits", Ty::UInt),
    f("dwt_dct_step", Ty::Float),
    f("dwt_dct_svd_step", Ty::Float),
    f("ring_radius", Ty::Float),
    f("external", Ty::Table(EXTERNAL)),
];
const TRANSLATION: &[Field] = &[req("min_px", Ty::Float), req("max_px", Ty::Float)];
const RAVEN: &[Field] = &[
    f("strength", Ty::Float),
    f("translation", Ty::Table(TRANSLATION)),
    f("sign_mode", Ty::OneOf(&["shared", "independent"])),
    f("boundary", Ty::OneOf(&["edge_replicate", "reflect", "wrap"])),
    f("color_transfer", Ty::Bool),
    f("contrast_transfer", Ty::Bool),
    f("router", Ty::OneOf(&["standard", "view_guided"])),
    f("forced_delta_px", Ty::FloatPair),
];
const EVAL: &[Field] = &[f("fpr", Ty::Float), f("feature_seed", Ty::UInt), f("plots", Ty::Bool)];
const TOP: &[Field] = &[
    req("version", Ty::UInt),
    req("seed", Ty::UInt),
    f("backend", Ty::Table(BACKEND)),
    f("data", Ty::Table(DATA)),
    req("watermark", Ty::Table(WATERMARK)),
    f("raven", Ty::Table(RAVEN)),
    f("attacks", Ty::Attacks),
    f("eval", Ty::Table(EVAL)),
];

fn attack_params(name: &str) -> &'static [Field] {
    const FACTOR: &[Field] = &[f("factor", Ty::Float)];
    const SIGMA: &[Field] = &[f("sigma", Ty::Float)];
    const RATIO: &[Field] = &[f("ratio", Ty::Float)];
    const JPEG: &[Field] = &[f("quality", Ty::UInt)];
    const REGEN: &[Field] = &[f("strength", Ty::Float), f("steps", Ty::UInt)];
    const RINSE: &[Field] = &[f("strength", Ty::Float), f("passes", Ty::UInt), f("steps", Ty::UInt)];
    const RAVEN: &[Field] = &[f("strength", Ty::Float)];
    match name {
        "brightness" | "contrast" => FACTOR,
        "jpeg" => JPEG,
        "gaussian_blur" | "gaussian_noise" => SIGMA,
        "center_crop" | "random_crop" => RATIO,
        "regen" => REGEN,
        "rinse" => RINSE,
        "raven" => RAVEN,
        "external" => EXTERNAL,
        _ => &[],
    }
}

fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_owned()
    } else {
        format!("{path}.{name}")
    }
}

fn check_value(v: &Value, ty: Ty, path: &str, errs: &mut Vec<String>) {
    let bad = |want: &str, errs: &mut Vec<String>| errs.push(format!("`{path}`: expected {want}, got {}", v.type_str()));
    match ty {
        Ty::UInt => match v.as_integer() {
            Some(i) if i >= 0 => {}
            Some(i) => errs.push(format!("`{path}`: must be non-negative, got {i}")),
            None => bad("a non-negative integer", errs),
        },
        Ty::Float => {
            if v.as_float().is_none() && v.as_integer().is_none() {
                bad("a number", errs)
            }
        }
        Ty::Bool => {
            if v.as_bool().is_none() {
                bad("a boolean", errs)
            }
        }
        Ty::Str => {
            if v.as_str().is_none() {
                bad("a string", errs)
            }
        }
        Ty::StrList => match v.as_array() {
            Some(a) if a.iter().all(|x| x.is_str()) => {}
            _ => bad("a list of strings", errs),
        },
        Ty::FloatPair => match v.as_array() {
            Some(a) if a.len() == 2 && a.iter().all(|x| x.is_float() || x.is_integer()) => {}
            _ => bad("a list of two numbers", errs),
        },
        Ty::OneOf(options) => match v.as_str() {
            Some(s) if options.contains(&s) => {}
            Some(s) => errs.push(format!("`{path}`: `{s}` is not one of {}", options.join(", "))),
            None => bad("a string", errs),
        },
        Ty::ManyOf(options) => match v.as_array() {
            Some(a) => {
                for (i, x) in a.iter().enumerate() {
                    check_value(x, Ty::OneOf(options), &format!("{path}[{i}]"), errs);
                }
            }
            None => bad("a list", errs),
        },
        Ty::Table(fields) => match v.as_table() {
            Some(t) => check_table(t, fields, path, errs),
            None => bad("a table", errs),
        },
        Ty::Attacks => match v.as_array() {
            Some(a) => {
                for (i, x) in a.iter().enumerate() {
                    let p = format!("{path}[{i}]");
                    let Some(t) = x.as_table() else {
                        errs.push(format!("`{p}`: expected a table"));
                        continue;
                    };
                    let Some(name) = t.get("name") else {
                        errs.push(format!("`{p}.name`: required field missing"));
                        continue;
                    };
                    check_value(name, Ty::OneOf(ATTACKS), &format!("{p}.name"), errs);
                    let Some(name) = name.as_str().filter(|n| ATTACKS.contains(n)) else {
                        continue;
                    };
                    let mut fields: Vec<&Field> = attack_params(name).iter().collect();
                    let common = [req("name", Ty::Str), f("seed_key", Ty::Str), f("label", Ty::Str)];
                    fields.extend(common.iter());
                    check_fields(t, &fields, &p, errs);
                }
            }
            None => bad("an array of tables ([[attacks]])", errs),
        },
    }
}

fn check_table(t: &toml::Table, fields: &[Field], path: &str, errs: &mut Vec<String>) {
    check_fields(t, &fields.iter().collect::<Vec<_>>(), path, errs)
}

fn check_fields(t: &toml::Table, fields: &[&Field], path: &str, errs: &mut Vec<String>) {
    for (k, v) in t {
        match fields.iter().find(|f| f.name == k) {
            Some(field) => check_value(v, field.ty, &join(path, k), errs),
            None => errs.push(format!("`{}`: unknown key", join(path, k))),
        }
    }
    for field in fields {
        if field.required && !t.contains_key(field.name) {
            errs.push(format!("`{}`: required field missing", join(path, field.name)));
        }
    }
}

fn set_path(t: &mut toml::Table, keys: &[&str], value: Value) -> std::result::Result<(), String> {
    let (first, rest) = keys.split_first().expect("split yields a key");
    if rest.is_empty() {
        if t.get(*first).is_some_and(|v| v.is_table() || v.is_array()) {
            return Err("only scalar fields may be overridden".into());
        }
        t.insert(first.to_string(), value);
        return Ok(());
    }
    match t.entry(first.to_string()).or_insert_with(|| Value::Table(Default::default())) {
        Value::Table(inner) => set_path(inner, rest, value),
        _ => Err(format!("`{first}` is not a table")),
    }
}

/// Applies `a.b.c=value` overrides. Values parse as TOML scalars, falling
/// back to a bare string; tables and arrays are refused.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<()> {
    let mut errs = Vec::new();
    for o in overrides {
        let Some((path, raw)) = o.split_once('=') else {
            errs.push(format!("override `{o}` is not of the form key.path=value"));
            continue;
        };
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => Value::String(raw.to_owned()),
        };
        if value.is_table() || value.is_array() {
            errs.push(format!("override `{path}`: only scalar values may be overridden"));
            continue;
        }
        let keys: Vec<&str> = path.trim().split('.').collect();
        if let Err(e) = set_path(doc, &keys, value) {
            errs.push(format!("override `{path}`: {e}"));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Toy,
    Dir,
}

fn d_count() -> usize {
    20
}
fn d_size() -> usize {
    64
}
fn d_null() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(default)]
    pub source: DataSource,
    #[serde(default)]
    pub images_dir: Option<PathBuf>,
    #[serde(default)]
    pub null_dir: Option<PathBuf>,
    #[serde(default = "d_count")]
    pub count: usize,
    #[serde(default = "d_size")]
    pub size: usize,
    #[serde(default = "d_null")]
    pub null_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn d_bits() -> usize {
    32
}
fn d_dct() -> f64 {
    DWT_DCT_STEP
}
fn d_svd() -> f64 {
    DWT_DCT_SVD_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkConfig {
    pub schemes: Vec<Scheme>,
    #[serde(default = "d_bits")]
    pub payload_bits: usize,
    #[serde(default = "d_dct")]
    pub dwt_dct_step: f64,
    #[serde(default = "d_svd")]
    pub dwt_dct_svd_step: f64,
    #[serde(default)]
    pub ring_radius: Option<f64>,
    #[serde(default)]
    pub external: Option<ExternalScheme>,
}

fn d_strength() -> f64 {
    0.15
}
fn yes() -> bool {
    true
}
fn d_router() -> RouterMode {
    RouterMode::ViewGuided
}

/// Attack settings not already fixed by the backend section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RavenSection {
    #[serde(default = "d_strength")]
    pub strength: f64,
    #[serde(default)]
    pub translation: TranslationRange,
    #[serde(default)]
    pub sign_mode: SignMode,
    #[serde(default)]
    pub boundary: BoundaryMode,
    #[serde(default = "yes")]
    pub color_transfer: bool,
    #[serde(default = "yes")]
    pub contrast_transfer: bool,
    #[serde(default = "d_router")]
    pub router: RouterMode,
    #[serde(default)]
    pub forced_delta_px: Option<[f64; 2]>,
}

impl Default for RavenSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn d_fpr() -> f64 {
    0.01
}
fn d_feature_seed() -> u64 {
    DEFAULT_FEATURE_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "d_fpr")]
    pub fpr: f64,
    #[serde(default = "d_feature_seed")]
    pub feature_seed: u64,
    #[serde(default = "yes")]
    pub plots: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn tiny() -> BackendSpec {
    BackendSpec::tiny()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default = "tiny")]
    pub backend: BackendSpec,
    #[serde(default)]
    pub data: DataConfig,
    pub watermark: WatermarkConfig,
    #[serde(default)]
    pub raven: RavenSection,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parses, applies overrides, and validates; every problem is reported in
    /// one [`Error::Config`].
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        apply_overrides(&mut doc, overrides)?;
        let mut errs = Vec::new();
        check_table(&doc, TOP, "", &mut errs);
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let cfg: RunConfig = Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if i64::from(self.version) != CONFIG_VERSION {
            errs.push(format!("`version`: only version {CONFIG_VERSION} is supported, got {}", self.version));
        }
        if self.backend.steps == 0 {
            errs.push("`backend.steps`: must be at least 1".into());
        }
        if !(self.backend.guidance.is_finite() && self.backend.guidance >= 0.0) {
            errs.push("`backend.guidance`: must be finite and non-negative".into());
        }
        let d = &self.data;
        if d.count == 0 {
            errs.push("`data.count`: must be at least 1".into());
        }
        if d.size < 8 {
            errs.push(format!("`data.size`: must be at least 8, got {}", d.size));
        }
        if d.source == DataSource::Dir && d.images_dir.is_none() {
            errs.push("`data.images_dir`: required when `data.source` is \"dir\"".into());
        }
        let w = &self.watermark;
        if w.schemes.is_empty() {
            errs.push("`watermark.schemes`: list at least one scheme".into());
        }
        let unique: BTreeSet<_> = w.schemes.iter().collect();
        if unique.len() != w.schemes.len() {
            errs.push("`watermark.schemes`: duplicate entries".into());
        }
        if !PAYLOAD_LENGTHS.contains(&w.payload_bits) {
            errs.push(format!("`watermark.payload_bits`: must be one of {PAYLOAD_LENGTHS:?}, got {}", w.payload_bits));
        }
        for (name, v) in [("dwt_dct_step", w.dwt_dct_step), ("dwt_dct_svd_step", w.dwt_dct_svd_step)] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("`watermark.{name}`: must be positive"));
            }
        }
        if let Some(r) = w.ring_radius {
            if !(r > 0.0) {
                errs.push("`watermark.ring_radius`: must be positive".into());
            }
        }
        if w.schemes.contains(&Scheme::External) && w.external.is_none() {
            errs.push("`watermark.external`: required when `external` is listed in schemes".into());
        }
        if let Err(Error::Config(e)) = self.raven_config().validate() {
            errs.extend(e.into_iter().map(|m| format!("`raven`: {m}")));
        }
        let mut labels = BTreeSet::new();
        for a in &self.attacks {
            if !labels.insert(a.label()) {
                errs.push(format!("`attacks`: label `{}` used twice; set `label` to tell them apart", a.label()));
            }
        }
        if !(self.eval.fpr > 0.0 && self.eval.fpr < 1.0) {
            errs.push(format!("`eval.fpr`: must be in (0, 1), got {}", self.eval.fpr));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// The attack configuration implied by the backend and raven sections.
    pub fn raven_config(&self) -> RavenConfig {
        let r = &self.raven;
        RavenConfig {
            strength: r.strength,
            steps: self.backend.steps,
            guidance: self.backend.guidance,
            translation: r.translation,
            sign_mode: r.sign_mode,
            noising_mode: self.backend.noising_mode,
            boundary: r.boundary,
            color_transfer: r.color_transfer,
            contrast_transfer: r.contrast_transfer,
            router: r.router,
            seed: self.seed,
            forced_delta_px: r.forced_delta_px,
        }
    }

    pub fn needs_backend(&self) -> bool {
        self.watermark.schemes.contains(&Scheme::FourierRing) || self.attacks.iter().any(|a| a.kind.needs_backend())
    }

    /// Canonical JSON form, used for hashing.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// A small configuration exercising every scheme family on the toy set.
pub fn demo_config() -> &'static str {
    r#"version = 1
seed = 7

[backend]
name = "tiny"
steps = 50
guidance = 2.5
noising_mode = "stochastic"

[data]
source = "toy"
count = 12
size = 64
null_count = 100

[watermark]
schemes = ["dwt_dct", "dwt_dct_svd", "fourier_ring"]
payload_bits = 32

[raven]
strength = 0.15
translation = { min_px = 24, max_px = 32 }

[[attacks]]
name = "raven"

[[attacks]]
name = "regen"
strength = 0.15

[[attacks]]
name = "jpeg"
quality = 25

[[attacks]]
name = "brightness"
factor = 0.5

[eval]
fpr = 0.01
"#
}
