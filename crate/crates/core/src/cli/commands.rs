//! The six subcommands. Every stage writes into its own directory under the
//! run root and leaves a manifest there.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{demo_config, DataSource, RunConfig};
use super::manifest::{inventory, RunManifest};
use crate::baseline::apply_attack_traced;
use crate::buffer::{hex_digest, ImageBuffer};
use crate::diffusion::{load_backend, Backend};
use crate::error::{Error, Result};
use crate::eval::plot::write_plots;
use crate::eval::report::{evaluate_grid, EvalReport, GridContext, SchemeSetup, Threshold, CLEAN_LABEL};
use crate::eval::{calibrate_threshold, tpr_at_fpr, RandomPatchEmbedding, MIN_NULL_SCORES};
use crate::rng::derive_stream;
use crate::toy::{toy_image, toy_set};
use crate::watermark::ring::{default_radius, RingKey};
use crate::watermark::{self, embed_fourier_ring, generate_unmarked, Decision, Payload, Scheme, WatermarkKey};

pub const EMBED_DIR: &str = "embed";
pub const ATTACK_DIR: &str = "attack";
pub const CALIBRATE_DIR: &str = "calibrate";
pub const DETECT_DIR: &str = "detect";
pub const REPORT_DIR: &str = "report";

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Some per-image work failed and was recorded.
    Partial(usize),
}

impl Outcome {
    fn merge(self, other: Outcome) -> Outcome {
        match (self, other) {
            (Outcome::Partial(a), Outcome::Partial(b)) => Outcome::Partial(a + b),
            (Outcome::Partial(a), _) | (_, Outcome::Partial(a)) => Outcome::Partial(a),
            _ => Outcome::Complete,
        }
    }

    fn from_failures(n: usize) -> Outcome {
        if n == 0 {
            Outcome::Complete
        } else {
            Outcome::Partial(n)
        }
    }
}

/// A validated configuration bound to an output root.
pub struct Run {
    pub config: RunConfig,
    pub root: PathBuf,
    pub backend: Option<Backend>,
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// PNG files in `dir`, sorted by name.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

fn load_pngs(dir: &Path, limit: Option<usize>) -> Result<Vec<ImageBuffer>> {
    let mut files = png_files(dir)?;
    if let Some(n) = limit {
        files.truncate(n);
    }
    if files.is_empty() {
        return Err(Error::invalid(format!("no PNG images in {}", dir.display())));
    }
    files.par_iter().map(ImageBuffer::load_png).collect()
}

fn prompt_seed(root: u64, key: &str) -> Result<u64> {
    Ok(derive_stream(root, key)?.next_u64())
}

impl Run {
    pub fn new(config: RunConfig, root: impl Into<PathBuf>) -> Result<Self> {
        let backend = if config.needs_backend() {
            Some(load_backend(&config.backend)?)
        } else {
            None
        };
        Ok(Self {
            config,
            root: root.into(),
            backend,
        })
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    fn backend(&self) -> Result<&Backend> {
        self.backend
            .as_ref()
            .ok_or_else(|| Error::Backend("this configuration needs a diffusion backend".into()))
    }

    fn manifest(&self, stage: &str) -> Result<RunManifest> {
        RunManifest::new(stage, &self.config, self.backend.as_ref())
    }

    fn source_images(&self) -> Result<Vec<ImageBuffer>> {
        let d = &self.config.data;
        match d.source {
            DataSource::Toy => toy_set(self.config.seed, d.count, (d.size, d.size)),
            DataSource::Dir => {
                let dir = d.images_dir.as_ref().expect("validated");
                load_pngs(dir, Some(d.count))
            }
        }
    }

    fn latent_shape(&self) -> Result<(usize, usize, usize)> {
        let s = self.config.data.size;
        Ok(self.backend()?.latent_shape(s, s))
    }

    /// The run's key for `scheme`, drawn from stream `key:<scheme>`.
    pub fn make_key(&self, scheme: Scheme) -> Result<WatermarkKey> {
        let w = &self.config.watermark;
        let mut rng = derive_stream(self.config.seed, &format!("key:{scheme}"))?;
        let key = match scheme {
            Scheme::DwtDct | Scheme::DwtDctSvd => {
                let mut k = WatermarkKey::random_bits(scheme, w.payload_bits, &mut rng)?;
                k.strength = if scheme == Scheme::DwtDct {
                    w.dwt_dct_step
                } else {
                    w.dwt_dct_svd_step
                };
                k
            }
            Scheme::FourierRing => {
                let (c, h, wd) = self.latent_shape()?;
                let radius = w.ring_radius.unwrap_or_else(|| default_radius(h, wd));
                let base_seed = rng.next_u64();
                WatermarkKey {
                    scheme,
                    payload: Payload::Ring(RingKey::generate((c, h, wd), c - 1, radius, 1.0, base_seed)?),
                    strength: 1.0,
                    seed: base_seed,
                }
            }
            Scheme::External => WatermarkKey {
                scheme,
                payload: Payload::External(w.external.clone().expect("validated")),
                strength: 1.0,
                seed: rng.next_u64(),
            },
        };
        key.validate()?;
        Ok(key)
    }

    fn key_path(&self, scheme: Scheme) -> PathBuf {
        self.stage_dir(EMBED_DIR).join("keys").join(format!("{scheme}.json"))
    }

    pub fn load_key(&self, scheme: Scheme) -> Result<WatermarkKey> {
        let path = self.key_path(scheme);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        WatermarkKey::from_json(&text)
    }

    fn marked_dir(&self, scheme: Scheme) -> PathBuf {
        self.stage_dir(EMBED_DIR).join("marked").join(scheme.name())
    }

    fn originals_dir(&self) -> PathBuf {
        self.stage_dir(EMBED_DIR).join("originals")
    }

    pub fn load_marked(&self, scheme: Scheme) -> Result<Vec<ImageBuffer>> {
        load_pngs(&self.marked_dir(scheme), None)
    }

    fn attacked_dir(&self, scheme: Scheme, label: &str) -> PathBuf {
        self.stage_dir(ATTACK_DIR).join(scheme.name()).join(label)
    }

    /// Writes originals, marked images and keys.
    pub fn embed(&self) -> Result<Outcome> {
        let dir = self.stage_dir(EMBED_DIR);
        mkdir(&dir.join("keys"))?;
        let mut manifest = self.manifest("embed")?;
        let mut originals: Option<Vec<ImageBuffer>> = None;
        for &scheme in &self.config.watermark.schemes {
            let key = self.make_key(scheme)?;
            let out = self.marked_dir(scheme);
            mkdir(&out)?;
            let timed: Vec<(String, f64)> = if scheme == Scheme::FourierRing {
                let backend = self.backend()?;
                let Payload::Ring(ring) = &key.payload else { unreachable!() };
                (0..self.config.data.count)
                    .into_par_iter()
                    .map(|i| {
                        let t = Instant::now();
                        let id = format!("gen{i:04}");
                        let seed = prompt_seed(self.config.seed, &format!("prompt:{i}"))?;
                        let x = embed_fourier_ring(seed, ring, backend)?.with_source_id(id.clone());
                        x.save_png(out.join(format!("{id}.png")))?;
                        Ok((id, t.elapsed().as_secs_f64()))
                    })
                    .collect::<Result<_>>()?
            } else {
                if originals.is_none() {
                    let imgs: Vec<ImageBuffer> = self.source_images()?.iter().map(ImageBuffer::quantized).collect();
                    let od = self.originals_dir();
                    mkdir(&od)?;
                    for x in &imgs {
                        x.save_png(od.join(format!("{}.png", x.source_id)))?;
                    }
                    originals = Some(imgs);
                }
                originals
                    .as_ref()
                    .expect("set above")
                    .par_iter()
                    .map(|x| {
                        let t = Instant::now();
                        let y = watermark::embed(x, &key)?;
                        y.save_png(out.join(format!("{}.png", x.source_id)))?;
                        Ok((x.source_id.clone(), t.elapsed().as_secs_f64()))
                    })
                    .collect::<Result<_>>()?
            };
            for (id, s) in timed {
                manifest.wall_clock_s.insert(format!("{scheme}/{id}"), s);
            }
            let path = self.key_path(scheme);
            std::fs::write(&path, key.to_json()?).map_err(|e| Error::io(&path, e))?;
            log::info!("embed: {scheme} done");
        }
        manifest.write(&dir)?;
        Ok(Outcome::Complete)
    }

    /// Applies every configured attack to every marked image.
    pub fn attack(&self) -> Result<Outcome> {
        let dir = self.stage_dir(ATTACK_DIR);
        mkdir(&dir)?;
        let mut manifest = self.manifest("attack")?;
        let raven = self.config.raven_config();
        let mut failed = 0;
        for &scheme in &self.config.watermark.schemes {
            let marked = self.load_marked(scheme)?;
            for spec in &self.config.attacks {
                let label = spec.label();
                let out = self.attacked_dir(scheme, &label);
                mkdir(&out)?;
                let results: Vec<(String, Result<f64>)> = marked
                    .par_iter()
                    .map(|x| {
                        let t = Instant::now();
                        let r = apply_attack_traced(x, spec, self.config.seed, self.backend.as_ref(), &raven)
                            .and_then(|(y, trace)| {
                                y.save_png(out.join(format!("{}.png", x.source_id)))?;
                                if let Some(trace) = trace {
                                    let td = out.join("traces");
                                    mkdir(&td)?;
                                    let p = td.join(format!("{}.json", x.source_id));
                                    std::fs::write(&p, trace.to_json()?).map_err(|e| Error::io(&p, e))?;
                                }
                                Ok(t.elapsed().as_secs_f64())
                            });
                        (x.source_id.clone(), r)
                    })
                    .collect();
                let mut failures = BTreeMap::new();
                for (id, r) in results {
                    match r {
                        Ok(s) => {
                            manifest.wall_clock_s.insert(format!("{scheme}/{label}/{id}"), s);
                        }
                        Err(e) => {
                            log::warn!("attack {label} on {scheme}/{id} failed: {e}");
                            failures.insert(id, e.to_string());
                        }
                    }
                }
                if !failures.is_empty() {
                    failed += failures.len();
                    write_json(&out.join("failures.json"), &failures)?;
                }
                log::info!("attack: {scheme}/{label} done");
            }
        }
        manifest.write(&dir)?;
        Ok(Outcome::from_failures(failed))
    }

    /// Unmarked images for `scheme`'s null distribution.
    fn null_images(&self, scheme: Scheme) -> Result<Vec<ImageBuffer>> {
        let d = &self.config.data;
        if scheme == Scheme::FourierRing {
            let backend = self.backend()?;
            let shape = self.latent_shape()?;
            return (0..d.null_count)
                .into_par_iter()
                .map(|i| {
                    let seed = prompt_seed(self.config.seed, &format!("null-prompt:{i}"))?;
                    Ok(generate_unmarked(seed, shape, backend)?.with_source_id(format!("null{i:04}")))
                })
                .collect();
        }
        if let Some(dir) = &d.null_dir {
            return load_pngs(dir, Some(d.null_count));
        }
        (0..d.null_count)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive_stream(self.config.seed, &format!("null:{i}"))?;
                Ok(toy_image((d.size, d.size), &mut rng, &format!("null{i:04}"))?.quantized())
            })
            .collect()
    }

    /// Identifies the null set and key a threshold was calibrated against.
    pub fn null_hash(&self, scheme: Scheme, key: &WatermarkKey) -> Result<String> {
        let d = &self.config.data;
        let source = if scheme == Scheme::FourierRing {
            serde_json::json!({"kind": "generated", "size": d.size})
        } else if let Some(dir) = &d.null_dir {
            serde_json::json!({"kind": "dir", "files": inventory(dir)?})
        } else {
            serde_json::json!({"kind": "toy", "size": d.size})
        };
        let desc = serde_json::json!({
            "scheme": scheme,
            "seed": self.config.seed,
            "count": d.null_count,
            "source": source,
            "key": key.to_json()?,
            "backend": self.backend.as_ref().map(Backend::fingerprint),
            "fpr": self.config.eval.fpr,
        });
        Ok(hex_digest(desc.to_string().as_bytes()))
    }

    fn thresholds_path(&self) -> PathBuf {
        self.stage_dir(CALIBRATE_DIR).join("thresholds.json")
    }

    fn null_scores_path(&self) -> PathBuf {
        self.stage_dir(CALIBRATE_DIR).join("null_scores.json")
    }

    /// Loads cached thresholds, refusing any whose null-set hash no longer
    /// matches the configuration.
    pub fn load_thresholds(&self) -> Result<BTreeMap<Scheme, Threshold>> {
        let list: Vec<Threshold> = read_json(&self.thresholds_path())?;
        let mut out = BTreeMap::new();
        for &scheme in &self.config.watermark.schemes {
            let t = list
                .iter()
                .find(|t| t.scheme == scheme)
                .ok_or_else(|| Error::StaleCache(format!("no threshold for {scheme}; run calibrate")))?;
            let expected = self.null_hash(scheme, &self.load_key(scheme)?)?;
            if t.null_hash != expected {
                return Err(Error::StaleCache(format!(
                    "threshold for {scheme} was calibrated on a different null set; rerun calibrate with --recalibrate"
                )));
            }
            out.insert(scheme, t.clone());
        }
        Ok(out)
    }

    pub fn calibrate(&self, recalibrate: bool) -> Result<Outcome> {
        let d = &self.config.data;
        if d.null_count < MIN_NULL_SCORES {
            return Err(Error::TooFewSamples {
                minimum: MIN_NULL_SCORES,
                got: d.null_count,
            });
        }
        if self.thresholds_path().exists() {
            match self.load_thresholds() {
                Ok(_) if !recalibrate => {
                    log::info!("calibrate: cached thresholds match the null set");
                    return Ok(Outcome::Complete);
                }
                Err(e @ Error::StaleCache(_)) if !recalibrate => return Err(e),
                _ => {}
            }
        }
        let dir = self.stage_dir(CALIBRATE_DIR);
        mkdir(&dir)?;
        let mut manifest = self.manifest("calibrate")?;
        let fpr = self.config.eval.fpr;
        let mut thresholds = Vec::new();
        let mut all_scores: BTreeMap<Scheme, Vec<(String, f64)>> = BTreeMap::new();
        for &scheme in &self.config.watermark.schemes {
            let key = self.load_key(scheme)?;
            let t0 = Instant::now();
            let nulls = self.null_images(scheme)?;
            let scores: Vec<(String, f64)> = nulls
                .par_iter()
                .map(|x| Ok((x.source_id.clone(), watermark::score(x, &key, self.backend.as_ref())?.0)))
                .collect::<Result<_>>()?;
            let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
            let value = calibrate_threshold(&values, fpr)?;
            thresholds.push(Threshold {
                scheme,
                value,
                fpr,
                n_null: values.len(),
                achieved_fpr: tpr_at_fpr(&values, value)?,
                null_hash: self.null_hash(scheme, &key)?,
            });
            manifest.wall_clock_s.insert(scheme.to_string(), t0.elapsed().as_secs_f64());
            all_scores.insert(scheme, scores);
            log::info!("calibrate: {scheme} threshold {value}");
        }
        write_json(&self.thresholds_path(), &thresholds)?;
        write_json(&self.null_scores_path(), &all_scores)?;
        manifest.write(&dir)?;
        Ok(Outcome::Complete)
    }

    /// Attack labels with a directory of outputs for `scheme`.
    fn attacked_labels(&self, scheme: Scheme) -> Vec<String> {
        self.config
            .attacks
            .iter()
            .map(|a| a.label())
            .filter(|l| self.attacked_dir(scheme, l).is_dir())
            .collect()
    }

    pub fn detect(&self) -> Result<Outcome> {
        let thresholds = self.load_thresholds()?;
        let dir = self.stage_dir(DETECT_DIR);
        mkdir(&dir)?;
        let manifest = self.manifest("detect")?;
        let mut records = Vec::new();
        let mut failed = 0;
        for &scheme in &self.config.watermark.schemes {
            let key = self.load_key(scheme)?;
            let threshold = thresholds[&scheme].value;
            let mut sets = vec![(CLEAN_LABEL.to_owned(), self.load_marked(scheme)?)];
            for label in self.attacked_labels(scheme) {
                sets.push((label.clone(), load_pngs(&self.attacked_dir(scheme, &label), None)?));
            }
            for (label, images) in sets {
                let recs: Vec<ScoreRecord> = images
                    .par_iter()
                    .map(|x| {
                        let mut rec = ScoreRecord {
                            scheme,
                            attack: label.clone(),
                            image_id: x.source_id.clone(),
                            statistic: None,
                            detected: None,
                            decoded: None,
                            error: None,
                        };
                        match watermark::detect(x, &key, self.backend.as_ref(), threshold) {
                            Ok(o) => {
                                rec.statistic = Some(o.statistic);
                                rec.detected = Some(o.decision == Decision::Detected);
                                rec.decoded = o.decoded.map(|b| b.iter().map(|&v| if v { '1' } else { '0' }).collect());
                            }
                            Err(e) => rec.error = Some(e.to_string()),
                        }
                        rec
                    })
                    .collect();
                failed += recs.iter().filter(|r| r.error.is_some()).count();
                records.extend(recs);
            }
            log::info!("detect: {scheme} done");
        }
        write_json(&dir.join("scores.json"), &records)?;
        manifest.write(&dir)?;
        Ok(Outcome::from_failures(failed))
    }

    pub fn report(&self) -> Result<Outcome> {
        let thresholds = self.load_thresholds()?;
        let null_scores: BTreeMap<Scheme, Vec<(String, f64)>> = read_json(&self.null_scores_path())?;
        let originals = if self.config.watermark.schemes.iter().any(|s| *s != Scheme::FourierRing) {
            Some(load_pngs(&self.originals_dir(), None)?)
        } else {
            None
        };
        let mut setups = Vec::new();
        for &scheme in &self.config.watermark.schemes {
            setups.push(SchemeSetup {
                key: self.load_key(scheme)?,
                threshold: thresholds[&scheme].clone(),
                marked: self.load_marked(scheme)?,
                originals: if scheme == Scheme::FourierRing {
                    None
                } else {
                    originals.clone()
                },
                null_scores: null_scores.get(&scheme).cloned().unwrap_or_default(),
            });
        }
        let extractor = RandomPatchEmbedding::new(self.config.eval.feature_seed, 8, 16)?;
        let lookup = |scheme: Scheme, label: &str, id: &str| {
            let p = self.attacked_dir(scheme, label).join(format!("{id}.png"));
            p.is_file().then(|| ImageBuffer::load_png(&p).ok()).flatten()
        };
        let ctx = GridContext {
            seed: self.config.seed,
            fpr: self.config.eval.fpr,
            raven: self.config.raven_config(),
            backend: self.backend.as_ref(),
            extractor: &extractor,
            attacked: Some(&lookup),
        };
        let report = evaluate_grid(&setups, &self.config.attacks, &ctx)?;
        let dir = self.stage_dir(REPORT_DIR);
        mkdir(&dir)?;
        write_report_bundle(&report, &dir)?;
        if self.config.eval.plots {
            let plots = dir.join("plots");
            mkdir(&plots)?;
            write_plots(&report, &plots)?;
        }
        self.manifest("report")?.write(&dir)?;
        let failures = report.failure_count();
        if failures > 0 {
            log::warn!("report: {failures} per-image failures recorded in the cells");
        }
        Ok(Outcome::from_failures(failures))
    }

    /// embed, attack, calibrate, detect and report in sequence.
    pub fn all(&self) -> Result<Outcome> {
        let mut o = self.embed()?;
        o = o.merge(self.attack()?);
        o = o.merge(self.calibrate(false)?);
        o = o.merge(self.detect()?);
        Ok(o.merge(self.report()?))
    }
}

/// One detection in `detect/scores.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub scheme: Scheme,
    pub attack: String,
    pub image_id: String,
    pub statistic: Option<f64>,
    pub detected: Option<bool>,
    pub decoded: Option<String>,
    pub error: Option<String>,
}

/// Writes `report.json`, `report.csv` and `table.txt` into `dir`.
pub fn write_report_bundle(report: &EvalReport, dir: &Path) -> Result<()> {
    let json = dir.join("report.json");
    std::fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))?;
    write_report_tables(report, dir)
}

fn write_report_tables(report: &EvalReport, dir: &Path) -> Result<()> {
    let csv = dir.join("report.csv");
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    let table = dir.join("table.txt");
    std::fs::write(&table, report.render_table()).map_err(|e| Error::io(&table, e))
}

/// Rebuilds `report.csv` and `table.txt` beside a persisted `report.json`.
pub fn regenerate_report(report_json: &Path) -> Result<Outcome> {
    let text = std::fs::read_to_string(report_json).map_err(|e| Error::io(report_json, e))?;
    let report = EvalReport::from_json(&text)?;
    let dir = report_json.parent().unwrap_or(Path::new("."));
    write_report_tables(&report, dir)?;
    Ok(Outcome::from_failures(report.failure_count()))
}

/// Writes the demo configuration into `root` (if absent) and returns its path.
pub fn write_demo_config(root: &Path) -> Result<PathBuf> {
    mkdir(root)?;
    let path = root.join("config.toml");
    if !path.exists() {
        std::fs::write(&path, demo_config()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(path)
}
