//! The scheme x attack evaluation grid and its serialised report.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use super::frechet::{frechet_distance, FrechetStats};
use super::quality::{psnr, ssim};
use super::{mean_ci95, tpr_at_fpr};
use crate::attack::RavenConfig;
use crate::baseline::{apply_attack, AttackSpec};
use crate::buffer::ImageBuffer;
use crate::diffusion::Backend;
use crate::error::{Error, Result};
use crate::watermark::{score, Scheme, WatermarkKey};

pub const REPORT_VERSION: u32 = 1;

/// PSNR values are capped here so identical images stay serialisable.
pub const PSNR_CAP: f64 = 100.0;

pub const CLEAN_LABEL: &str = "none";

/// JSON Schema (draft 7) that every serialized report satisfies.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub scheme: Scheme,
    pub value: f64,
    pub fpr: f64,
    pub n_null: usize,
    pub achieved_fpr: f64,
    /// Hash of the null scores the threshold was derived from.
    pub null_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    CleanMarked,
    AttackedMarked,
    UnmarkedNull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub image_id: String,
    pub condition: Condition,
    pub statistic: f64,
    pub scheme: Scheme,
    pub attack: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scheme: Scheme,
    pub attack: String,
    /// `bit_accuracy` for bitstream schemes, `tpr_at_fpr` otherwise.
    pub metric: String,
    pub value: Option<f64>,
    pub n: usize,
    pub ci95: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub frechet: Option<f64>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_version: u32,
    pub backend: Option<String>,
    pub seed: u64,
    pub fpr: f64,
    pub feature_extractor: String,
    pub images: usize,
    pub attacks: Vec<AttackSpec>,
    pub thresholds: Vec<Threshold>,
    pub cells: Vec<Cell>,
    pub samples: Vec<ScoreSample>,
}

/// One scheme ready for evaluation.
pub struct SchemeSetup {
    pub key: WatermarkKey,
    pub threshold: Threshold,
    /// Marked images, and the unmarked originals where they exist.
    pub marked: Vec<ImageBuffer>,
    pub originals: Option<Vec<ImageBuffer>>,
    pub null_scores: Vec<(String, f64)>,
}

pub struct GridContext<'a> {
    pub seed: u64,
    pub fpr: f64,
    pub raven: RavenConfig,
    pub backend: Option<&'a Backend>,
    pub extractor: &'a dyn FeatureExtractor,
    /// Previously attacked images by `(scheme, attack label, image id)`;
    /// attacks are recomputed for anything it does not return.
    pub attacked: Option<&'a AttackedLookup<'a>>,
}

pub type AttackedLookup<'a> = dyn Fn(Scheme, &str, &str) -> Option<ImageBuffer> + Sync + 'a;

fn metric_name(s: Scheme) -> &'static str {
    if s.is_bitstream() {
        "bit_accuracy"
    } else {
        "tpr_at_fpr"
    }
}

struct ImageResult {
    id: String,
    statistic: f64,
    psnr: Option<f64>,
    ssim: Option<f64>,
    features: Option<Vec<f64>>,
}

fn score_one(
    setup: &SchemeSetup,
    reference: Option<&ImageBuffer>,
    x: &ImageBuffer,
    ctx: &GridContext<'_>,
) -> Result<ImageResult> {
    let (statistic, _) = score(x, &setup.key, ctx.backend)?;
    if !statistic.is_finite() {
        return Err(Error::NonFinite {
            stage: "detection statistic".into(),
        });
    }
    let (p, s) = match reference {
        Some(r) => (Some(psnr(r, x)?.min(PSNR_CAP)), Some(ssim(r, x)?)),
        None => (None, None),
    };
    Ok(ImageResult {
        id: x.source_id.clone(),
        statistic,
        psnr: p,
        ssim: s,
        features: Some(ctx.extractor.extract(x)?),
    })
}

fn build_cell(
    setup: &SchemeSetup,
    attack: &str,
    results: Vec<(String, Result<ImageResult>)>,
    marked_stats: Option<&FrechetStats>,
    condition: Condition,
    samples: &mut Vec<ScoreSample>,
) -> Cell {
    let scheme = setup.key.scheme;
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push(CellFailure {
                image_id: id,
                error: e.to_string(),
            }),
        }
    }
    for r in &ok {
        samples.push(ScoreSample {
            image_id: r.id.clone(),
            condition,
            statistic: r.statistic,
            scheme,
            attack: (condition == Condition::AttackedMarked).then(|| attack.to_owned()),
        });
    }
    let stats: Vec<f64> = ok.iter().map(|r| r.statistic).collect();
    let (value, ci95) = if stats.is_empty() {
        (None, None)
    } else if scheme.is_bitstream() {
        let (m, ci) = mean_ci95(&stats).expect("nonempty");
        (Some(m), Some(ci))
    } else {
        let t = tpr_at_fpr(&stats, setup.threshold.value).expect("nonempty");
        (Some(t), Some(1.96 * (t * (1.0 - t) / stats.len() as f64).sqrt()))
    };
    let collect = |f: &dyn Fn(&ImageResult) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = ok.iter().filter_map(f).collect();
        mean_ci95(&v).map(|(m, _)| m)
    };
    let frechet = match marked_stats {
        Some(ms) if ok.len() >= 2 => {
            let rows: Vec<Vec<f64>> = ok.iter().filter_map(|r| r.features.clone()).collect();
            FrechetStats::from_features(&rows)
                .and_then(|s| frechet_distance(ms, &s))
                .ok()
        }
        _ => None,
    };
    Cell {
        scheme,
        attack: attack.to_owned(),
        metric: metric_name(scheme).to_owned(),
        value,
        n: ok.len(),
        ci95,
        psnr: collect(&|r| r.psnr),
        ssim: collect(&|r| r.ssim),
        frechet,
        failures,
    }
}

/// Runs every attack on every marked image of every scheme and aggregates.
/// Per-image failures are recorded in their cell; the grid always completes.
pub fn evaluate_grid(setups: &[SchemeSetup], attacks: &[AttackSpec], ctx: &GridContext<'_>) -> Result<EvalReport> {
    let mut cells = Vec::new();
    let mut samples = Vec::new();
    let mut thresholds = Vec::new();
    let mut images = 0;
    for setup in setups {
        thresholds.push(setup.threshold.clone());
        images = images.max(setup.marked.len());
        for (id, s) in &setup.null_scores {
            samples.push(ScoreSample {
                image_id: id.clone(),
                condition: Condition::UnmarkedNull,
                statistic: *s,
                scheme: setup.key.scheme,
                attack: None,
            });
        }
        let marked_features: Vec<Vec<f64>> = setup
            .marked
            .par_iter()
            .map(|x| ctx.extractor.extract(x))
            .collect::<Result<_>>()?;
        let marked_stats = if marked_features.len() >= 2 {
            Some(FrechetStats::from_features(&marked_features)?)
        } else {
            None
        };

        let clean: Vec<(String, Result<ImageResult>)> = setup
            .marked
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let orig = setup.originals.as_ref().map(|o| &o[i]);
                (x.source_id.clone(), score_one(setup, orig, x, ctx))
            })
            .collect();
        let mut cell = build_cell(setup, CLEAN_LABEL, clean, None, Condition::CleanMarked, &mut samples);
        cell.frechet = setup.originals.as_ref().and_then(|o| {
            let rows: Vec<Vec<f64>> = o.iter().filter_map(|x| ctx.extractor.extract(x).ok()).collect();
            let os = FrechetStats::from_features(&rows).ok()?;
            frechet_distance(&os, marked_stats.as_ref()?).ok()
        });
        cells.push(cell);

        for spec in attacks {
            let label = spec.label();
            let results: Vec<(String, Result<ImageResult>)> = setup
                .marked
                .par_iter()
                .map(|x| {
                    let cached = ctx.attacked.and_then(|f| f(setup.key.scheme, &label, &x.source_id));
                    let r = match cached {
                        Some(y) => Ok(y),
                        None => apply_attack(x, spec, ctx.seed, ctx.backend, &ctx.raven),
                    }
                    .and_then(|y| score_one(setup, Some(x), &y, ctx));
                    (x.source_id.clone(), r)
                })
                .collect();
            cells.push(build_cell(
                setup,
                &label,
                results,
                marked_stats.as_ref(),
                Condition::AttackedMarked,
                &mut samples,
            ));
        }
    }
    Ok(EvalReport {
        report_version: REPORT_VERSION,
        backend: ctx.backend.map(|b| b.fingerprint()),
        seed: ctx.seed,
        fpr: ctx.fpr,
        feature_extractor: ctx.extractor.name(),
        images,
        attacks: attacks.to_vec(),
        thresholds,
        cells,
        samples,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.report_version != REPORT_VERSION {
            return Err(Error::Serde(format!(
                "report version {} not supported (expected {REPORT_VERSION})",
                r.report_version
            )));
        }
        Ok(r)
    }

    pub fn failure_count(&self) -> usize {
        self.cells.iter().map(|c| c.failures.len()).sum()
    }

    /// `scheme,attack,metric,value,n,ci95`, one row per cell metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scheme,attack,metric,value,n,ci95\n");
        for c in &self.cells {
            let rows = [
                (c.metric.as_str(), c.value, c.ci95),
                ("psnr", c.psnr, None),
                ("ssim", c.ssim, None),
                ("frechet", c.frechet, None),
            ];
            for (metric, value, ci) in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.scheme,
                    c.attack,
                    metric,
                    fmt_opt(value),
                    c.n,
                    fmt_opt(ci)
                );
            }
        }
        out
    }

    /// Plain-text tables: detection metric, then PSNR / Fréchet distance.
    pub fn render_table(&self) -> String {
        let mut schemes: Vec<Scheme> = Vec::new();
        let mut attacks: Vec<String> = Vec::new();
        for c in &self.cells {
            if !schemes.contains(&c.scheme) {
                schemes.push(c.scheme);
            }
            if !attacks.contains(&c.attack) {
                attacks.push(c.attack.clone());
            }
        }
        let find = |s: Scheme, a: &str| self.cells.iter().find(|c| c.scheme == s && c.attack == a);
        let mut out = String::new();
        for (title, get) in [
            ("detection (bit accuracy / TPR@FPR)", (|c: &Cell| c.value) as fn(&Cell) -> Option<f64>),
            ("PSNR vs marked (dB)", |c: &Cell| c.psnr),
            ("Frechet distance vs marked", |c: &Cell| c.frechet),
        ] {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "| {:<16} |", "attack");
            for s in &schemes {
                let _ = write!(out, " {:>12} |", s.name());
            }
            out.push('\n');
            let _ = writeln!(out, "|{}|", vec!["---"; schemes.len() + 1].join("|"));
            for a in &attacks {
                let _ = write!(out, "| {a:<16} |");
                for s in &schemes {
                    let v = match find(*s, a) {
                        Some(c) => match get(c) {
                            Some(v) => format!("{v:.3}"),
                            None if !c.failures.is_empty() => "ERR".into(),
                            None => "-".into(),
                        },
                        None => "-".into(),
                    };
                    let _ = write!(out, " {v:>12} |");
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}
