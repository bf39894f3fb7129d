//! Minimal PNG charts (no text): score histograms, ROC curves, Fréchet bars.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::report::{Condition, EvalReport};
use crate::error::{Error, Result};
use crate::watermark::Scheme;

const W: u32 = 480;
const H: u32 = 320;
const PAD: u32 = 24;
const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [23, 190, 207],
];
const GREY: [u8; 3] = [127, 127, 127];

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    for x in PAD..W - PAD {
        img.put_pixel(x, H - PAD, Rgb([0, 0, 0]));
    }
    for y in PAD..=H - PAD {
        img.put_pixel(PAD, y, Rgb([0, 0, 0]));
    }
    img
}

/// Maps unit coordinates to pixels inside the axes.
fn to_px(u: f64, v: f64) -> (i64, i64) {
    let x = PAD as f64 + u.clamp(0.0, 1.0) * (W - 2 * PAD) as f64;
    let y = (H - PAD) as f64 - v.clamp(0.0, 1.0) * (H - 2 * PAD) as f64;
    (x.round() as i64, y.round() as i64)
}

fn line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), c: [u8; 3]) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 as f64 + t * (b.0 - a.0) as f64;
        let y = a.1 as f64 + t * (b.1 - a.1) as f64;
        let (x, y) = (x.round() as i64, y.round() as i64);
        if x >= 0 && y >= 0 && (x as u32) < W && (y as u32) < H {
            img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }
}

fn rect(img: &mut RgbImage, u0: f64, u1: f64, v: f64, c: [u8; 3]) {
    let (x0, y0) = to_px(u0, v);
    let (x1, y1) = to_px(u1, 0.0);
    for x in x0.min(x1)..x0.max(x1) {
        for y in y0.min(y1)..y0.max(y1) {
            img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }
}

fn save(img: &RgbImage, path: PathBuf) -> Result<PathBuf> {
    img.save(&path).map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn histogram(report: &EvalReport, scheme: Scheme) -> RgbImage {
    let mut img = canvas();
    let groups: Vec<(Vec<f64>, [u8; 3])> = {
        let pick = |cond: Condition| -> Vec<f64> {
            report
                .samples
                .iter()
                .filter(|s| s.scheme == scheme && s.condition == cond)
                .map(|s| s.statistic)
                .collect()
        };
        vec![
            (pick(Condition::UnmarkedNull), GREY),
            (pick(Condition::CleanMarked), PALETTE[0]),
            (pick(Condition::AttackedMarked), PALETTE[1]),
        ]
    };
    let all: Vec<f64> = groups.iter().flat_map(|g| g.0.iter().copied()).collect();
    if all.is_empty() {
        return img;
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    const BINS: usize = 30;
    for (values, colour) in &groups {
        if values.is_empty() {
            continue;
        }
        let mut counts = [0usize; BINS];
        for v in values {
            counts[(((v - lo) / span) * BINS as f64).min(BINS as f64 - 1.0) as usize] += 1;
        }
        let peak = *counts.iter().max().unwrap() as f64;
        let mut prev = to_px(0.0, 0.0);
        for (b, c) in counts.iter().enumerate() {
            let v = *c as f64 / peak;
            let left = to_px(b as f64 / BINS as f64, v);
            let right = to_px((b + 1) as f64 / BINS as f64, v);
            line(&mut img, prev, left, *colour);
            line(&mut img, left, right, *colour);
            prev = right;
        }
    }
    img
}

fn roc(report: &EvalReport, scheme: Scheme) -> RgbImage {
    let mut img = canvas();
    line(&mut img, to_px(0.0, 0.0), to_px(1.0, 1.0), GREY);
    let null: Vec<f64> = report
        .samples
        .iter()
        .filter(|s| s.scheme == scheme && s.condition == Condition::UnmarkedNull)
        .map(|s| s.statistic)
        .collect();
    if null.is_empty() {
        return img;
    }
    let labels: Vec<Option<String>> = std::iter::once(None)
        .chain(report.attacks.iter().map(|a| Some(a.label())))
        .collect();
    for (i, label) in labels.iter().enumerate() {
        let marked: Vec<f64> = report
            .samples
            .iter()
            .filter(|s| {
                s.scheme == scheme
                    && s.condition != Condition::UnmarkedNull
                    && s.attack.as_deref() == label.as_deref()
            })
            .map(|s| s.statistic)
            .collect();
        if marked.is_empty() {
            continue;
        }
        let mut thresholds: Vec<f64> = null.iter().chain(&marked).copied().collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        let mut prev = to_px(0.0, 0.0);
        for t in thresholds {
            let fpr = null.iter().filter(|s| **s >= t).count() as f64 / null.len() as f64;
            let tpr = marked.iter().filter(|s| **s >= t).count() as f64 / marked.len() as f64;
            let p = to_px(fpr, tpr);
            line(&mut img, prev, p, PALETTE[i % PALETTE.len()]);
            prev = p;
        }
        line(&mut img, prev, to_px(1.0, 1.0), PALETTE[i % PALETTE.len()]);
    }
    img
}

fn frechet_bars(report: &EvalReport) -> RgbImage {
    let mut img = canvas();
    let vals: Vec<(usize, f64)> = report
        .cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.frechet.map(|f| (i, f)))
        .collect();
    let peak = vals.iter().map(|v| v.1).fold(0.0, f64::max).max(1e-12);
    let n = report.cells.len().max(1) as f64;
    for (i, f) in vals {
        let scheme_idx = report.thresholds.iter().position(|t| t.scheme == report.cells[i].scheme).unwrap_or(0);
        rect(&mut img, (i as f64 + 0.15) / n, (i as f64 + 0.85) / n, f / peak, PALETTE[scheme_idx % PALETTE.len()]);
    }
    img
}

/// Writes `hist_<scheme>.png`, `roc_<scheme>.png` and `frechet.png` into `dir`.
pub fn write_plots(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for t in &report.thresholds {
        out.push(save(&histogram(report, t.scheme), dir.join(format!("hist_{}.png", t.scheme)))?);
        out.push(save(&roc(report, t.scheme), dir.join(format!("roc_{}.png", t.scheme)))?);
    }
    out.push(save(&frechet_bars(report), dir.join("frechet.png"))?);
    Ok(out)
}
