//! Procedural toy image domain.
//!
//! The tiny backend is fitted on this domain and the bundled toy set used by
//! the demo and the acceptance suite is drawn from it. Images are smooth
//! colour fields: a two-colour gradient, soft blobs, a few soft-edged
//! rectangles and a faint oriented texture.

use crate::buffer::ImageBuffer;
use crate::error::Result;
use crate::rng::{derive_stream, RngStream};

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn color(rng: &mut RngStream) -> [f64; 3] {
    [rng.uniform_range(0.15, 0.85), rng.uniform_range(0.15, 0.85), rng.uniform_range(0.15, 0.85)]
}

/// Draws one toy image of the given size.
pub fn toy_image(size: (usize, usize), rng: &mut RngStream, source_id: &str) -> Result<ImageBuffer> {
    let (h, w) = size;
    let scale = h.min(w) as f64;
    let c0 = color(rng);
    let c1 = color(rng);
    let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
    let (ga, gb) = (angle.cos(), angle.sin());

    struct Blob {
        cy: f64,
        cx: f64,
        r: f64,
        col: [f64; 3],
        alpha: f64,
    }
    let blobs: Vec<Blob> = (0..3 + rng.below(4))
        .map(|_| Blob {
            cy: rng.uniform() * h as f64,
            cx: rng.uniform() * w as f64,
            r: rng.uniform_range(0.08, 0.3) * scale,
            col: color(rng),
            alpha: rng.uniform_range(0.4, 0.9),
        })
        .collect();

    struct Rect {
        y0: f64,
        y1: f64,
        x0: f64,
        x1: f64,
        soft: f64,
        col: [f64; 3],
    }
    let rects: Vec<Rect> = (0..1 + rng.below(3))
        .map(|_| {
            let y0 = rng.uniform() * h as f64;
            let x0 = rng.uniform() * w as f64;
            Rect {
                y0,
                y1: y0 + rng.uniform_range(0.15, 0.5) * h as f64,
                x0,
                x1: x0 + rng.uniform_range(0.15, 0.5) * w as f64,
                soft: rng.uniform_range(1.5, 4.0),
                col: color(rng),
            }
        })
        .collect();

    let tex_amp = rng.uniform_range(0.0, 0.04);
    let tex_freq = rng.uniform_range(0.04, 0.12) * std::f64::consts::TAU;
    let tex_angle = rng.uniform_range(0.0, std::f64::consts::PI);
    let (ta, tb) = (tex_angle.cos(), tex_angle.sin());

    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let g = ((fy / h as f64 - 0.5) * ga + (fx / w as f64 - 0.5) * gb + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for k in 0..3 {
                px[k] = c0[k] * (1.0 - g) + c1[k] * g;
            }
            for b in &blobs {
                let d2 = ((fy - b.cy).powi(2) + (fx - b.cx).powi(2)) / (b.r * b.r);
                let wgt = b.alpha * (-0.5 * d2).exp();
                for k in 0..3 {
                    px[k] = px[k] * (1.0 - wgt) + b.col[k] * wgt;
                }
            }
            for r in &rects {
                let inside = smoothstep(-r.soft, r.soft, fy - r.y0)
                    * smoothstep(-r.soft, r.soft, r.y1 - fy)
                    * smoothstep(-r.soft, r.soft, fx - r.x0)
                    * smoothstep(-r.soft, r.soft, r.x1 - fx);
                let wgt = 0.7 * inside;
                for k in 0..3 {
                    px[k] = px[k] * (1.0 - wgt) + r.col[k] * wgt;
                }
            }
            let tex = tex_amp * (tex_freq * (fy * ta + fx * tb)).sin();
            for v in px {
                data.push((v + tex).clamp(0.02, 0.98));
            }
        }
    }
    ImageBuffer::new(h, w, data, source_id)
}

/// The deterministic toy set: image `i` is drawn from stream `toy:<i>`.
pub fn toy_set(root_seed: u64, count: usize, size: (usize, usize)) -> Result<Vec<ImageBuffer>> {
    (0..count)
        .map(|i| {
            let mut rng = derive_stream(root_seed, &format!("toy:{i}"))?;
            toy_image(size, &mut rng, &format!("toy{i:04}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_set_is_deterministic_and_in_range() {
        let a = toy_set(3, 4, (32, 40)).unwrap();
        let b = toy_set(3, 4, (32, 40)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].dims(), (32, 40));
        assert_eq!(a[2].source_id, "toy0002");
        assert_ne!(a[0], a[1]);
    }
}
