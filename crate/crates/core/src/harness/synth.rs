//! Procedural test corpus: piecewise-smooth scenes of overlapping shapes.

use crate::error::{Error, Result};
use crate::imageio::{save_image, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Triangle { pts: [(f64, f64); 3] },
    Band { ny: f64, nx: f64, offset: f64, half_width: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, h: f64, w: f64) -> Self {
        match rng.gen_range(0..4) {
            0 => {
                let (y0, x0) = (rng.gen_range(0.0..h), rng.gen_range(0.0..w));
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + rng.gen_range(0.1..0.6) * h,
                    x1: x0 + rng.gen_range(0.1..0.6) * w,
                }
            }
            1 => Shape::Ellipse {
                cy: rng.gen_range(0.0..h),
                cx: rng.gen_range(0.0..w),
                ry: rng.gen_range(0.08..0.35) * h,
                rx: rng.gen_range(0.08..0.35) * w,
            },
            2 => Shape::Triangle {
                pts: [0, 1, 2].map(|_| (rng.gen_range(0.0..h), rng.gen_range(0.0..w))),
            },
            _ => {
                let a: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                Shape::Band {
                    ny: a.sin(),
                    nx: a.cos(),
                    offset: rng.gen_range(-0.5..1.0) * (h + w) / 2.0,
                    half_width: rng.gen_range(0.5..4.0),
                }
            }
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
            Shape::Triangle { pts } => {
                let side = |(ay, ax): (f64, f64), (by, bx): (f64, f64)| (bx - ax) * (y - ay) - (by - ay) * (x - ax);
                let s = [side(pts[0], pts[1]), side(pts[1], pts[2]), side(pts[2], pts[0])];
                s.iter().all(|&v| v >= 0.0) || s.iter().all(|&v| v <= 0.0)
            }
            Shape::Band { ny, nx, offset, half_width } => (ny * y + nx * x - offset).abs() <= half_width,
        }
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.gen_range(0.0..255.0))
}

/// One scene: a smooth background gradient under 4 to 9 flat-colored shapes,
/// antialiased with 3x3 supersampling and quantized to 8-bit levels.
pub fn synthetic_image(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    let (h, w) = (height as f64, width as f64);
    let bg = [color(rng), color(rng)];
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let n = rng.gen_range(4..=9);
    let shapes: Vec<(Shape, [f64; 3])> = (0..n).map(|_| (Shape::random(rng, h, w), color(rng))).collect();
    const SS: usize = 3;
    Image::from_fn(height, width, |y, x| {
        let mut acc = [0.0f64; 3];
        for sy in 0..SS {
            for sx in 0..SS {
                let py = y as f64 + (sy as f64 + 0.5) / SS as f64;
                let px = x as f64 + (sx as f64 + 0.5) / SS as f64;
                let t = ((py / h - 0.5) * angle.sin() + (px / w - 0.5) * angle.cos() + 0.75) / 1.5;
                let mut c = [0, 1, 2].map(|k| bg[0][k] * (1.0 - t) + bg[1][k] * t);
                for (shape, col) in &shapes {
                    if shape.contains(py, px) {
                        c = *col;
                    }
                }
                for k in 0..3 {
                    acc[k] += c[k];
                }
            }
        }
        acc.map(|v| ((v / (SS * SS) as f64).clamp(0.0, 255.0) + 0.5).floor() as f32)
    })
}

pub fn synthetic_corpus(count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synthetic_image(height, width, &mut rng)).collect()
}

/// Writes `count` PNG scenes named `scene_000.png`, ... into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    synthetic_corpus(count, height, width, seed)?
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = dir.join(format!("scene_{i:03}.png"));
            save_image(&p, img).map(|_| p)
        })
        .collect()
}
