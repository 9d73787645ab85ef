//! Seeded procedural imagery standing in for a clean photographic corpus.
//!
//! Images combine smooth illumination gradients, overlapping shapes with hard
//! and soft boundaries, oriented periodic texture, multi-octave value noise
//! and per-pixel sensor noise. Output depends only on the seed.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ingest::jpeg_encode;

struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, cells: usize) -> Self {
        let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f64>()).collect();
        ValueNoise { cells, lattice }
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let fx = u * self.cells as f64;
        let fy = v * self.cells as f64;
        let (x0, y0) = ((fx as usize).min(self.cells - 1), (fy as usize).min(self.cells - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (sx, sy) = (s(tx), s(ty));
        let at = |x: usize, y: usize| self.lattice[y * (self.cells + 1) + x];
        let top = at(x0, y0) * (1.0 - sx) + at(x0 + 1, y0) * sx;
        let bottom = at(x0, y0 + 1) * (1.0 - sx) + at(x0 + 1, y0 + 1) * sx;
        top * (1.0 - sy) + bottom * sy
    }
}

enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

struct Layer {
    shape: Shape,
    color: [f64; 3],
    softness: f64,
    stripes: Option<(f64, f64, f64)>,
}

impl Layer {
    fn coverage(&self, x: f64, y: f64) -> f64 {
        // Signed distance-like value, negative inside.
        let d = match self.shape {
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                let r = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
                (r - 1.0) * rx.min(ry)
            }
            Shape::Rect { x0, y0, x1, y1 } => (x0 - x).max(x - x1).max(y0 - y).max(y - y1),
        };
        if self.softness <= 0.0 {
            if d <= 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (0.5 - d / self.softness).clamp(0.0, 1.0)
        }
    }
}

/// Generates one `width x height` RGB image from `seed`.
pub fn natural_image(seed: u64, width: u32, height: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (f64::from(width), f64::from(height));

    let color = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        let base: f64 = rng.random_range(30.0..220.0);
        [0, 1, 2].map(|_| (base + rng.random_range(-45.0..45.0)).clamp(5.0, 250.0))
    };

    let top = color(&mut rng);
    let bottom = color(&mut rng);
    let tilt = rng.random_range(-0.5..0.5);

    let octaves: Vec<(ValueNoise, f64)> = [(4usize, 28.0), (12, 14.0), (40, 7.0)]
        .into_iter()
        .map(|(cells, amp)| (ValueNoise::new(&mut rng, cells), amp * rng.random_range(0.5..1.2)))
        .collect();

    let n_layers = rng.random_range(4..10);
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let shape = if rng.random_bool(0.6) {
            Shape::Ellipse {
                cx: rng.random_range(0.0..w),
                cy: rng.random_range(0.0..h),
                rx: rng.random_range(0.05..0.35) * w,
                ry: rng.random_range(0.05..0.35) * h,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        } else {
            let (x0, y0) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            Shape::Rect {
                x0,
                y0,
                x1: x0 + rng.random_range(0.1..0.5) * w,
                y1: y0 + rng.random_range(0.1..0.5) * h,
            }
        };
        let softness = if rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(0.5..6.0)
        };
        let stripes = rng.random_bool(0.4).then(|| {
            (
                rng.random_range(0.0..std::f64::consts::PI),
                rng.random_range(2.5..14.0),
                rng.random_range(8.0..35.0),
            )
        });
        layers.push(Layer {
            shape,
            color: color(&mut rng),
            softness,
            stripes,
        });
    }

    let noise_sigma = rng.random_range(1.0..3.0);
    let normal = Normal::new(0.0, noise_sigma).expect("positive sigma");

    let mut img = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
            let t = ((fy / h) + tilt * (fx / w - 0.5)).clamp(0.0, 1.0);
            let mut px = [0, 1, 2].map(|c| top[c] * (1.0 - t) + bottom[c] * t);

            for layer in &layers {
                let a = layer.coverage(fx, fy);
                if a <= 0.0 {
                    continue;
                }
                let mut col = layer.color;
                if let Some((angle, period, amp)) = layer.stripes {
                    let phase = fx * angle.cos() + fy * angle.sin();
                    let s = amp * (2.0 * std::f64::consts::PI * phase / period).sin();
                    col = col.map(|v| v + s);
                }
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - a) + col[c] * a;
                }
            }

            let (u, v) = (fx / w, fy / h);
            let tex: f64 = octaves.iter().map(|(n, amp)| (n.sample(u, v) - 0.5) * amp).sum();
            let grain = normal.sample(&mut rng);
            let out = px.map(|v| (v + tex + grain).round().clamp(0.0, 255.0) as u8);
            img.put_pixel(x, y, Rgb(out));
        }
    }
    img
}

/// Description of a generated corpus.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub count: usize,
    pub seed: u64,
    pub min_side: u32,
    pub max_side: u32,
    /// `None` writes lossless PNG; `Some(q)` writes JPEG at quality `q`.
    pub jpeg_quality: Option<f64>,
}

/// Writes `spec.count` images named `img_NNN.{png,jpg}` into `dir` and
/// returns their paths.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut paths = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let width = rng.random_range(spec.min_side..=spec.max_side);
        let height = rng.random_range(spec.min_side..=spec.max_side);
        let image = DynamicImage::ImageRgb8(natural_image(rng.random(), width, height));
        let path = match spec.jpeg_quality {
            None => {
                let path = dir.join(format!("img_{i:03}.png"));
                image
                    .save_with_format(&path, image::ImageFormat::Png)
                    .map_err(|e| Error::Encode(e.to_string()))?;
                path
            }
            Some(q) => {
                let path = dir.join(format!("img_{i:03}.jpg"));
                let bytes = jpeg_encode(&image, q)?;
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
                path
            }
        };
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seed_deterministic() {
        let a = natural_image(7, 64, 48);
        let b = natural_image(7, 64, 48);
        let c = natural_image(8, 64, 48);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
