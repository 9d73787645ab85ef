#![allow(dead_code)]

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use curate::ingest::jpeg_encode;
use curate::synth::natural_image;
use image::DynamicImage;

/// Blockiness computed directly from its definition: every DCT coefficient
/// is a double cosine sum, every dispersion a textbook two-pass standard
/// deviation, and the shifted grid is read straight out of the original
/// sample buffer.
pub fn blockiness_oracle(samples: &[f64], width: usize, height: usize) -> f64 {
    let field = |off: usize| -> Vec<f64> {
        let w = width - off;
        let h = height - off;
        let (cols, rows) = (w / 8, h / 8);
        let pix = |x: usize, y: usize| samples[(y + off) * width + x + off];
        let mut cos = [[0.0; 8]; 8];
        for (n, row) in cos.iter_mut().enumerate() {
            for (k, c) in row.iter_mut().enumerate() {
                *c = ((2 * n + 1) as f64 * k as f64 * PI / 16.0).cos();
            }
        }
        let coef = |px: usize, py: usize, u: usize, v: usize| -> f64 {
            let a = |k: usize| if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            let mut s = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    s += pix(px * 8 + x, py * 8 + y) * cos[y][u] * cos[x][v];
                }
            }
            a(u) * a(v) * s
        };
        let mut all = vec![vec![[0.0; 64]; cols]; rows];
        for (py, row) in all.iter_mut().enumerate() {
            for (px, block) in row.iter_mut().enumerate() {
                for u in 0..8 {
                    for v in 0..8 {
                        block[u * 8 + v] = coef(px, py, u, v);
                    }
                }
            }
        }
        let mut out = vec![0.0; 64];
        let mut n = 0.0;
        for py in 1..rows - 1 {
            for px in 1..cols - 1 {
                n += 1.0;
                for (k, o) in out.iter_mut().enumerate() {
                    let v = [
                        all[py][px][k],
                        all[py - 1][px][k],
                        all[py + 1][px][k],
                        all[py][px - 1][k],
                        all[py][px + 1][k],
                    ];
                    let mean = v.iter().sum::<f64>() / 5.0;
                    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
                    *o += var.sqrt();
                }
            }
        }
        out.iter().map(|s| s / n).collect()
    };
    let v = field(0);
    let vc = field(4);
    v.iter()
        .zip(&vc)
        .map(|(&a, &c)| if a == 0.0 { 0.0 } else { ((c - a) / a).abs() })
        .sum()
}

/// Deterministic set of `n` clean synthetic images with sides in 160..256.
pub fn image_set(seed: u64, n: usize) -> Vec<DynamicImage> {
    (0..n as u64)
        .map(|i| {
            let s = seed * 1000 + i;
            let w = 160 + (s as u32).wrapping_mul(7) % 96;
            let h = 160 + (s as u32).wrapping_mul(13) % 96;
            DynamicImage::ImageRgb8(natural_image(s, w, h))
        })
        .collect()
}

/// JPEG round trip at quality `q`.
pub fn degrade(image: &DynamicImage, q: f64) -> DynamicImage {
    image::load_from_memory(&jpeg_encode(image, q).unwrap()).unwrap()
}

pub fn write_png(image: &DynamicImage, path: &Path) {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    image.save_with_format(path, image::ImageFormat::Png).unwrap();
}

pub fn write_jpeg(image: &DynamicImage, q: f64, path: &Path) {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).unwrap();
    }
    fs::write(path, jpeg_encode(image, q).unwrap()).unwrap();
}

/// Relative difference, with an absolute fallback near zero.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-300 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Writes the two-source toy dataset used by end-to-end tests and returns
/// the config text. Layout under `root`:
/// `ref/` clean reference, `clean/` clean source plus one corrupt and one
/// undersized file, `degraded/` the same kind of content at quality 0.5.
pub fn write_toy_run(root: &Path, jpeg_clean: bool) -> String {
    let reference = image_set(901, 12);
    for (i, img) in reference.iter().enumerate() {
        write_png(img, &root.join(format!("ref/r{i:02}.png")));
    }
    let clean = image_set(902, 10);
    for (i, img) in clean.iter().enumerate() {
        let p = root.join(format!("clean/sub{}/c{i:02}", i % 2));
        if jpeg_clean {
            write_jpeg(img, 1.0, &p.with_extension("jpg"));
        } else {
            write_png(img, &p.with_extension("png"));
        }
    }
    fs::write(root.join("clean/broken.jpg"), b"not an image").unwrap();
    let tiny = DynamicImage::ImageRgb8(natural_image(5, 20, 20));
    write_png(&tiny, &root.join("clean/tiny.png"));
    for (i, img) in image_set(903, 10).iter().enumerate() {
        write_jpeg(img, 0.5, &root.join(format!("degraded/d{i:02}.jpg")));
    }
    r#"
reference_dir = "ref"
output_dir = "out"
min_side = 64
grid_size = 512

[[sources]]
name = "clean"
dir = "clean"

[[sources]]
name = "degraded"
dir = "degraded"

[filter]
provider = "graph"
theta = 3
"#
    .to_string()
}
