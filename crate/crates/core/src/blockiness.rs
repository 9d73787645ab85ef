//! No-reference JPEG blockiness.
//!
//! The image is tiled into 8x8 patches and every patch is transformed with an
//! orthonormal DCT-II. For each subband `(i, j)` and each interior patch, the
//! dispersion (population standard deviation) of that coefficient across the
//! patch and its four 4-connected neighbours is taken, then averaged over all
//! interior patches. JPEG quantizes coefficients on the aligned grid only, so
//! comparing the averaged field of the image with that of the image shifted
//! by half a patch exposes block artifacts:
//!
//! `B = sum_ij |(Vcrop(i,j) - V(i,j)) / V(i,j)|`, with zero-denominator terms
//! contributing nothing.

use std::f64::consts::PI;
use std::sync::OnceLock;

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::ingest::{jpeg_recompress, luma_of, LumaImage};

/// Patch side.
pub const P: usize = 8;
/// Rows and columns removed for the shifted grid.
pub const SHIFT: usize = P / 2;

pub type Block = [f64; P * P];

fn dct_matrix() -> &'static Block {
    static MATRIX: OnceLock<Block> = OnceLock::new();
    MATRIX.get_or_init(|| {
        let mut m = [0.0; P * P];
        for u in 0..P {
            let alpha = if u == 0 {
                (1.0 / P as f64).sqrt()
            } else {
                (2.0 / P as f64).sqrt()
            };
            for x in 0..P {
                m[u * P + x] = alpha * (((2 * x + 1) * u) as f64 * PI / (2 * P) as f64).cos();
            }
        }
        m
    })
}

/// Orthonormal 2-D DCT-II of a row-major 8x8 block. Entry `[0]` is the DC
/// term, `sum / 8`.
pub fn dct_block(block: &Block) -> Block {
    let c = dct_matrix();
    let mut rows = [0.0; P * P];
    // rows = block * C^T (transform each row)
    for y in 0..P {
        for v in 0..P {
            let mut acc = 0.0;
            for x in 0..P {
                acc += block[y * P + x] * c[v * P + x];
            }
            rows[y * P + v] = acc;
        }
    }
    let mut out = [0.0; P * P];
    for u in 0..P {
        for v in 0..P {
            let mut acc = 0.0;
            for y in 0..P {
                acc += c[u * P + y] * rows[y * P + v];
            }
            out[u * P + v] = acc;
        }
    }
    out
}

/// Inverse of [`dct_block`].
pub fn idct_block(coeffs: &Block) -> Block {
    let c = dct_matrix();
    let mut cols = [0.0; P * P];
    for y in 0..P {
        for v in 0..P {
            let mut acc = 0.0;
            for u in 0..P {
                acc += c[u * P + y] * coeffs[u * P + v];
            }
            cols[y * P + v] = acc;
        }
    }
    let mut out = [0.0; P * P];
    for y in 0..P {
        for x in 0..P {
            let mut acc = 0.0;
            for v in 0..P {
                acc += cols[y * P + v] * c[v * P + x];
            }
            out[y * P + x] = acc;
        }
    }
    out
}

/// Slice-checked front end to [`dct_block`].
pub fn dct8x8(patch: &[f64]) -> Result<Block> {
    let block: &Block = patch.try_into().map_err(|_| {
        Error::InvalidArgument(format!("DCT patch must hold {} samples, got {}", P * P, patch.len()))
    })?;
    Ok(dct_block(block))
}

/// Mean per-subband coefficient dispersion over interior patches.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationField {
    pub values: Block,
    pub patch_count: usize,
}

impl VariationField {
    /// Zero-based subband `(i, j)`: `i` vertical frequency, `j` horizontal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * P + j]
    }
}

/// Population standard deviation of five values. Deviations are taken from
/// the first value so identical inputs give exactly zero.
#[inline]
fn dispersion5(v: [f64; 5]) -> f64 {
    let d = v.map(|x| x - v[0]);
    let mean = d.iter().sum::<f64>() / 5.0;
    let ss: f64 = d.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / 5.0).sqrt()
}

fn patch_coefficients(image: &LumaImage, cols: usize, rows: usize) -> Vec<Block> {
    let mut coeffs = Vec::with_capacity(cols * rows);
    let mut block = [0.0; P * P];
    for py in 0..rows {
        for px in 0..cols {
            for y in 0..P {
                for x in 0..P {
                    block[y * P + x] = image.get(px * P + x, py * P + y);
                }
            }
            coeffs.push(dct_block(&block));
        }
    }
    coeffs
}

/// Averaged subband variation over the aligned 8x8 patch grid. Remainder
/// rows and columns are ignored; only patches with all four neighbours count.
pub fn variation_field(image: &LumaImage) -> Result<VariationField> {
    let (cols, rows) = (image.width() / P, image.height() / P);
    if cols < 3 || rows < 3 {
        return Err(Error::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            min: 3 * P,
        });
    }
    let coeffs = patch_coefficients(image, cols, rows);
    let at = |px: usize, py: usize| &coeffs[py * cols + px];

    let mut sums = [0.0; P * P];
    for py in 1..rows - 1 {
        for px in 1..cols - 1 {
            let (c, up, down, left, right) = (
                at(px, py),
                at(px, py - 1),
                at(px, py + 1),
                at(px - 1, py),
                at(px + 1, py),
            );
            for k in 0..P * P {
                sums[k] += dispersion5([c[k], up[k], down[k], left[k], right[k]]);
            }
        }
    }
    let patch_count = (cols - 2) * (rows - 2);
    let values = sums.map(|s| s / patch_count as f64);
    Ok(VariationField {
        values,
        patch_count,
    })
}

/// Smallest side for which [`blockiness`] is defined.
pub const MIN_SIDE: usize = 3 * P + SHIFT;

/// Blockiness of a luminance plane; `0` for artifact-free content.
pub fn blockiness(image: &LumaImage) -> Result<f64> {
    if image.width() < MIN_SIDE || image.height() < MIN_SIDE {
        return Err(Error::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            min: MIN_SIDE,
        });
    }
    let aligned = variation_field(image)?;
    let shifted = variation_field(&image.crop_leading(SHIFT, SHIFT))?;
    Ok(aligned
        .values
        .iter()
        .zip(&shifted.values)
        .map(|(&v, &vc)| if v == 0.0 { 0.0 } else { ((vc - v) / v).abs() })
        .sum())
}

/// Blockiness of a decoded image, optionally after a JPEG round trip at
/// quality `recompress_q`.
pub fn measure(image: &DynamicImage, recompress_q: Option<f64>) -> Result<f64> {
    match recompress_q {
        Some(q) => blockiness(&luma_of(&jpeg_recompress(image, q)?)),
        None => blockiness(&luma_of(image)),
    }
}
