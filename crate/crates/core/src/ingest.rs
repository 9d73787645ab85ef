//! Image decoding, dataset enumeration and the JPEG round-trip used to put
//! every image on a common codec footing.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};
use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

/// Default resolution gate: images whose shorter side is below this are dropped.
pub const DEFAULT_MIN_SIDE: u32 = 256;

/// Identifies the codec pair behind [`jpeg_recompress`]. Blockiness values are
/// only comparable between runs that share this string.
pub const CODEC_ID: &str = "jpeg-encoder 0.7 baseline, 4:2:0, Annex K tables / image 0.25 (zune-jpeg) decoder";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    #[default]
    None,
    TooSmall,
    DecodeError,
    BelowRegionThreshold,
    AboveBlockinessThreshold,
}

/// One scanned image. Unknown numeric fields serialize as absent keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blockiness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_count: Option<u64>,
    pub kept: bool,
    pub drop_reason: DropReason,
}

impl ImageRecord {
    pub fn decoded(path: impl Into<String>, width: u32, height: u32) -> Self {
        ImageRecord {
            path: path.into(),
            width: Some(width),
            height: Some(height),
            pixels: Some(u64::from(width) * u64::from(height)),
            blockiness: None,
            region_count: None,
            kept: true,
            drop_reason: DropReason::None,
        }
    }

    pub fn undecodable(path: impl Into<String>) -> Self {
        ImageRecord {
            path: path.into(),
            width: None,
            height: None,
            pixels: None,
            blockiness: None,
            region_count: None,
            kept: false,
            drop_reason: DropReason::DecodeError,
        }
    }

    pub fn drop_with(&mut self, reason: DropReason) {
        self.kept = false;
        self.drop_reason = reason;
    }
}

/// Single-channel luminance plane, row-major, samples in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaImage {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl LumaImage {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                samples.len()
            )));
        }
        if let Some(bad) = samples.iter().find(|s| !(0.0..=255.0).contains(*s)) {
            return Err(Error::InvalidArgument(format!(
                "luminance sample {bad} outside [0, 255]"
            )));
        }
        Ok(LumaImage {
            width,
            height,
            samples,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self::new(width, height, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.samples[y * self.width + x]
    }

    /// Drops the first `rows` rows and `cols` columns.
    pub fn crop_leading(&self, rows: usize, cols: usize) -> LumaImage {
        let width = self.width.saturating_sub(cols);
        let height = self.height.saturating_sub(rows);
        let mut samples = Vec::with_capacity(width * height);
        for y in rows..self.height {
            let start = y * self.width + cols;
            samples.extend_from_slice(&self.samples[start..start + width]);
        }
        LumaImage {
            width,
            height,
            samples,
        }
    }
}

/// BT.601 luma weights.
#[inline]
pub fn bt601(r: u8, g: u8, b: u8) -> f64 {
    0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)
}

fn is_grayscale(image: &DynamicImage) -> bool {
    !image.color().has_color()
}

/// Luminance plane of an already decoded image. Grayscale passes through.
pub fn luma_of(image: &DynamicImage) -> LumaImage {
    let (width, height) = (image.width() as usize, image.height() as usize);
    let samples = if is_grayscale(image) {
        image.to_luma8().into_raw().into_iter().map(f64::from).collect()
    } else {
        image
            .to_rgb8()
            .pixels()
            .map(|p| bt601(p[0], p[1], p[2]))
            .collect()
    };
    LumaImage {
        width,
        height,
        samples,
    }
}

/// Decodes a JPEG or PNG file. Any other format is a decode error.
pub fn open_image(path: &Path) -> Result<DynamicImage> {
    let decode_err = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| decode_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| decode_err(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Jpeg) | Some(ImageFormat::Png) => {}
        Some(other) => return Err(decode_err(format!("unsupported format {other:?}"))),
        None => return Err(decode_err("unrecognized image format".into())),
    }
    reader.decode().map_err(|e| decode_err(e.to_string()))
}

pub fn decode_luma(path: &Path) -> Result<LumaImage> {
    open_image(path).map(|image| luma_of(&image))
}

/// Maps a quality in `(0, 1]` onto the conventional 1..=100 JPEG scale.
pub fn jpeg_quality(q: f64) -> Result<u8> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "JPEG quality must lie in (0, 1], got {q}"
        )));
    }
    Ok((100.0 * q).round().clamp(1.0, 100.0) as u8)
}

/// Encodes `image` as baseline JPEG at quality `q` and returns the JPEG bytes.
pub fn jpeg_encode(image: &DynamicImage, q: f64) -> Result<Vec<u8>> {
    let quality = jpeg_quality(q)?;
    let (width, height) = (image.width(), image.height());
    let (w16, h16) = match (u16::try_from(width), u16::try_from(height)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} exceeds the JPEG dimension limit"
            )))
        }
    };

    let mut bytes = Vec::new();
    let mut encoder = Encoder::new(&mut bytes, quality);
    encoder.set_sampling_factor(SamplingFactor::F_2_2);
    let result = if is_grayscale(image) {
        encoder.encode(image.to_luma8().as_raw(), w16, h16, ColorType::Luma)
    } else {
        encoder.encode(image.to_rgb8().as_raw(), w16, h16, ColorType::Rgb)
    };
    result.map_err(|e| Error::Encode(e.to_string()))?;
    Ok(bytes)
}

/// JPEG round trip at quality `q` (the compression function applied before
/// blockiness measurement). Dimensions are preserved.
pub fn jpeg_recompress(image: &DynamicImage, q: f64) -> Result<DynamicImage> {
    let bytes = jpeg_encode(image, q)?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Jpeg)
        .map_err(|e| Error::Encode(format!("decoding own JPEG output: {e}")))
}

/// Enumerates every regular, non-hidden file below `root` (recursively) in
/// lexicographic order of its `/`-separated relative path.
pub fn list_files(root: &Path) -> Result<Vec<String>> {
    fs::read_dir(root).map_err(|source| Error::UnreadableRoot {
        path: root.to_path_buf(),
        source,
    })?;

    let mut paths = Vec::new();
    let walker = WalkDir::new(root)
        .follow_links(true)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            let source = e
                .into_io_error()
                .unwrap_or_else(|| std::io::Error::other("filesystem loop"));
            Error::UnreadableRoot { path, source }
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root");
        let rel: Vec<String> = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        paths.push(rel.join("/"));
    }
    paths.sort();
    Ok(paths)
}

/// Resolves a manifest-relative path against the dataset root.
pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    rel.split('/').fold(root.to_path_buf(), |acc, part| acc.join(part))
}

/// Scans a dataset directory into manifest records, applying the inclusive
/// resolution gate `min(width, height) >= min_side`.
pub fn scan_directory(root: &Path, min_side: u32) -> Result<Vec<ImageRecord>> {
    let files = list_files(root)?;
    Ok(scan_files(root, files, min_side))
}

/// Builds records for the given root-relative files, preserving their order.
pub fn scan_files(root: &Path, files: Vec<String>, min_side: u32) -> Vec<ImageRecord> {
    files
        .into_par_iter()
        .map(|rel| match open_image(&resolve(root, &rel)) {
            Ok(image) => {
                let mut record = ImageRecord::decoded(rel, image.width(), image.height());
                if image.width().min(image.height()) < min_side {
                    record.drop_with(DropReason::TooSmall);
                }
                record
            }
            Err(_) => ImageRecord::undecodable(rel),
        })
        .collect()
}
