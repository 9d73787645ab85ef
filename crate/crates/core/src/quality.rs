//! Dataset-level JPEG quality estimation.
//!
//! A clean reference set is recompressed at each quality in `S` to produce
//! basis blockiness densities. A dataset's own density (after a quality-1.0
//! round trip) is compared against every basis by KL divergence and the
//! qualities are averaged with weights `softmax(-KL)`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blockiness;
use crate::density::{grid_for, kde, kl_divergence, Density, Grid};
use crate::error::{Error, Result};
use crate::ingest::{jpeg_recompress, luma_of, open_image, ImageRecord, CODEC_ID};

pub const DEFAULT_QUALITIES: [f64; 5] = [1.0, 0.95, 0.85, 0.75, 0.5];
pub const DEFAULT_GATE: f64 = 0.9;
/// Minimum number of usable reference images for a basis.
pub const MIN_REFERENCE_IMAGES: usize = 10;
pub const BASIS_FORMAT_VERSION: u32 = 1;

/// Reference densities at a set of JPEG qualities, all on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub reference_name: String,
    pub qualities: Vec<f64>,
    pub densities: Vec<Density>,
    pub grid: Grid,
}

/// Checks that `qualities` is nonempty, strictly monotone and within `(0, 1]`.
pub fn validate_qualities(qualities: &[f64]) -> Result<()> {
    if qualities.is_empty() {
        return Err(Error::InvalidArgument("quality list is empty".into()));
    }
    if let Some(q) = qualities.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
        return Err(Error::InvalidArgument(format!("quality {q} outside (0, 1]")));
    }
    let increasing = qualities.windows(2).all(|w| w[1] > w[0]);
    let decreasing = qualities.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::InvalidArgument(
            "qualities must be strictly increasing or strictly decreasing".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct BasisEntry {
    quality: f64,
    bandwidth: f64,
    sample_count: usize,
    pmf: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisDocument {
    format_version: u32,
    reference_name: String,
    codec: String,
    grid: Grid,
    entries: Vec<BasisEntry>,
}

impl BasisSet {
    pub fn to_json(&self) -> String {
        let doc = BasisDocument {
            format_version: BASIS_FORMAT_VERSION,
            reference_name: self.reference_name.clone(),
            codec: CODEC_ID.to_string(),
            grid: self.grid.clone(),
            entries: self
                .qualities
                .iter()
                .zip(&self.densities)
                .map(|(&quality, d)| BasisEntry {
                    quality,
                    bandwidth: d.bandwidth,
                    sample_count: d.sample_count,
                    pmf: d.pmf.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("basis serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<BasisSet> {
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            message,
        };
        let doc: BasisDocument = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if doc.format_version != BASIS_FORMAT_VERSION {
            return Err(parse_err(format!(
                "unsupported basis format version {}",
                doc.format_version
            )));
        }
        if doc.codec != CODEC_ID {
            return Err(parse_err(format!(
                "basis was built with codec `{}`, this build uses `{CODEC_ID}`",
                doc.codec
            )));
        }
        let qualities: Vec<f64> = doc.entries.iter().map(|e| e.quality).collect();
        validate_qualities(&qualities).map_err(|e| parse_err(e.to_string()))?;
        let mut densities = Vec::with_capacity(doc.entries.len());
        for entry in doc.entries {
            if entry.pmf.len() != doc.grid.len() {
                return Err(parse_err(format!(
                    "pmf for quality {} has {} entries, grid has {}",
                    entry.quality,
                    entry.pmf.len(),
                    doc.grid.len()
                )));
            }
            densities.push(Density {
                grid: doc.grid.clone(),
                pmf: entry.pmf,
                bandwidth: entry.bandwidth,
                sample_count: entry.sample_count,
            });
        }
        Ok(BasisSet {
            reference_name: doc.reference_name,
            qualities,
            densities,
            grid: doc.grid,
        })
    }

    pub fn load(path: &Path) -> Result<BasisSet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BasisSet::from_json(&text, path)
    }
}

/// Blockiness of every reference image at every quality: `samples[k][i]` is
/// image `i` recompressed at `qualities[k]`.
pub fn reference_samples(
    images: &[image::DynamicImage],
    qualities: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let pairs: Vec<(usize, usize)> = (0..qualities.len())
        .flat_map(|k| (0..images.len()).map(move |i| (k, i)))
        .collect();
    let values = pairs
        .par_iter()
        .map(|&(k, i)| blockiness::blockiness(&luma_of(&jpeg_recompress(&images[i], qualities[k])?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values
        .chunks(images.len().max(1))
        .map(<[f64]>::to_vec)
        .take(qualities.len())
        .collect())
}

/// Builds a basis from already decoded reference images.
pub fn build_basis_from_images(
    name: &str,
    images: &[image::DynamicImage],
    qualities: &[f64],
    grid_size: usize,
) -> Result<BasisSet> {
    validate_qualities(qualities)?;
    if images.len() < MIN_REFERENCE_IMAGES {
        return Err(Error::InsufficientReference {
            found: images.len(),
            needed: MIN_REFERENCE_IMAGES,
        });
    }
    let samples = reference_samples(images, qualities)?;
    let sets: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
    let grid = grid_for(&sets, grid_size)?;
    let densities = samples
        .iter()
        .map(|s| kde(s, &grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(BasisSet {
        reference_name: name.to_string(),
        qualities: qualities.to_vec(),
        densities,
        grid,
    })
}

/// Reference images that could not be used, with the reason.
pub type Skipped = Vec<(PathBuf, Error)>;

/// Decodes the reference images, skipping (and reporting) those that fail to
/// decode or are too small for blockiness, then builds the basis.
pub fn build_basis(
    name: &str,
    reference_images: &[PathBuf],
    qualities: &[f64],
    grid_size: usize,
) -> Result<(BasisSet, Skipped)> {
    validate_qualities(qualities)?;
    let decoded: Vec<(PathBuf, Result<image::DynamicImage>)> = reference_images
        .par_iter()
        .map(|p| {
            let image = open_image(p).and_then(|img| {
                let side = img.width().min(img.height()) as usize;
                if side < blockiness::MIN_SIDE {
                    Err(Error::ImageTooSmall {
                        width: img.width() as usize,
                        height: img.height() as usize,
                        min: blockiness::MIN_SIDE,
                    })
                } else {
                    Ok(img)
                }
            });
            (p.clone(), image)
        })
        .collect();
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for (path, res) in decoded {
        match res {
            Ok(img) => images.push(img),
            Err(e) => skipped.push((path, e)),
        }
    }
    let basis = build_basis_from_images(name, &images, qualities, grid_size)?;
    Ok((basis, skipped))
}

/// `softmax(-kl)`, shifted by the minimum for stability.
pub fn softmax_neg(kl: &[f64]) -> Vec<f64> {
    let min = kl.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = kl.iter().map(|k| (-(k - min)).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityEstimate {
    pub q_hat: f64,
    pub qualities: Vec<f64>,
    pub weights: Vec<f64>,
    pub kl: Vec<f64>,
    pub gate: f64,
    pub accepted: bool,
}

impl QualityEstimate {
    /// Basis quality with the smallest divergence.
    pub fn best_match(&self) -> f64 {
        let (k, _) = self
            .kl
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (k, &v)| if v < best.1 { (k, v) } else { best });
        self.qualities[k]
    }
}

/// Estimates the JPEG quality of a dataset from its blockiness samples
/// (measured after a quality-1.0 round trip).
pub fn estimate_quality(samples: &[f64], basis: &BasisSet, gate: f64) -> Result<QualityEstimate> {
    let density = kde(samples, &basis.grid)?;
    let kl = basis
        .densities
        .iter()
        .map(|b| kl_divergence(&density, b))
        .collect::<Result<Vec<f64>>>()?;
    let weights = softmax_neg(&kl);
    let q_hat = basis.qualities.iter().zip(&weights).map(|(q, w)| q * w).sum();
    Ok(QualityEstimate {
        q_hat,
        qualities: basis.qualities.clone(),
        weights,
        kl,
        gate,
        accepted: q_hat >= gate,
    })
}

/// Outcome of gating one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceVerdict {
    pub name: String,
    pub estimate: QualityEstimate,
}

/// Blockiness values of the kept records, failing on any kept record that
/// lacks one.
pub fn kept_blockiness(context: &str, records: &[ImageRecord]) -> Result<Vec<f64>> {
    records
        .iter()
        .filter(|r| r.kept)
        .map(|r| {
            r.blockiness.ok_or_else(|| Error::MissingBlockiness {
                context: context.to_string(),
                path: r.path.clone(),
            })
        })
        .collect()
}

/// Partitions datasets into accepted and rejected by estimated quality.
pub fn select_sources(
    datasets: &[(String, Vec<ImageRecord>)],
    basis: &BasisSet,
    gate: f64,
) -> Result<(Vec<SourceVerdict>, Vec<SourceVerdict>)> {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (name, records) in datasets {
        let samples = kept_blockiness(name, records)?;
        let estimate = estimate_quality(&samples, basis, gate).map_err(|e| e.in_source(name))?;
        let verdict = SourceVerdict {
            name: name.clone(),
            estimate,
        };
        if verdict.estimate.accepted {
            accepted.push(verdict);
        } else {
            rejected.push(verdict);
        }
    }
    Ok((accepted, rejected))
}
