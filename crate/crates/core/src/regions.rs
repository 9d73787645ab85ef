//! Object-region counts and the manifest filters built on them.
//!
//! Counts come either from a sidecar JSON file produced by an external
//! segmenter or detector, or from a built-in graph-based segmenter
//! (Felzenszwalb-Huttenlocher over the 4-connected pixel grid) used as a
//! classical proxy.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use rayon::prelude::*;
use serde::de::{self, DeserializeSeed, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{open_image, resolve, DropReason, ImageRecord};

pub type RegionCounts = BTreeMap<String, u64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphParams {
    pub k: f64,
    pub min_size: usize,
    pub sigma: f64,
    pub max_side: u32,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            k: 300.0,
            min_size: 20,
            sigma: 0.8,
            max_side: 512,
        }
    }
}

/// Source of per-image region counts.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionCountProvider {
    Sidecar(RegionCounts),
    Graph(GraphParams),
}

impl RegionCountProvider {
    pub fn name(&self) -> &'static str {
        match self {
            RegionCountProvider::Sidecar(_) => "sidecar",
            RegionCountProvider::Graph(_) => "graph",
        }
    }

    /// Region counts for every kept record. Sidecar entries for other
    /// records are passed through when present.
    pub fn counts_for(&self, root: &Path, records: &[ImageRecord]) -> Result<RegionCounts> {
        match self {
            RegionCountProvider::Sidecar(map) => {
                let mut out = RegionCounts::new();
                for r in records {
                    match map.get(&r.path) {
                        Some(&c) => {
                            out.insert(r.path.clone(), c);
                        }
                        None if r.kept => {
                            return Err(Error::MissingRegionCount {
                                path: r.path.clone(),
                            })
                        }
                        None => {}
                    }
                }
                Ok(out)
            }
            RegionCountProvider::Graph(params) => records
                .par_iter()
                .filter(|r| r.kept)
                .map(|r| {
                    let image = open_image(&resolve(root, &r.path))?;
                    Ok((r.path.clone(), count_regions_graph(&image, params)))
                })
                .collect::<Result<Vec<_>>>()
                .map(|pairs| pairs.into_iter().collect()),
        }
    }
}

/// Minimum region count `theta` and optional maximum blockiness `theta_prime`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub theta: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_prime: Option<f64>,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        match self.theta_prime {
            Some(t) if t.is_nan() || t < 0.0 => Err(Error::Config(format!(
                "max blockiness must be nonnegative, got {t}"
            ))),
            _ => Ok(()),
        }
    }
}

struct CountsSeed;

impl<'de> DeserializeSeed<'de> for CountsSeed {
    type Value = RegionCounts;

    fn deserialize<D: de::Deserializer<'de>>(self, d: D) -> std::result::Result<RegionCounts, D::Error> {
        d.deserialize_map(CountsVisitor)
    }
}

struct CountsVisitor;

impl<'de> Visitor<'de> for CountsVisitor {
    type Value = RegionCounts;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a JSON object mapping image paths to nonnegative integer counts")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RegionCounts, A::Error> {
        let mut out = RegionCounts::new();
        while let Some(key) = map.next_key::<String>()? {
            if out.contains_key(&key) {
                return Err(de::Error::custom(format!("duplicate key {key:?}")));
            }
            let value: serde_json::Number = map.next_value()?;
            let count = match value.as_u64() {
                Some(c) => c,
                None if value.as_i64().is_some() => {
                    return Err(de::Error::custom(format!("negative count {value} for {key:?}")))
                }
                None => {
                    return Err(de::Error::custom(format!("non-integer count {value} for {key:?}")))
                }
            };
            out.insert(key, count);
        }
        Ok(out)
    }
}

/// Parses sidecar JSON text; errors carry the line they occurred on.
pub fn parse_sidecar_counts(text: &str, origin: &Path) -> Result<RegionCounts> {
    let mut de = serde_json::Deserializer::from_str(text);
    let to_err = |e: serde_json::Error| Error::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    };
    let counts = CountsSeed.deserialize(&mut de).map_err(to_err)?;
    de.end().map_err(to_err)?;
    Ok(counts)
}

pub fn load_sidecar_counts(path: &Path) -> Result<RegionCounts> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sidecar_counts(&text, path)
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Joins two roots, returning the new root.
    fn join(&mut self, a: usize, b: usize) -> usize {
        let (hi, lo) = if self.rank[a] >= self.rank[b] { (a, b) } else { (b, a) };
        self.parent[lo] = hi;
        self.size[hi] += self.size[lo];
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        hi
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub w: f64,
}

/// Graph segmentation over an explicit edge list. Returns the component
/// count after small components are absorbed.
pub fn segment_edges(nodes: usize, mut edges: Vec<Edge>, k: f64, min_size: usize) -> usize {
    edges.sort_by(|x, y| x.w.total_cmp(&y.w));
    let mut set = DisjointSet::new(nodes);
    let mut threshold = vec![k; nodes];
    for e in &edges {
        let (a, b) = (set.find(e.a), set.find(e.b));
        if a != b && e.w <= threshold[a] && e.w <= threshold[b] {
            let root = set.join(a, b);
            threshold[root] = e.w + k / set.size[root] as f64;
        }
    }
    for e in &edges {
        let (a, b) = (set.find(e.a), set.find(e.b));
        if a != b && (set.size[a] < min_size || set.size[b] < min_size) {
            set.join(a, b);
        }
    }
    (0..nodes).filter(|&i| set.find(i) == i).count()
}

fn gaussian_mask(sigma: f64) -> Vec<f64> {
    let len = (sigma * 4.0).ceil() as usize + 1;
    let mut mask: Vec<f64> = (0..len).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let sum = 2.0 * mask.iter().sum::<f64>() - mask[0];
    mask.iter_mut().for_each(|m| *m /= sum);
    mask
}

/// Separable Gaussian smoothing with edge clamping.
fn smooth(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let mask = gaussian_mask(sigma);
    let conv = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for y in 0..height {
            for x in 0..width {
                let at = |d: isize| {
                    if along_x {
                        let xx = (x as isize + d).clamp(0, width as isize - 1) as usize;
                        src[y * width + xx]
                    } else {
                        let yy = (y as isize + d).clamp(0, height as isize - 1) as usize;
                        src[yy * width + x]
                    }
                };
                let mut acc = mask[0] * at(0);
                for (i, m) in mask.iter().enumerate().skip(1) {
                    acc += m * (at(-(i as isize)) + at(i as isize));
                }
                dst[y * width + x] = acc;
            }
        }
        dst
    };
    conv(&conv(plane, true), false)
}

/// Counts regions with the graph-based segmenter.
pub fn count_regions_graph(image: &DynamicImage, params: &GraphParams) -> u64 {
    let mut rgb = image.to_rgb8();
    let (w0, h0) = rgb.dimensions();
    let longest = w0.max(h0);
    if longest > params.max_side && params.max_side > 0 {
        let scale = f64::from(params.max_side) / f64::from(longest);
        let nw = ((f64::from(w0) * scale).round() as u32).clamp(1, params.max_side);
        let nh = ((f64::from(h0) * scale).round() as u32).clamp(1, params.max_side);
        rgb = image::imageops::resize(&rgb, nw, nh, FilterType::Triangle);
    }
    let (width, height) = (rgb.width() as usize, rgb.height() as usize);
    let mut planes: [Vec<f64>; 3] = Default::default();
    for (c, plane) in planes.iter_mut().enumerate() {
        *plane = rgb.pixels().map(|p| f64::from(p[c])).collect();
        if params.sigma > 0.0 {
            *plane = smooth(plane, width, height, params.sigma);
        }
    }
    let diff = |a: usize, b: usize| {
        planes
            .iter()
            .map(|p| (p[a] - p[b]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut edges = Vec::with_capacity(2 * width * height);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if x + 1 < width {
                edges.push(Edge { a: i, b: i + 1, w: diff(i, i + 1) });
            }
            if y + 1 < height {
                edges.push(Edge { a: i, b: i + width, w: diff(i, i + width) });
            }
        }
    }
    segment_edges(width * height, edges, params.k, params.min_size) as u64
}

/// Region counts already recorded on the manifest.
pub fn counts_from_records(records: &[ImageRecord]) -> RegionCounts {
    records
        .iter()
        .filter_map(|r| r.region_count.map(|c| (r.path.clone(), c)))
        .collect()
}

/// Drops kept records with fewer than `theta` regions. Every record with a
/// known count gets `region_count` filled in.
pub fn filter_by_regions(records: &[ImageRecord], counts: &RegionCounts, theta: u64) -> Result<Vec<ImageRecord>> {
    records
        .iter()
        .map(|r| {
            let mut out = r.clone();
            match counts.get(&r.path) {
                Some(&c) => {
                    out.region_count = Some(c);
                    if out.kept && c < theta {
                        out.drop_with(DropReason::BelowRegionThreshold);
                    }
                }
                None if r.kept => {
                    return Err(Error::MissingRegionCount {
                        path: r.path.clone(),
                    })
                }
                None => {}
            }
            Ok(out)
        })
        .collect()
}

/// Drops kept records whose blockiness exceeds `theta_prime`; `None` keeps
/// everything.
pub fn filter_by_blockiness(records: &[ImageRecord], theta_prime: Option<f64>) -> Result<Vec<ImageRecord>> {
    let limit = theta_prime.unwrap_or(f64::INFINITY);
    records
        .iter()
        .map(|r| {
            let mut out = r.clone();
            if r.kept {
                let b = r.blockiness.ok_or_else(|| Error::MissingBlockiness {
                    context: "blockiness filter".into(),
                    path: r.path.clone(),
                })?;
                if b > limit {
                    out.drop_with(DropReason::AboveBlockinessThreshold);
                }
            }
            Ok(out)
        })
        .collect()
}

/// Region filter followed by the optional blockiness filter.
pub fn apply_filters(records: &[ImageRecord], counts: &RegionCounts, config: &FilterConfig) -> Result<Vec<ImageRecord>> {
    config.validate()?;
    let by_regions = filter_by_regions(records, counts, config.theta)?;
    match config.theta_prime {
        Some(_) => filter_by_blockiness(&by_regions, config.theta_prime),
        None => Ok(by_regions),
    }
}
