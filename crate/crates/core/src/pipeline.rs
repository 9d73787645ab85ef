//! End-to-end curation: scan, blockiness, basis, quality gate, region
//! filtering, statistics and reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blockiness::{self, measure};
use crate::density::{kde, Density, DEFAULT_GRID_SIZE};
use crate::error::{Error, Result};
use crate::ingest::{list_files, open_image, resolve, scan_files, DropReason, ImageRecord, CODEC_ID, DEFAULT_MIN_SIDE};
use crate::manifest::{atomic_write, write_manifest};
use crate::quality::{
    build_basis, estimate_quality, kept_blockiness, validate_qualities, BasisSet, QualityEstimate,
    DEFAULT_GATE, DEFAULT_QUALITIES,
};
use crate::regions::{apply_filters, load_sidecar_counts, FilterConfig, GraphParams, RegionCountProvider};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Sidecar,
    Graph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    /// Region-count provider the threshold was calibrated for.
    pub provider: ProviderKind,
    pub theta: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_prime: Option<f64>,
}

impl FilterSection {
    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            theta: self.theta,
            theta_prime: self.theta_prime,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub dir: PathBuf,
    /// Region counts for this source; required with the sidecar provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<PathBuf>,
}

fn default_qualities() -> Vec<f64> {
    DEFAULT_QUALITIES.to_vec()
}
fn default_gate() -> f64 {
    DEFAULT_GATE
}
fn default_min_side() -> u32 {
    DEFAULT_MIN_SIDE
}
fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

/// Curation run configuration, stored as TOML. Every key except the ones
/// needed by `run` has a default, so a partial file can supply defaults to
/// the individual subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationConfig {
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub reference_dir: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_qualities")]
    pub qualities: Vec<f64>,
    #[serde(default = "default_gate")]
    pub gate: f64,
    #[serde(default = "default_min_side")]
    pub min_side: u32,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub sample_limit: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub filter: Option<FilterSection>,
    #[serde(default)]
    pub graph: GraphParams,
}

impl Default for CurationConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl CurationConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<CurationConfig> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: origin.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    /// Loads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<CurationConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = CurationConfig::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.reference_dir.as_mut().map(fix);
        config.output_dir.as_mut().map(fix);
        for s in &mut config.sources {
            fix(&mut s.dir);
            s.sidecar.as_mut().map(fix);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Checks everything `run_curation` needs before any work starts.
    pub fn validate_for_run(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        validate_qualities(&self.qualities).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.gate.is_finite()) {
            return cfg(format!("gate {} is not finite", self.gate));
        }
        if (self.min_side as usize) < blockiness::MIN_SIDE {
            return cfg(format!(
                "min_side {} is below the {} pixels blockiness needs",
                self.min_side,
                blockiness::MIN_SIDE
            ));
        }
        if self.sample_limit.is_some() && self.seed.is_none() {
            return cfg("seed is required when sample_limit is set".into());
        }
        if self.sample_limit == Some(0) {
            return cfg("sample_limit must be positive".into());
        }
        let filter = self
            .filter
            .as_ref()
            .ok_or_else(|| Error::Config("missing [filter] section".into()))?;
        filter.filter_config().validate()?;
        match &self.reference_dir {
            Some(d) if d.is_dir() => {}
            Some(d) => return cfg(format!("reference_dir {} is not a directory", d.display())),
            None => return cfg("missing reference_dir".into()),
        }
        if self.output_dir.is_none() {
            return cfg("missing output_dir".into());
        }
        if self.sources.is_empty() {
            return cfg("no sources configured".into());
        }
        let mut names = HashSet::new();
        for s in &self.sources {
            let bad_name = s.name.is_empty()
                || s.name.starts_with('.')
                || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
            if bad_name {
                return cfg(format!("source name {:?} must be a plain file-name token", s.name));
            }
            if !names.insert(&s.name) {
                return cfg(format!("duplicate source name {}", s.name));
            }
            if !s.dir.is_dir() {
                return cfg(format!("source {}: {} is not a directory", s.name, s.dir.display()));
            }
            if filter.provider == ProviderKind::Sidecar && s.sidecar.is_none() {
                return cfg(format!("source {}: sidecar provider needs a sidecar file", s.name));
            }
        }
        Ok(())
    }
}

/// Fills `blockiness` on every kept record, measured after an optional JPEG
/// round trip at `recompress_q`.
pub fn measure_records(root: &Path, records: &[ImageRecord], recompress_q: Option<f64>) -> Result<Vec<ImageRecord>> {
    records
        .par_iter()
        .map(|r| {
            let mut out = r.clone();
            if r.kept {
                let image = open_image(&resolve(root, &r.path))?;
                out.blockiness = Some(measure(&image, recompress_q).map_err(|e| match e {
                    Error::ImageTooSmall { .. } => Error::InvalidArgument(format!("{}: {e}", r.path)),
                    other => other,
                })?);
            }
            Ok(out)
        })
        .collect()
}

/// Keeps at most `limit` of the (already sorted) files, chosen uniformly
/// with a ChaCha8 generator seeded by `seed`; original order is preserved.
pub fn subsample(files: Vec<String>, limit: usize, seed: u64) -> Vec<String> {
    if files.len() <= limit {
        return files;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, files.len(), limit).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| files[i].clone()).collect()
}

/// Table-style summary of the kept records of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub n_images: usize,
    pub avg_pixels: Option<f64>,
    pub median_blockiness: Option<f64>,
    pub avg_region_count: Option<f64>,
    pub quality_estimate: Option<QualityEstimate>,
}

/// Median with the mean-of-middle-pair convention for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Aggregates over kept records. Region counts average only when every kept
/// record has one.
pub fn compute_stats(name: &str, records: &[ImageRecord]) -> Result<DatasetStats> {
    let kept: Vec<&ImageRecord> = records.iter().filter(|r| r.kept).collect();
    let n = kept.len();
    if n == 0 {
        return Ok(DatasetStats {
            name: name.to_string(),
            n_images: 0,
            avg_pixels: None,
            median_blockiness: None,
            avg_region_count: None,
            quality_estimate: None,
        });
    }
    let blockiness = kept_blockiness(name, records)?;
    let pixels: Option<Vec<u64>> = kept.iter().map(|r| r.pixels).collect();
    let regions: Option<Vec<u64>> = kept.iter().map(|r| r.region_count).collect();
    let mean = |v: Vec<u64>| v.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
    Ok(DatasetStats {
        name: name.to_string(),
        n_images: n,
        avg_pixels: pixels.map(mean),
        median_blockiness: median(&blockiness),
        avg_region_count: regions.map(mean),
        quality_estimate: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
    NotEvaluated,
}

/// Report row for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub stats: DatasetStats,
    pub verdict: Verdict,
    pub scanned: usize,
    pub drops: BTreeMap<DropReason, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl SourceReport {
    pub fn new(stats: DatasetStats, records: &[ImageRecord], manifest: Option<String>) -> Self {
        let verdict = match &stats.quality_estimate {
            Some(e) if e.accepted => Verdict::Accepted,
            Some(_) => Verdict::Rejected,
            None => Verdict::NotEvaluated,
        };
        let mut drops = drop_reason_counts(records);
        drops.remove(&DropReason::None);
        SourceReport {
            stats,
            verdict,
            scanned: records.len(),
            drops,
            manifest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub codec: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_reference: Option<String>,
}

impl Provenance {
    pub fn current(config_hash: Option<String>, basis_reference: Option<String>) -> Self {
        Provenance {
            tool_version: TOOL_VERSION.to_string(),
            codec: CODEC_ID.to_string(),
            config_hash,
            basis_reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provenance: Provenance,
    pub sources: Vec<SourceReport>,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Fixed-width text table, one row per source.
pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>9} {:>12} {:>11} {:>10} {:>7} {:>9}",
        "Dataset", "#Images", "#Pixels", "Blockiness", "#Segments", "q_hat", "Verdict"
    );
    for s in &report.sources {
        let st = &s.stats;
        let verdict = match s.verdict {
            Verdict::Accepted => "accepted",
            Verdict::Rejected => "rejected",
            Verdict::NotEvaluated => "-",
        };
        let _ = writeln!(
            out,
            "{:<20} {:>9} {:>12} {:>11} {:>10} {:>7} {:>9}",
            st.name,
            st.n_images,
            opt(st.avg_pixels, 0),
            opt(st.median_blockiness, 2),
            opt(st.avg_region_count, 1),
            opt(st.quality_estimate.as_ref().map(|e| e.q_hat), 3),
            verdict
        );
    }
    out
}

/// Writes `report.txt`, `report.json` and one `<name>.density.csv` per curve.
pub fn export_report(report: &Report, curves: &[(String, Density)], output_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let mut written = Vec::new();

    let table = output_dir.join("report.txt");
    atomic_write(&table, render_table(report).as_bytes())?;
    written.push(table);

    let json = output_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    atomic_write(&json, text.as_bytes())?;
    written.push(json);

    for (name, density) in curves {
        let path = output_dir.join(format!("{name}.density.csv"));
        let mut buf = Vec::new();
        density.write_csv(&mut buf).map_err(|e| Error::io(&path, e))?;
        atomic_write(&path, &buf)?;
        written.push(path);
    }
    Ok(written)
}

/// One source after curation. Rejected sources keep their scanned records
/// but get no manifest on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationManifest {
    pub name: String,
    pub records: Vec<ImageRecord>,
    pub stats: DatasetStats,
    pub written_to: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub basis: BasisSet,
    pub manifests: Vec<CurationManifest>,
    pub report: Report,
}

impl RunOutput {
    pub fn any_rejected(&self) -> bool {
        self.report.sources.iter().any(|s| s.verdict == Verdict::Rejected)
    }
}

fn reference_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Runs the full curation. Outputs: `basis.json`, `<source>.jsonl` for each
/// accepted source, `report.{txt,json}` and per-source density curves.
pub fn run_curation(config: &CurationConfig) -> Result<RunOutput> {
    config.validate_for_run()?;
    let reference_dir = config.reference_dir.as_deref().expect("validated");
    let output_dir = config.output_dir.as_deref().expect("validated");
    let filter = config.filter.as_ref().expect("validated");
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;

    let ref_files: Vec<PathBuf> = list_files(reference_dir)?
        .iter()
        .map(|rel| resolve(reference_dir, rel))
        .collect();
    let (basis, _skipped) = build_basis(&reference_name(reference_dir), &ref_files, &config.qualities, config.grid_size)?;
    atomic_write(&output_dir.join("basis.json"), basis.to_json().as_bytes())?;

    let mut manifests = Vec::new();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (idx, source) in config.sources.iter().enumerate() {
        let name = source.name.as_str();
        let ctx = |e: Error| e.in_source(name);

        let mut files = list_files(&source.dir).map_err(ctx)?;
        if let (Some(limit), Some(seed)) = (config.sample_limit, config.seed) {
            files = subsample(files, limit, seed.wrapping_add(idx as u64));
        }
        let scanned = scan_files(&source.dir, files, config.min_side);
        let measured = measure_records(&source.dir, &scanned, Some(1.0)).map_err(ctx)?;

        let samples = kept_blockiness(name, &measured)?;
        let estimate = estimate_quality(&samples, &basis, config.gate).map_err(ctx)?;
        curves.push((name.to_string(), kde(&samples, &basis.grid).map_err(ctx)?));

        let (records, written_to) = if estimate.accepted {
            let provider = match filter.provider {
                ProviderKind::Graph => RegionCountProvider::Graph(config.graph),
                ProviderKind::Sidecar => {
                    let path = source.sidecar.as_deref().expect("validated");
                    RegionCountProvider::Sidecar(load_sidecar_counts(path).map_err(ctx)?)
                }
            };
            let counts = provider.counts_for(&source.dir, &measured).map_err(ctx)?;
            let filtered = apply_filters(&measured, &counts, &filter.filter_config()).map_err(ctx)?;
            let path = output_dir.join(format!("{name}.jsonl"));
            write_manifest(&path, &filtered)?;
            (filtered, Some(path))
        } else {
            (measured, None)
        };

        let mut stats = compute_stats(name, &records)?;
        stats.quality_estimate = Some(estimate);
        rows.push(SourceReport::new(
            stats.clone(),
            &records,
            written_to
                .as_ref()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned()),
        ));
        manifests.push(CurationManifest {
            name: name.to_string(),
            records,
            stats,
            written_to,
        });
    }

    let report = Report {
        provenance: Provenance::current(Some(config.hash()), Some(basis.reference_name.clone())),
        sources: rows,
    };
    export_report(&report, &curves, output_dir)?;
    Ok(RunOutput {
        basis,
        manifests,
        report,
    })
}

/// Number of records per drop reason (`none` counts kept records).
pub fn drop_reason_counts(records: &[ImageRecord]) -> BTreeMap<DropReason, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry(r.drop_reason).or_insert(0) += 1;
    }
    out
}
