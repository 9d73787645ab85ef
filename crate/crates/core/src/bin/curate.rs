use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use curate::density::{grid_for, kde};
use curate::ingest::{jpeg_encode, list_files, open_image, resolve, scan_directory};
use curate::manifest::{atomic_write, read_manifest, write_manifest};
use curate::pipeline::{
    compute_stats, export_report, measure_records, render_table, run_curation, CurationConfig,
    ProviderKind, Provenance, Report, SourceReport, Verdict,
};
use curate::quality::{build_basis, estimate_quality, kept_blockiness, BasisSet};
use curate::regions::{
    apply_filters, counts_from_records, load_sidecar_counts, FilterConfig, GraphParams,
    RegionCountProvider,
};

const EXIT_FATAL: u8 = 1;
const EXIT_REJECTED: u8 = 2;

#[derive(Parser)]
#[command(name = "curate", version, about = "Blockiness-based dataset quality gating and object-region filtering")]
struct Cli {
    /// Config file supplying defaults; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate a dataset directory into a manifest.
    Scan {
        dir: PathBuf,
        #[arg(long)]
        min_side: Option<u32>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write JPEG-recompressed copies of every decodable image.
    Compress {
        dir: PathBuf,
        #[arg(long)]
        quality: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Measure blockiness for the kept records of a manifest.
    Blockiness {
        manifest: PathBuf,
        /// Dataset root the manifest paths are relative to.
        #[arg(long, default_value = ".")]
        root: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        recompress_q: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Emit the blockiness density of a manifest as CSV.
    Density {
        manifest: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Reference distributions.
    Basis {
        #[command(subcommand)]
        action: BasisAction,
    },
    /// Estimate a dataset's JPEG quality against a basis.
    Quality {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        gate: Option<f64>,
        /// Also write the JSON result here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Attach object-region counts to a manifest.
    Regions(RegionsArgs),
    /// Apply region-count and blockiness thresholds.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        min_regions: Option<u64>,
        #[arg(long)]
        max_blockiness: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Dataset statistics, quality verdicts and density curves.
    Report {
        /// `name=path` or plain path (name taken from the file stem).
        #[arg(long = "manifest", required = true)]
        manifests: Vec<String>,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long)]
        gate: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Full curation run from a config file.
    Run,
}

#[derive(Subcommand)]
enum BasisAction {
    Build {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_delimiter = ',')]
        qualities: Option<Vec<f64>>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        name: Option<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Sidecar,
    Graph,
}

#[derive(Args)]
struct RegionsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = ".")]
    root: PathBuf,
    #[arg(long, value_enum)]
    provider: Option<Provider>,
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    min_size: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    max_side: Option<u32>,
    #[arg(short, long)]
    output: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<CurationConfig> {
    match path {
        Some(p) => CurationConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(CurationConfig::default()),
    }
}

fn print_verdict(name: &str, report_row: &SourceReport) {
    let est = report_row.stats.quality_estimate.as_ref().expect("estimate present");
    eprintln!("{:<8} {:>10} {:>10}", "quality", "weight", "KL");
    for ((q, w), kl) in est.qualities.iter().zip(&est.weights).zip(&est.kl) {
        eprintln!("{q:<8} {w:>10.4} {kl:>10.4}");
    }
    eprintln!(
        "{name}: q_hat = {:.3} -> {} (gate {})",
        est.q_hat,
        if est.accepted { "accepted" } else { "rejected" },
        est.gate
    );
}

fn execute(cli: Cli) -> Result<u8> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Scan { dir, min_side, output } => {
            let records = scan_directory(&dir, min_side.unwrap_or(config.min_side))?;
            write_manifest(&output, &records)?;
            let kept = records.iter().filter(|r| r.kept).count();
            eprintln!("scanned {} files, {kept} kept", records.len());
        }
        Command::Compress { dir, quality, output } => {
            let (mut written, mut skipped) = (0usize, 0usize);
            for rel in list_files(&dir)? {
                let image = match open_image(&resolve(&dir, &rel)) {
                    Ok(img) => img,
                    Err(e) => {
                        eprintln!("skipping {rel}: {e}");
                        skipped += 1;
                        continue;
                    }
                };
                let bytes = jpeg_encode(&image, quality)?;
                let target = resolve(&output, &rel).with_extension("jpg");
                atomic_write(&target, &bytes)?;
                written += 1;
            }
            eprintln!("wrote {written} JPEG files, skipped {skipped}");
        }
        Command::Blockiness { manifest, root, recompress_q, output } => {
            let records = read_manifest(&manifest)?;
            let measured = measure_records(&root, &records, Some(recompress_q))?;
            write_manifest(&output, &measured)?;
        }
        Command::Density { manifest, grid, output } => {
            let records = read_manifest(&manifest)?;
            let samples = kept_blockiness(&manifest.display().to_string(), &records)?;
            let grid = grid_for(&[&samples], grid.unwrap_or(config.grid_size))?;
            let density = kde(&samples, &grid)?;
            let mut buf = Vec::new();
            density.write_csv(&mut buf)?;
            atomic_write(&output, &buf)?;
        }
        Command::Basis { action: BasisAction::Build { reference, qualities, grid, name, output } } => {
            let files: Vec<PathBuf> = list_files(&reference)?
                .iter()
                .map(|rel| resolve(&reference, rel))
                .collect();
            let name = name.unwrap_or_else(|| {
                reference
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "reference".into())
            });
            let qualities = qualities.unwrap_or_else(|| config.qualities.clone());
            let (basis, skipped) =
                build_basis(&name, &files, &qualities, grid.unwrap_or(config.grid_size))?;
            for (path, err) in &skipped {
                eprintln!("skipped {}: {err}", path.display());
            }
            atomic_write(&output, basis.to_json().as_bytes())?;
            eprintln!(
                "basis {name}: {} qualities, {} images, {} skipped",
                basis.qualities.len(),
                files.len() - skipped.len(),
                skipped.len()
            );
        }
        Command::Quality { manifest, basis, gate, output } => {
            let records = read_manifest(&manifest)?;
            let basis = BasisSet::load(&basis)?;
            let name = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let samples = kept_blockiness(&name, &records)?;
            let estimate = estimate_quality(&samples, &basis, gate.unwrap_or(config.gate))?;
            let json = serde_json::to_string_pretty(&estimate)?;
            if let Some(path) = output {
                atomic_write(&path, format!("{json}\n").as_bytes())?;
            }
            let mut stats = compute_stats(&name, &records)?;
            stats.quality_estimate = Some(estimate.clone());
            print_verdict(&name, &SourceReport::new(stats, &records, None));
            println!("{json}");
            if !estimate.accepted {
                return Ok(EXIT_REJECTED);
            }
        }
        Command::Regions(args) => {
            let records = read_manifest(&args.manifest)?;
            let kind = match args.provider {
                Some(Provider::Sidecar) => ProviderKind::Sidecar,
                Some(Provider::Graph) => ProviderKind::Graph,
                None => match &config.filter {
                    Some(f) => f.provider,
                    None => bail!("--provider is required (sidecar or graph)"),
                },
            };
            let provider = match kind {
                ProviderKind::Sidecar => {
                    let path = args.sidecar.context("--sidecar is required with the sidecar provider")?;
                    RegionCountProvider::Sidecar(load_sidecar_counts(&path)?)
                }
                ProviderKind::Graph => {
                    let d = config.graph;
                    RegionCountProvider::Graph(GraphParams {
                        k: args.k.unwrap_or(d.k),
                        min_size: args.min_size.unwrap_or(d.min_size),
                        sigma: args.sigma.unwrap_or(d.sigma),
                        max_side: args.max_side.unwrap_or(d.max_side),
                    })
                }
            };
            let counts = provider.counts_for(&args.root, &records)?;
            // theta = 0 keeps everything and only attaches counts.
            let out = apply_filters(&records, &counts, &FilterConfig { theta: 0, theta_prime: None })?;
            write_manifest(&args.output, &out)?;
        }
        Command::Filter { manifest, min_regions, max_blockiness, output } => {
            let records = read_manifest(&manifest)?;
            let section = config.filter.as_ref();
            let theta = match (min_regions, section) {
                (Some(t), _) => t,
                (None, Some(f)) => f.theta,
                (None, None) => bail!("--min-regions is required"),
            };
            let filter = FilterConfig {
                theta,
                theta_prime: max_blockiness.or(section.and_then(|f| f.theta_prime)),
            };
            let out = apply_filters(&records, &counts_from_records(&records), &filter)?;
            write_manifest(&output, &out)?;
            let kept = out.iter().filter(|r| r.kept).count();
            eprintln!("{kept} of {} records kept", out.len());
        }
        Command::Report { manifests, basis, gate, output } => {
            let basis = basis.map(|p| BasisSet::load(&p)).transpose()?;
            let gate = gate.unwrap_or(config.gate);
            let mut rows = Vec::new();
            let mut curves = Vec::new();
            for spec in manifests {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(&spec);
                        let n = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(spec);
                        (n, p)
                    }
                };
                let records = read_manifest(&path)?;
                let mut stats = compute_stats(&name, &records)?;
                if let Some(basis) = &basis {
                    let samples = kept_blockiness(&name, &records)?;
                    stats.quality_estimate = Some(estimate_quality(&samples, basis, gate)?);
                    curves.push((name.clone(), kde(&samples, &basis.grid)?));
                }
                rows.push(SourceReport::new(stats, &records, path.file_name().map(|n| n.to_string_lossy().into_owned())));
            }
            let report = Report {
                provenance: Provenance::current(None, basis.as_ref().map(|b| b.reference_name.clone())),
                sources: rows,
            };
            export_report(&report, &curves, &output)?;
            print!("{}", render_table(&report));
            if report.sources.iter().any(|s| s.verdict == Verdict::Rejected) {
                return Ok(EXIT_REJECTED);
            }
        }
        Command::Run => {
            if cli.config.is_none() {
                bail!("`run` needs --config");
            }
            let out = run_curation(&config)?;
            print!("{}", render_table(&out.report));
            if out.any_rejected() {
                return Ok(EXIT_REJECTED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FATAL);
        }
    }
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}
