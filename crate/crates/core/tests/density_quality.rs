mod common;

use std::sync::OnceLock;

use curate::blockiness::measure;
use curate::density::{grid_for, kde, kl_divergence, kl_pmf, scott_bandwidth, Grid};
use curate::ingest::ImageRecord;
use curate::quality::{
    build_basis_from_images, estimate_quality, select_sources, softmax_neg, BasisSet, DEFAULT_QUALITIES,
};
use image::DynamicImage;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use common::{degrade, image_set};

fn clean_reference() -> &'static Vec<DynamicImage> {
    static SET: OnceLock<Vec<DynamicImage>> = OnceLock::new();
    SET.get_or_init(|| image_set(11, 20))
}

fn basis(grid: usize) -> BasisSet {
    build_basis_from_images("clean", clean_reference(), &DEFAULT_QUALITIES, grid).unwrap()
}

fn degraded_samples(seed: u64, q: f64) -> Vec<f64> {
    image_set(seed, 20)
        .par_iter()
        .map(|i| measure(&degrade(i, q), Some(1.0)).unwrap())
        .collect()
}

proptest! {
    #[test]
    fn pmf_is_normalized_and_deterministic(samples in prop::collection::vec(0.0f64..500.0, 2..60), size in 16usize..400) {
        prop_assume!(scott_bandwidth(&samples).is_ok());
        let grid = grid_for(&[&samples], size).unwrap();
        let a = kde(&samples, &grid).unwrap();
        let b = kde(&samples, &grid).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.pmf.iter().all(|&p| p > 0.0));
        prop_assert!((a.pmf.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(a.pmf.len(), size);
    }

    #[test]
    fn kl_nonnegative_and_zero_on_equal(p in prop::collection::vec(1e-12f64..1.0, 2..50), q_seed in any::<u64>()) {
        let total: f64 = p.iter().sum();
        let p: Vec<f64> = p.iter().map(|v| v / total).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(q_seed);
        let q: Vec<f64> = p.iter().map(|_| rand::Rng::random_range(&mut rng, 1e-12..1.0)).collect();
        let qt: f64 = q.iter().sum();
        let q: Vec<f64> = q.iter().map(|v| v / qt).collect();
        prop_assert!(kl_pmf(&p, &q).unwrap() >= -1e-15);
        prop_assert!(kl_pmf(&p, &p).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn softmax_weights(kl in prop::collection::vec(0.0f64..50.0, 1..8), shift in -20.0f64..20.0) {
        let w = softmax_neg(&kl);
        prop_assert!(w.iter().all(|&x| x > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let shifted: Vec<f64> = kl.iter().map(|k| k + shift).collect();
        for (a, b) in w.iter().zip(softmax_neg(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn scott_matches_textbook_on_thousand_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let dist = Gamma::new(2.0, 3.0).unwrap();
    let x: Vec<f64> = (0..1000).map(|_| dist.sample(&mut rng)).collect();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let h = var.sqrt() / n.powf(0.2);
    assert!((scott_bandwidth(&x).unwrap() - h).abs() <= 1e-12 * h);
}

#[test]
fn kl_is_asymmetric_on_skewed_pair() {
    let grid = Grid::uniform(10.0, 64).unwrap();
    let p = kde(&[1.0, 1.2, 1.4, 5.0], &grid).unwrap();
    let q = kde(&[3.0, 4.0, 5.0, 6.0, 7.0], &grid).unwrap();
    let (a, b) = (kl_divergence(&p, &q).unwrap(), kl_divergence(&q, &p).unwrap());
    assert!((a - b).abs() > 1e-3, "{a} vs {b}");
}

#[test]
fn basis_is_bit_identical_on_rebuild() {
    let a = basis(512);
    let b = basis(512);
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.densities.len(), DEFAULT_QUALITIES.len());
    assert!(a.densities.iter().all(|d| d.grid == a.grid));
}

#[test]
fn low_quality_basis_has_higher_median() {
    let set = clean_reference();
    let median = |q: f64| {
        let mut b: Vec<f64> = set.iter().map(|i| measure(i, Some(q)).unwrap()).collect();
        b.sort_by(f64::total_cmp);
        (b[9] + b[10]) / 2.0
    };
    assert!(median(0.5) > median(1.0));
}

#[test]
fn reference_itself_weights_highest_quality() {
    let basis = basis(1024);
    let samples: Vec<f64> = clean_reference().iter().map(|i| measure(i, Some(1.0)).unwrap()).collect();
    let est = estimate_quality(&samples, &basis, 0.9).unwrap();
    assert_eq!(est.best_match(), 1.0);
    assert!(est.kl[0].abs() < 1e-12);
    assert!(est.accepted);
}

#[test]
fn degraded_set_matches_kl_table_oracle() {
    let basis = basis(1024);
    let samples = degraded_samples(12, 0.5);
    let est = estimate_quality(&samples, &basis, 0.9).unwrap();

    // Independent KL table.
    let points = basis.grid.points();
    let dx = points[1] - points[0];
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let h = sd * n.powf(-0.2);
    let mut p: Vec<f64> = points
        .iter()
        .map(|&b| {
            let s: f64 = samples
                .iter()
                .map(|&x| (-0.5 * ((b - x) / h).powi(2)).exp())
                .sum();
            (s / (n * h * (2.0 * std::f64::consts::PI).sqrt()) * dx).max(1e-12)
        })
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    let table: Vec<f64> = basis
        .densities
        .iter()
        .map(|d| p.iter().zip(&d.pmf).map(|(a, b)| a * (a / b).ln()).sum())
        .collect();
    for (a, b) in table.iter().zip(&est.kl) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }
    let argmin = table
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    assert_eq!(basis.qualities[argmin], 0.5);
    assert_eq!(est.best_match(), 0.5);
    assert!(!est.accepted);
}

#[test]
fn grid_doubling_changes_kl_by_under_five_percent() {
    let coarse = basis(512);
    let fine = basis(1024);
    for (seed, &q) in (20u64..).zip(DEFAULT_QUALITIES.iter()) {
        let samples = degraded_samples(seed, q);
        let a = estimate_quality(&samples, &coarse, 0.9).unwrap();
        let b = estimate_quality(&samples, &fine, 0.9).unwrap();
        for (x, y) in a.kl.iter().zip(&b.kl) {
            let rel = (x - y).abs() / y.abs().max(1e-12);
            assert!(rel < 0.05, "q={q}: KL {x} at G=512 vs {y} at G=1024");
        }
    }
}

fn as_records(prefix: &str, samples: &[f64]) -> Vec<ImageRecord> {
    samples
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let mut r = ImageRecord::decoded(format!("{prefix}/{i}.jpg"), 300, 300);
            r.blockiness = Some(b);
            r
        })
        .collect()
}

#[test]
fn select_sources_partitions_inputs() {
    let basis = basis(1024);
    let datasets = vec![
        ("clean".to_string(), as_records("c", &degraded_samples(30, 1.0))),
        ("degraded".to_string(), as_records("d", &degraded_samples(31, 0.5))),
        ("mid".to_string(), as_records("m", &degraded_samples(32, 0.85))),
    ];
    let (accepted, rejected) = select_sources(&datasets, &basis, 0.9).unwrap();
    let mut names: Vec<&str> = accepted.iter().chain(&rejected).map(|v| v.name.as_str()).collect();
    assert_eq!(accepted.len() + rejected.len(), datasets.len());
    names.sort();
    assert_eq!(names, ["clean", "degraded", "mid"]);
    assert!(accepted.iter().any(|v| v.name == "clean"));
    assert!(rejected.iter().any(|v| v.name == "degraded"));

    let (all, none) = select_sources(&datasets, &basis, 0.0).unwrap();
    assert_eq!((all.len(), none.len()), (3, 0));
    let (a, r) = select_sources(&[], &basis, 0.9).unwrap();
    assert!(a.is_empty() && r.is_empty());
    for v in accepted.iter().chain(&rejected) {
        assert!((0.5..=1.0).contains(&v.estimate.q_hat));
    }
}
