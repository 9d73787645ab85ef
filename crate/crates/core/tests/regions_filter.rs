use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use curate::ingest::{DropReason, ImageRecord};
use curate::regions::{
    apply_filters, filter_by_blockiness, filter_by_regions, load_sidecar_counts, parse_sidecar_counts,
    FilterConfig, RegionCounts,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hand parser for the flat `{"key": integer, ...}` layout written below.
fn second_parser(text: &str) -> BTreeMap<String, u64> {
    let body = text.trim().trim_start_matches('{').trim_end_matches('}');
    body.split(",\n")
        .filter(|s| !s.trim().is_empty())
        .map(|entry| {
            let (k, v) = entry.rsplit_once(':').unwrap();
            (k.trim().trim_matches('"').to_string(), v.trim().parse().unwrap())
        })
        .collect()
}

#[test]
fn ten_thousand_entry_sidecar() {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let mut text = String::from("{\n");
    for i in 0..10_000 {
        let sep = if i + 1 < 10_000 { ",\n" } else { "\n" };
        write!(text, "  \"part{}/img_{i:05}.jpg\": {}{sep}", i % 17, rng.random_range(0..5000u64)).unwrap();
    }
    text.push('}');
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("counts.json");
    std::fs::write(&path, &text).unwrap();
    let loaded = load_sidecar_counts(&path).unwrap();
    let oracle = second_parser(&text);
    assert_eq!(loaded.len(), 10_000);
    assert_eq!(loaded, oracle);
}

#[test]
fn sidecar_rejects_bad_values() {
    let p = Path::new("c.json");
    assert_eq!(parse_sidecar_counts(r#"{"a.jpg": 150, "b.jpg": 99}"#, p).unwrap().len(), 2);
    for bad in [r#"{"a.jpg": -3}"#, r#"{"a.jpg": 1.5}"#, r#"{"a.jpg": "7"}"#, "[1, 2]", r#"{"a": 1, "a": 2}"#] {
        assert!(parse_sidecar_counts(bad, p).is_err(), "{bad}");
    }
}

#[test]
fn inclusive_boundaries() {
    let records: Vec<ImageRecord> = ["a", "b", "c"].iter().map(|p| ImageRecord::decoded(*p, 300, 300)).collect();
    let counts: RegionCounts = [("a", 150), ("b", 99), ("c", 100)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let out = filter_by_regions(&records, &counts, 100).unwrap();
    assert_eq!(kept(&out), ["a", "c"].iter().map(|s| s.to_string()).collect());

    let records: Vec<ImageRecord> = [1.0, 29.9, 30.0, 31.0]
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let mut r = ImageRecord::decoded(format!("{i}"), 300, 300);
            r.blockiness = Some(b);
            r
        })
        .collect();
    let out = filter_by_blockiness(&records, Some(30.0)).unwrap();
    assert_eq!(kept(&out).len(), 3);
    assert_eq!(out[3].drop_reason, DropReason::AboveBlockinessThreshold);
}

fn kept(records: &[ImageRecord]) -> BTreeSet<String> {
    records.iter().filter(|r| r.kept).map(|r| r.path.clone()).collect()
}

fn arb_manifest() -> impl Strategy<Value = (Vec<ImageRecord>, RegionCounts)> {
    prop::collection::vec((0u64..200, 0.0f64..60.0, 0u8..10), 0..80).prop_map(|rows| {
        let mut counts = RegionCounts::new();
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(i, (c, b, kind))| {
                let path = format!("{i:03}.jpg");
                let mut r = ImageRecord::decoded(&path, 300, 300);
                r.blockiness = Some(b);
                match kind {
                    0 => r = ImageRecord::undecodable(&path),
                    1 => r.drop_with(DropReason::TooSmall),
                    _ => {
                        counts.insert(path, c);
                    }
                }
                r
            })
            .collect();
        (records, counts)
    })
}

proptest! {
    #[test]
    fn filters_are_idempotent_and_preserve_values((records, counts) in arb_manifest(), theta in 0u64..200, limit in 0.0f64..60.0) {
        let once = filter_by_regions(&records, &counts, theta).unwrap();
        prop_assert_eq!(&filter_by_regions(&once, &counts, theta).unwrap(), &once);
        let b_once = filter_by_blockiness(&records, Some(limit)).unwrap();
        prop_assert_eq!(&filter_by_blockiness(&b_once, Some(limit)).unwrap(), &b_once);
        for (before, after) in records.iter().zip(&once) {
            prop_assert_eq!(before.blockiness, after.blockiness);
            prop_assert_eq!(&before.path, &after.path);
        }
        for (before, after) in records.iter().zip(&b_once) {
            prop_assert_eq!(before.blockiness, after.blockiness);
            prop_assert_eq!(before.region_count, after.region_count);
        }
    }

    #[test]
    fn thresholds_are_monotone((records, counts) in arb_manifest(), t1 in 0u64..200, t2 in 0u64..200, l1 in 0.0f64..60.0, l2 in 0.0f64..60.0) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let k_lo = kept(&filter_by_regions(&records, &counts, lo).unwrap());
        let k_hi = kept(&filter_by_regions(&records, &counts, hi).unwrap());
        prop_assert!(k_hi.is_subset(&k_lo));
        let (small, large) = (l1.min(l2), l1.max(l2));
        let b_small = kept(&filter_by_blockiness(&records, Some(small)).unwrap());
        let b_large = kept(&filter_by_blockiness(&records, Some(large)).unwrap());
        prop_assert!(b_small.is_subset(&b_large));
    }

    #[test]
    fn filters_commute_and_match_composition((records, counts) in arb_manifest(), theta in 0u64..200, limit in 0.0f64..60.0) {
        let a = filter_by_blockiness(&filter_by_regions(&records, &counts, theta).unwrap(), Some(limit)).unwrap();
        let b = filter_by_regions(&filter_by_blockiness(&records, Some(limit)).unwrap(), &counts, theta).unwrap();
        prop_assert_eq!(kept(&a), kept(&b));
        let composed = apply_filters(&records, &counts, &FilterConfig { theta, theta_prime: Some(limit) }).unwrap();
        let oracle: BTreeSet<String> = records
            .iter()
            .filter(|r| r.kept && counts[&r.path] >= theta && r.blockiness.unwrap() <= limit)
            .map(|r| r.path.clone())
            .collect();
        prop_assert_eq!(kept(&composed), oracle);
    }
}
