//! JSON Lines manifests: one [`ImageRecord`] per line.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::ingest::{DropReason, ImageRecord};

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn to_jsonl(records: &[ImageRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, records: &[ImageRecord]) -> Result<()> {
    atomic_write(path, to_jsonl(records).as_bytes())
}

fn check_record(r: &ImageRecord) -> std::result::Result<(), String> {
    if r.kept && r.drop_reason != DropReason::None {
        return Err(format!("{}: kept record has drop_reason {:?}", r.path, r.drop_reason));
    }
    if !r.kept && r.drop_reason == DropReason::None {
        return Err(format!("{}: dropped record has no drop_reason", r.path));
    }
    if let (Some(w), Some(h), Some(p)) = (r.width, r.height, r.pixels) {
        if u64::from(w) * u64::from(h) != p {
            return Err(format!("{}: pixels {p} != {w} x {h}", r.path));
        }
    }
    if r.width == Some(0) || r.height == Some(0) {
        return Err(format!("{}: zero dimension", r.path));
    }
    if let Some(b) = r.blockiness {
        if !(b.is_finite() && b >= 0.0) {
            return Err(format!("{}: invalid blockiness {b}", r.path));
        }
    }
    Ok(())
}

/// Reads records from a JSON Lines stream, skipping blank lines. `origin`
/// names the stream in errors.
pub fn read_records<R: Read>(reader: R, origin: &Path) -> Result<Vec<ImageRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ImageRecord =
            serde_json::from_str(&line).map_err(|e| err(line_no, e.to_string()))?;
        check_record(&record).map_err(|m| err(line_no, m))?;
        if !seen.insert(record.path.clone()) {
            return Err(err(line_no, format!("duplicate path {}", record.path)));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, path)
}
