//! Dataset curation for super-resolution training data.
//!
//! The pipeline measures JPEG blocking artifacts per image, estimates how
//! heavily a whole dataset has been compressed by matching its blockiness
//! distribution against reference distributions at known qualities, rejects
//! low-quality datasets, and keeps only images with enough object regions.

pub mod blockiness;
pub mod density;
pub mod error;
pub mod ingest;
pub mod manifest;
pub mod pipeline;
pub mod quality;
pub mod regions;
pub mod synth;

pub use error::{Error, Result};
