//! Gaussian kernel density estimates of blockiness values, discretized on a
//! shared uniform grid, and the KL divergence between them.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to every pmf entry before renormalization.
pub const PMF_FLOOR: f64 = 1e-12;
/// Default number of grid points.
pub const DEFAULT_GRID_SIZE: usize = 1024;
/// Smallest allowed grid.
pub const MIN_GRID_SIZE: usize = 16;

/// Scott's rule, `h = s * n^(-1/5)` with the `n - 1` sample standard deviation.
pub fn scott_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "bandwidth needs at least 2 samples, got {n}"
        )));
    }
    if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite sample {bad}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(Error::Degenerate("all samples are identical".into()));
    }
    Ok(sd * nf.powf(-0.2))
}

/// Uniform evaluation grid starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    /// `size` equally spaced points over `[0, upper]`.
    pub fn uniform(upper: f64, size: usize) -> Result<Grid> {
        if size < MIN_GRID_SIZE {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least {MIN_GRID_SIZE} points, got {size}"
            )));
        }
        if !(upper.is_finite() && upper > 0.0) {
            return Err(Error::InvalidArgument(format!("grid upper bound {upper} must be positive")));
        }
        let step = upper / (size - 1) as f64;
        let mut points: Vec<f64> = (0..size).map(|g| g as f64 * step).collect();
        points[size - 1] = upper;
        Ok(Grid { points })
    }

    /// Grid spanning `[0, 1.05 * max_sample + 3 * bandwidth]`.
    pub fn spanning(max_sample: f64, bandwidth: f64, size: usize) -> Result<Grid> {
        Grid::uniform(1.05 * max_sample.max(0.0) + 3.0 * bandwidth, size)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.points[1] - self.points[0]
    }

    pub fn upper(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

impl From<Grid> for Vec<f64> {
    fn from(grid: Grid) -> Self {
        grid.points
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Grid> {
        if points.len() < MIN_GRID_SIZE {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least {MIN_GRID_SIZE} points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("grid must be finite and strictly increasing".into()));
        }
        Ok(Grid { points })
    }
}

/// Common grid for several sample sets: the upper bound covers the largest
/// sample plus three of the widest bandwidth. Empty sets are ignored.
pub fn grid_for(sets: &[&[f64]], size: usize) -> Result<Grid> {
    let nonempty: Vec<&[f64]> = sets.iter().copied().filter(|s| !s.is_empty()).collect();
    if nonempty.is_empty() {
        return Err(Error::InvalidArgument("cannot build a grid from no samples".into()));
    }
    let mut max_sample = f64::NEG_INFINITY;
    let mut max_h = 0.0f64;
    for set in nonempty {
        max_h = max_h.max(scott_bandwidth(set)?);
        max_sample = set.iter().copied().fold(max_sample, f64::max);
    }
    Grid::spanning(max_sample, max_h, size)
}

/// Grid shared by two sample sets; `samples_b` may be empty.
pub fn make_grid(samples_a: &[f64], samples_b: &[f64], size: usize) -> Result<Grid> {
    grid_for(&[samples_a, samples_b], size)
}

#[inline]
fn gaussian(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// Continuous KDE `(1 / (h n)) sum_x K((b - x) / h)` at each point.
pub fn kde_values(samples: &[f64], bandwidth: f64, points: &[f64]) -> Vec<f64> {
    let scale = 1.0 / (bandwidth * samples.len() as f64);
    points
        .par_iter()
        .map(|&b| scale * samples.iter().map(|&x| gaussian((b - x) / bandwidth)).sum::<f64>())
        .collect()
}

/// A renormalized, floored probability mass function over a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub grid: Grid,
    pub pmf: Vec<f64>,
    pub bandwidth: f64,
    pub sample_count: usize,
}

impl Density {
    /// Builds a density from raw (unnormalized) mass, applying the floor and
    /// renormalizing.
    pub fn from_mass(grid: Grid, mass: Vec<f64>, bandwidth: f64, sample_count: usize) -> Result<Density> {
        if mass.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} mass values for a {}-point grid",
                mass.len(),
                grid.len()
            )));
        }
        let floored: Vec<f64> = mass.iter().map(|m| m.max(PMF_FLOOR)).collect();
        let total: f64 = floored.iter().sum();
        let pmf = floored.into_iter().map(|m| m / total).collect();
        Ok(Density {
            grid,
            pmf,
            bandwidth,
            sample_count,
        })
    }

    /// Index of the largest pmf entry.
    pub fn mode_index(&self) -> usize {
        self.pmf
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }

    /// Writes `grid,pmf` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "blockiness,pmf")?;
        for (b, p) in self.grid.points().iter().zip(&self.pmf) {
            writeln!(out, "{b},{p}")?;
        }
        Ok(())
    }
}

/// Fits a Gaussian KDE with Scott bandwidth and discretizes it on `grid`.
pub fn kde(samples: &[f64], grid: &Grid) -> Result<Density> {
    let h = scott_bandwidth(samples)?;
    let step = grid.step();
    let mass = kde_values(samples, h, grid.points())
        .into_iter()
        .map(|d| d * step)
        .collect();
    Density::from_mass(grid.clone(), mass, h, samples.len())
}

/// `sum_g p_g ln(p_g / q_g)` in nats.
pub fn kl_divergence(p: &Density, q: &Density) -> Result<f64> {
    if p.grid != q.grid {
        return Err(Error::GridMismatch);
    }
    kl_pmf(&p.pmf, &q.pmf)
}

/// KL divergence of two pmfs given as slices of equal length.
pub fn kl_pmf(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::GridMismatch);
    }
    Ok(p.iter()
        .zip(q)
        .map(|(&pg, &qg)| if pg > 0.0 { pg * (pg / qg).ln() } else { 0.0 })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scott_on_power_of_two() {
        // 16 values at -a and 16 at +a give n-1 variance 32a^2/31; pick a so sd = 2.
        let a = (4.0f64 * 31.0 / 32.0).sqrt();
        let samples: Vec<f64> = (0..32).map(|i| if i % 2 == 0 { -a } else { a }).collect();
        let h = scott_bandwidth(&samples).unwrap();
        assert!((h - 1.0).abs() < 1e-12, "h = {h}");
    }

    #[test]
    fn scott_rejects_degenerate() {
        assert!(matches!(scott_bandwidth(&[0.0, 0.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(matches!(scott_bandwidth(&[1.0]), Err(Error::Degenerate(_))));
        assert!(scott_bandwidth(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn grid_from_explicit_bandwidth() {
        let g = Grid::spanning(3.0, 0.5, 16).unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g.points()[0], 0.0);
        assert!((g.upper() - 4.65).abs() < 1e-12);
        let step = g.step();
        for w in g.points().windows(2) {
            assert!((w[1] - w[0] - step).abs() < 1e-12);
        }
    }

    #[test]
    fn make_grid_uses_widest_bandwidth() {
        let a = [1.0, 2.0, 3.0];
        let b = [0.5, 10.0, 20.0, 4.0];
        let g = make_grid(&a, &b, 64).unwrap();
        let h = scott_bandwidth(&b).unwrap();
        assert!((g.upper() - (21.0 + 3.0 * h)).abs() < 1e-12);
        assert_eq!(g, make_grid(&a, &b, 64).unwrap());
        let only_a = make_grid(&a, &[], 64).unwrap();
        let ha = scott_bandwidth(&a).unwrap();
        assert!((only_a.upper() - (3.15 + 3.0 * ha)).abs() < 1e-12);
        assert!(make_grid(&[], &[], 64).is_err());
        assert!(make_grid(&a, &[], 8).is_err());
    }

    #[test]
    fn mode_of_tight_cluster() {
        let samples = [4.9, 5.0, 5.05, 4.95, 5.1, 5.0];
        let grid = Grid::uniform(10.0, 1001).unwrap();
        let d = kde(&samples, &grid).unwrap();
        let nearest = grid
            .points()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 5.0).abs().partial_cmp(&(b.1 - 5.0).abs()).unwrap())
            .unwrap()
            .0;
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let near_mean = (mean / grid.step()).round() as usize;
        assert!(d.mode_index() == nearest || d.mode_index() == near_mean);
    }

    #[test]
    fn two_point_kl() {
        let kl = kl_pmf(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl - expect).abs() < 1e-15);
        assert!((kl - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn kl_requires_same_grid() {
        let a = kde(&[1.0, 2.0, 3.0], &Grid::uniform(5.0, 32).unwrap()).unwrap();
        let b = kde(&[1.0, 2.0, 3.0], &Grid::uniform(6.0, 32).unwrap()).unwrap();
        assert!(matches!(kl_divergence(&a, &b), Err(Error::GridMismatch)));
        assert!(kl_divergence(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_is_asymmetric() {
        let grid = Grid::uniform(20.0, 256).unwrap();
        let p = kde(&[1.0, 2.0, 2.5, 3.0], &grid).unwrap();
        let q = kde(&[2.0, 6.0, 9.0, 14.0, 15.0], &grid).unwrap();
        let (pq, qp) = (kl_divergence(&p, &q).unwrap(), kl_divergence(&q, &p).unwrap());
        assert!(pq > 0.0 && qp > 0.0);
        assert!((pq - qp).abs() > 1e-3);
    }

    #[test]
    fn csv_has_one_row_per_grid_point() {
        let grid = Grid::uniform(5.0, 40).unwrap();
        let d = kde(&[1.0, 2.0, 3.0], &grid).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 41);
    }

    #[test]
    fn grid_deserialization_validates() {
        let bad: std::result::Result<Grid, _> = serde_json::from_str("[0.0, 1.0]");
        assert!(bad.is_err());
        let pts: Vec<f64> = (0..20).map(f64::from).collect();
        let g: Grid = serde_json::from_str(&serde_json::to_string(&pts).unwrap()).unwrap();
        assert_eq!(g.len(), 20);
    }
}
