//! Dataset ingestion, preprocessing, and the two dataset statistics the
//! generation reward needs (k-means cluster centers, on-pixel-count
//! Gaussian fit).
//!
//! Every loaded image ends up as a binary `GRID x GRID` canvas with
//! ink-is-one polarity: strokes are 1, background is 0.

mod idx;
mod kmeans;
mod omniglot;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::num::Real;
use crate::raster::Canvas;

pub use idx::{load_idx_images, load_idx_labels};
pub use kmeans::{compute_cluster_centers, ClusterCenters};
pub use omniglot::{
    load_omniglot, read_manifest, OMNIGLOT_BACKGROUND_ALPHABETS, OMNIGLOT_EVALUATION_ALPHABETS,
};

/// Binarization threshold applied after rescaling intensities to [0, 1].
pub const THETA_BIN: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset path not found: {0}")]
    MissingPath(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("truncated IDX file: {0}")]
    Truncated(PathBuf),
    #[error("image decode failure on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown dataset name: {0} (expected mnist or omniglot)")]
    UnknownDataset(String),
    #[error("on-pixel counts have zero variance")]
    ZeroVariance,
    #[error("k-means k={k} exceeds dataset size {n}")]
    KTooLarge { k: usize, n: usize },
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

// ============================================================================
// Dataset description and container
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Omniglot,
}

impl DatasetKind {
    pub fn parse(name: &str) -> Result<Self, DataError> {
        match name.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "omniglot" => Ok(DatasetKind::Omniglot),
            other => Err(DataError::UnknownDataset(other.to_string())),
        }
    }
}

/// Loader input: which dataset, where it lives, which split.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub name: String,
    pub root_path: PathBuf,
    pub split: Split,
}

/// A loaded dataset: binarized canvases plus labels and (for Omniglot)
/// per-alphabet grouping.
#[derive(Debug, Clone)]
pub struct Dataset<S: Real> {
    pub name: String,
    pub split: Split,
    pub canvases: Vec<Canvas<S>>,
    /// MNIST: digit class. Omniglot: alphabet index into `groups`.
    pub labels: Vec<u32>,
    /// Omniglot only: (alphabet name, contiguous canvas index range).
    pub groups: Vec<(String, std::ops::Range<usize>)>,
}

impl<S: Real> Dataset<S> {
    pub fn image_count(&self) -> usize {
        self.canvases.len()
    }
}

/// Loads a dataset, rescales every image to `side x side`, and binarizes it
/// with ink-is-one polarity.
pub fn load_dataset<S: Real>(spec: &DatasetSpec, side: usize) -> Result<Dataset<S>, DataError> {
    if !spec.root_path.exists() {
        return Err(DataError::MissingPath(spec.root_path.clone()));
    }
    let dataset = match DatasetKind::parse(&spec.name)? {
        DatasetKind::Mnist => idx::load_mnist(&spec.root_path, spec.split, side)?,
        DatasetKind::Omniglot => omniglot::load_omniglot(&spec.root_path, spec.split, side, None)?,
    };
    if dataset.canvases.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(dataset)
}

// ============================================================================
// Preprocessing
// ============================================================================

/// Area-averaging resample of a `src_h x src_w` intensity grid (row-major,
/// values in [0, 1]) to `side x side`. Exact pixel-area weighting, so it
/// works in both directions and preserves the image mean.
pub fn resample_area(src: &[f64], src_h: usize, src_w: usize, side: usize) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    let sy = src_h as f64 / side as f64;
    let sx = src_w as f64 / side as f64;
    for row in 0..side {
        let y0 = row as f64 * sy;
        let y1 = (row + 1) as f64 * sy;
        for col in 0..side {
            let x0 = col as f64 * sx;
            let x1 = (col + 1) as f64 * sx;
            let mut acc = 0.0;
            let r_lo = y0.floor() as usize;
            let r_hi = (y1.ceil() as usize).min(src_h);
            let c_lo = x0.floor() as usize;
            let c_hi = (x1.ceil() as usize).min(src_w);
            for r in r_lo..r_hi {
                let oy = (y1.min((r + 1) as f64) - y0.max(r as f64)).max(0.0);
                for c in c_lo..c_hi {
                    let ox = (x1.min((c + 1) as f64) - x0.max(c as f64)).max(0.0);
                    acc += src[r * src_w + c] * oy * ox;
                }
            }
            out[row * side + col] = acc / (sy * sx);
        }
    }
    out
}

/// Rescales + binarizes one grayscale image into a canvas.
///
/// `invert` flips polarity first (for datasets drawn as dark ink on a light
/// background), so on-pixels always mean ink.
pub fn canvas_from_gray<S: Real>(
    gray: &[f64],
    src_h: usize,
    src_w: usize,
    side: usize,
    invert: bool,
) -> Canvas<S> {
    let src: Vec<f64> = if invert {
        gray.iter().map(|&v| 1.0 - v).collect()
    } else {
        gray.to_vec()
    };
    let resized = resample_area(&src, src_h, src_w, side);
    let mut canvas = Canvas::zeros(side);
    for row in 0..side {
        for col in 0..side {
            if resized[row * side + col] >= THETA_BIN {
                canvas.set(row, col, S::one());
            }
        }
    }
    canvas
}

// ============================================================================
// Pixel-count statistics
// ============================================================================

/// Gaussian fit of the on-pixel counts of a dataset: the parameters of the
/// count-conformity reward term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCountStats<S: Real> {
    pub mu: S,
    pub sigma: S,
}

impl<S: Real> PixelCountStats<S> {
    /// Gaussian density at an on-pixel count.
    pub fn density(&self, count: usize) -> S {
        let mu = self.mu.as_f64();
        let sigma = self.sigma.as_f64();
        let z = (count as f64 - mu) / sigma;
        S::of_f64((-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt()))
    }
}

/// Fits mean and population standard deviation to the on-pixel counts.
pub fn fit_pixel_stats<S: Real>(
    canvases: &[Canvas<S>],
    theta_on: S,
) -> Result<PixelCountStats<S>, DataError> {
    if canvases.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let counts: Vec<f64> = canvases
        .iter()
        .map(|c| c.on_pixel_count(theta_on) as f64)
        .collect();
    let n = counts.len() as f64;
    let mu = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|&c| (c - mu) * (c - mu)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(DataError::ZeroVariance);
    }
    Ok(PixelCountStats {
        mu: S::of_f64(mu),
        sigma: S::of_f64(var.sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GRID;

    fn canvas_with_count(count: usize) -> Canvas<f64> {
        let mut c = Canvas::zeros(GRID);
        for i in 0..count {
            c.set(i / GRID, i % GRID, 1.0);
        }
        c
    }

    #[test]
    fn pixel_stats_two_point() {
        let stats =
            fit_pixel_stats(&[canvas_with_count(10), canvas_with_count(20)], 0.5).unwrap();
        assert_eq!(stats.mu, 15.0);
        assert_eq!(stats.sigma, 5.0);
    }

    #[test]
    fn pixel_stats_zero_variance_errors() {
        let cs = vec![canvas_with_count(7); 3];
        assert!(matches!(
            fit_pixel_stats(&cs, 0.5),
            Err(DataError::ZeroVariance)
        ));
    }

    #[test]
    fn pixel_stats_empty_errors() {
        let cs: Vec<Canvas<f64>> = vec![];
        assert!(matches!(
            fit_pixel_stats(&cs, 0.5),
            Err(DataError::EmptyDataset)
        ));
    }

    #[test]
    fn pixel_stats_matches_single_pass_oracle() {
        // 1000 canvases with synthetic counts; oracle accumulates sum and
        // sum of squares in one pass.
        let counts: Vec<usize> = (0..1000).map(|i| (i * 37 + 11) % 900).collect();
        let canvases: Vec<Canvas<f64>> =
            counts.iter().map(|&c| canvas_with_count(c)).collect();
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for &c in &counts {
            s += c as f64;
            s2 += (c * c) as f64;
        }
        let n = counts.len() as f64;
        let mu = s / n;
        let sigma = (s2 / n - mu * mu).sqrt();

        let stats = fit_pixel_stats(&canvases, 0.5).unwrap();
        assert!((stats.mu - mu).abs() / mu <= 1e-9);
        assert!((stats.sigma - sigma).abs() / sigma <= 1e-9);
    }

    #[test]
    fn pixel_stats_permutation_invariant() {
        let counts = [10usize, 40, 90, 160, 250];
        let forward: Vec<Canvas<f64>> = counts.iter().map(|&c| canvas_with_count(c)).collect();
        let backward: Vec<Canvas<f64>> =
            counts.iter().rev().map(|&c| canvas_with_count(c)).collect();
        assert_eq!(
            fit_pixel_stats(&forward, 0.5).unwrap(),
            fit_pixel_stats(&backward, 0.5).unwrap()
        );
    }

    #[test]
    fn gaussian_density_peak() {
        let stats = PixelCountStats { mu: 100.0f64, sigma: 25.0 };
        let peak = stats.density(100);
        assert!((peak - 1.0 / (25.0 * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-12);
        assert!(stats.density(50) < peak);
    }

    #[test]
    fn resample_preserves_mean_and_constants() {
        let src = vec![0.25; 28 * 28];
        let out = resample_area(&src, 28, 28, 32);
        for v in &out {
            assert!((v - 0.25).abs() < 1e-12);
        }

        let src: Vec<f64> = (0..64 * 64).map(|i| (i % 7) as f64 / 6.0).collect();
        let out = resample_area(&src, 64, 64, 32);
        let mean_src = src.iter().sum::<f64>() / src.len() as f64;
        let mean_out = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean_src - mean_out).abs() < 1e-9);
    }

    #[test]
    fn all_white_source_becomes_empty_canvas() {
        // White-background datasets are inverted to ink-is-one first.
        let gray = vec![1.0; 105 * 105];
        let canvas: Canvas<f64> = canvas_from_gray(&gray, 105, 105, GRID, true);
        assert_eq!(canvas.on_pixel_count(0.5), 0);
    }
}
