//! MNIST IDX file pair: big-endian magic 0x00000803 for images and
//! 0x00000801 for labels.

use std::fs;
use std::path::Path;

use super::{canvas_from_gray, DataError, Dataset, Split};
use crate::num::Real;
use crate::raster::Canvas;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Truncated(path.to_path_buf()));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image file into (count, rows, cols, pixels).
pub fn load_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(DataError::Truncated(path.to_path_buf()));
    }
    Ok((count, rows, cols, bytes[16..expected].to_vec()))
}

/// Parses an IDX label file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() < 8 + count {
        return Err(DataError::Truncated(path.to_path_buf()));
    }
    Ok(bytes[8..8 + count].to_vec())
}

fn pick<'a>(root: &Path, names: &[&'a str]) -> Result<std::path::PathBuf, DataError> {
    for name in names {
        let p = root.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(DataError::MissingPath(root.join(names[0])))
}

/// Loads an MNIST split from the standard IDX file pair under `root`.
/// MNIST draws bright ink on a dark background, so no polarity flip.
pub fn load_mnist<S: Real>(root: &Path, split: Split, side: usize) -> Result<Dataset<S>, DataError> {
    let (image_names, label_names): (&[&str], &[&str]) = match split {
        Split::Train => (
            &["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
            &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
        ),
        Split::Eval => (
            &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"],
            &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"],
        ),
    };
    let (count, rows, cols, pixels) = load_idx_images(&pick(root, image_names)?)?;
    let labels = load_idx_labels(&pick(root, label_names)?)?;

    let mut canvases: Vec<Canvas<S>> = Vec::with_capacity(count);
    let mut gray = vec![0.0f64; rows * cols];
    for i in 0..count {
        let raw = &pixels[i * rows * cols..(i + 1) * rows * cols];
        for (g, &p) in gray.iter_mut().zip(raw) {
            *g = p as f64 / 255.0;
        }
        canvases.push(canvas_from_gray(&gray, rows, cols, side, false));
    }
    Ok(Dataset {
        name: "mnist".to_string(),
        split,
        canvases,
        labels: labels.into_iter().map(u32::from).collect(),
        groups: Vec::new(),
    })
}
