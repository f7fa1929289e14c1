//! Omniglot directory tree: alphabet/character/sample.png, split into 30
//! background (training) and 20 evaluation alphabets by the plain-text
//! manifests checked into the repo (one alphabet name per line).

use std::fs;
use std::path::{Path, PathBuf};

use super::{canvas_from_gray, DataError, Dataset, Split};
use crate::num::Real;
use crate::raster::Canvas;

/// The 30 training alphabets.
pub const OMNIGLOT_BACKGROUND_ALPHABETS: &str =
    include_str!("../../data/omniglot_background.txt");
/// The 20 held-out evaluation alphabets.
pub const OMNIGLOT_EVALUATION_ALPHABETS: &str =
    include_str!("../../data/omniglot_evaluation.txt");

/// Reads a split manifest: one alphabet name per line, blank lines ignored.
pub fn read_manifest(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Ok(parse_manifest(&text))
}

pub fn parse_manifest(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

fn resolve_alphabet_dir(root: &Path, name: &str) -> Result<PathBuf, DataError> {
    for candidate in [
        root.join(name),
        root.join("images_background").join(name),
        root.join("images_evaluation").join(name),
    ] {
        if candidate.is_dir() {
            return Ok(candidate);
        }
    }
    Err(DataError::MissingPath(root.join(name)))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| DataError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    Ok(entries)
}

fn load_gray_png(path: &Path) -> Result<(Vec<f64>, usize, usize), DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    let gray = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    Ok((gray, h as usize, w as usize))
}

/// Loads one Omniglot split. Characters are black ink on white paper, so
/// every image is inverted to ink-is-one before binarization.
///
/// `manifest` overrides the built-in alphabet list for the split.
pub fn load_omniglot<S: Real>(
    root: &Path,
    split: Split,
    side: usize,
    manifest: Option<&[String]>,
) -> Result<Dataset<S>, DataError> {
    let builtin = match split {
        Split::Train => parse_manifest(OMNIGLOT_BACKGROUND_ALPHABETS),
        Split::Eval => parse_manifest(OMNIGLOT_EVALUATION_ALPHABETS),
    };
    let alphabets: Vec<String> = match manifest {
        Some(names) => names.to_vec(),
        None => builtin,
    };

    let mut canvases: Vec<Canvas<S>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut groups: Vec<(String, std::ops::Range<usize>)> = Vec::new();
    for (alphabet_idx, alphabet) in alphabets.iter().enumerate() {
        let dir = resolve_alphabet_dir(root, alphabet)?;
        let start = canvases.len();
        for character_dir in sorted_entries(&dir)? {
            if !character_dir.is_dir() {
                continue;
            }
            for sample in sorted_entries(&character_dir)? {
                if sample.extension().is_none_or(|e| e != "png") {
                    continue;
                }
                let (gray, h, w) = load_gray_png(&sample)?;
                canvases.push(canvas_from_gray(&gray, h, w, side, true));
                labels.push(alphabet_idx as u32);
            }
        }
        groups.push((alphabet.clone(), start..canvases.len()));
    }
    if canvases.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    Ok(Dataset {
        name: "omniglot".to_string(),
        split,
        canvases,
        labels,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_manifests_have_the_30_20_split() {
        assert_eq!(parse_manifest(OMNIGLOT_BACKGROUND_ALPHABETS).len(), 30);
        assert_eq!(parse_manifest(OMNIGLOT_EVALUATION_ALPHABETS).len(), 20);
    }

    #[test]
    fn synthetic_tree_loads_with_inverted_polarity() {
        let dir = tempfile::tempdir().unwrap();
        let char_dir = dir.path().join("Fakealpha/character01");
        fs::create_dir_all(&char_dir).unwrap();

        // White page with a black bar: ink must come out as ones.
        let mut img = image::GrayImage::from_pixel(105, 105, image::Luma([255u8]));
        for x in 20..80 {
            for y in 50..56 {
                img.put_pixel(x, y, image::Luma([0u8]));
            }
        }
        img.save(char_dir.join("0001_01.png")).unwrap();
        // All-white page: empty glyph.
        image::GrayImage::from_pixel(105, 105, image::Luma([255u8]))
            .save(char_dir.join("0001_02.png"))
            .unwrap();

        let manifest = vec!["Fakealpha".to_string()];
        let ds: Dataset<f64> =
            load_omniglot(dir.path(), Split::Train, 32, Some(&manifest)).unwrap();
        assert_eq!(ds.image_count(), 2);
        assert!(ds.canvases[0].on_pixel_count(0.5) > 0);
        assert_eq!(ds.canvases[1].on_pixel_count(0.5), 0);
        assert_eq!(ds.groups, vec![("Fakealpha".to_string(), 0..2)]);
    }

    #[test]
    fn missing_alphabet_errors() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = vec!["NoSuchAlphabet".to_string()];
        let r: Result<Dataset<f64>, _> =
            load_omniglot(dir.path(), Split::Train, 32, Some(&manifest));
        assert!(matches!(r, Err(DataError::MissingPath(_))));
    }
}
