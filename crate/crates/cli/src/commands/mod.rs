pub mod eval;
pub mod generate;
pub mod parse_cmd;
pub mod stats;
pub mod train;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use scrawl_core::dataops::{load_dataset, Dataset, DatasetSpec, Split};
use scrawl_core::policy::WidthMode;
use scrawl_core::raster::GRID;

pub type S = f32;
pub type Canvas = scrawl_core::Canvas<S>;

pub fn parse_split(name: &str) -> Result<Split, String> {
    match name {
        "train" => Ok(Split::Train),
        "eval" => Ok(Split::Eval),
        other => Err(format!("unknown split {other} (expected train or eval)")),
    }
}

/// Loads a dataset after validating the root path; errors before any
/// output directory is created.
pub fn load_named_dataset(
    dataset: &str,
    data_root: &Path,
    split: Split,
) -> Result<Dataset<S>, String> {
    let spec = DatasetSpec {
        name: dataset.to_string(),
        root_path: data_root.to_path_buf(),
        split,
    };
    load_dataset::<S>(&spec, GRID).map_err(|e| e.to_string())
}

/// The brush-width convention per dataset: learned two-bin head on MNIST,
/// constant width on Omniglot.
pub fn width_mode_for(dataset: &str) -> WidthMode {
    if dataset.eq_ignore_ascii_case("omniglot") {
        WidthMode::Fixed(0)
    } else {
        WidthMode::Learned(scrawl_core::raster::WIDTH_BINS)
    }
}

pub fn default_data_root(dataset: &str) -> PathBuf {
    PathBuf::from("data").join(dataset.to_ascii_lowercase())
}

pub fn create_out_dir(out: &Path) -> Result<(), String> {
    std::fs::create_dir_all(out).map_err(|e| format!("cannot create {}: {e}", out.display()))
}

pub fn shared(data: Vec<Canvas>) -> Arc<Vec<Canvas>> {
    Arc::new(data)
}
