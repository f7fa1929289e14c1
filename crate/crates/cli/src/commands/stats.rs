//! `scrawl stats`: prints the dataset pixel statistics and writes the
//! k-means cluster-center grid.

use std::path::PathBuf;

use clap::Args;

use scrawl_core::dataops::{compute_cluster_centers, fit_pixel_stats};
use scrawl_core::raster::THETA_ON;
use scrawl_core::threads::set_math_threads;

use super::{create_out_dir, default_data_root, load_named_dataset, parse_split, S};
use crate::config::{resolve, ConfigMap};
use crate::imgio::grid_sheet;

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub kmeans_k: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn run(args: StatsArgs) -> Result<(), String> {
    let file = match &args.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::default(),
    };
    let dataset = resolve(args.dataset.clone(), &file, "dataset", "mnist".to_string())?;
    let data_root = resolve(
        args.data_root.clone(),
        &file,
        "data_root",
        default_data_root(&dataset),
    )?;
    let split = parse_split(&resolve(args.split.clone(), &file, "split", "train".to_string())?)?;
    let out = resolve(args.out.clone(), &file, "out", PathBuf::from("runs/stats"))?;
    let seed = resolve(args.seed, &file, "seed", 1u64)?;
    let k = resolve(args.kmeans_k, &file, "kmeans_k", 64usize)?;
    set_math_threads(resolve(args.workers, &file, "workers", 2usize)?);

    let ds = load_named_dataset(&dataset, &data_root, split)?;
    create_out_dir(&out)?;

    let stats = fit_pixel_stats(&ds.canvases, THETA_ON as S).map_err(|e| e.to_string())?;
    println!(
        "{} {}: {} images, on-pixel count mu = {:.3}, sigma = {:.3}",
        dataset,
        split.as_str(),
        ds.image_count(),
        stats.mu,
        stats.sigma
    );
    let centers =
        compute_cluster_centers(&ds.canvases, k, seed).map_err(|e| e.to_string())?;
    let grid_path = out.join("cluster_centers.png");
    grid_sheet(&centers.centers, 8)
        .save(&grid_path)
        .map_err(|e| e.to_string())?;

    let summary = serde_json::json!({
        "dataset": dataset,
        "split": split.as_str(),
        "images": ds.image_count(),
        "pixel_count_mu": stats.mu,
        "pixel_count_sigma": stats.sigma,
        "kmeans_k": k,
        "centers_grid": grid_path.display().to_string(),
    });
    std::fs::write(out.join("stats.json"), summary.to_string()).map_err(|e| e.to_string())?;
    println!("wrote {} and stats.json", grid_path.display());
    Ok(())
}
