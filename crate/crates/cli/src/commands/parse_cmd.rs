//! `scrawl parse`: reconstructs input glyphs stroke-by-stroke. Per input:
//! reconstruction PNG, color-coded stroke-order overlay, stroke program
//! file, SVG export, and a per-image L2 row in parse_report.csv.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scrawl_core::checkpoint::load_policy;
use scrawl_core::eval::l2_distance;
use scrawl_core::raster::{GRID, THETA_ON};
use scrawl_core::tasks::{parse_batch, strokeprog_to_svg, strokeprog_to_text, ParseMode};
use scrawl_core::threads::set_math_threads;

use super::{create_out_dir, default_data_root, load_named_dataset, parse_split, Canvas, S};
use crate::config::{resolve, ConfigMap};
use crate::imgio::{load_canvas, save_canvas, stroke_order_overlay};

#[derive(Args)]
pub struct ParseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained parsing policy checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input PNG images (repeatable).
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    /// Invert input PNG polarity (dark ink on light paper).
    #[arg(long)]
    pub invert: bool,
    /// Dataset-based inputs instead of image files.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Number of dataset characters to parse.
    #[arg(long)]
    pub n: Option<usize>,
    /// greedy (argmax of every head) or sampled.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn run(args: ParseArgs) -> Result<(), String> {
    let file = match &args.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::default(),
    };
    let checkpoint = args
        .checkpoint
        .clone()
        .or(file.get::<PathBuf>("checkpoint")?)
        .ok_or("--checkpoint is required")?;
    let out = resolve(args.out.clone(), &file, "out", PathBuf::from("runs/parse"))?;
    let seed = resolve(args.seed, &file, "seed", 0u64)?;
    let mode = match resolve(args.mode.clone(), &file, "mode", "greedy".to_string())?.as_str() {
        "greedy" => ParseMode::Greedy,
        "sampled" => ParseMode::Sampled,
        other => return Err(format!("unknown mode {other} (expected greedy or sampled)")),
    };
    let max_steps = resolve(args.max_steps, &file, "max_steps", 16usize)?;
    set_math_threads(resolve(args.workers, &file, "workers", 2usize)?);

    // gather inputs before creating the output directory
    let mut named: Vec<(String, Canvas)> = Vec::new();
    for path in &args.inputs {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or("input".to_string());
        named.push((stem, load_canvas(path, GRID, args.invert)?));
    }
    if named.is_empty() {
        let dataset = args.dataset.clone().ok_or("need --input files or --dataset")?;
        let root = args
            .data_root
            .clone()
            .unwrap_or_else(|| default_data_root(&dataset));
        let split = parse_split(&resolve(args.split.clone(), &file, "split", "eval".to_string())?)?;
        let ds = load_named_dataset(&dataset, &root, split)?;
        let n = resolve(args.n, &file, "n", 16usize)?;
        for (i, canvas) in ds.canvases.into_iter().take(n).enumerate() {
            named.push((format!("{dataset}_{i:04}"), canvas));
        }
    }

    let (policy, _, _, _) = load_policy::<S>(&checkpoint).map_err(|e| e.to_string())?;
    create_out_dir(&out)?;
    let mut resolved = file.clone();
    resolved.set("checkpoint", checkpoint.display());
    resolved.set("out", out.display());
    resolved.set("seed", seed);
    resolved.set("max_steps", max_steps);
    resolved.set(
        "mode",
        if mode == ParseMode::Greedy { "greedy" } else { "sampled" },
    );
    resolved.write(&out.join("resolved.config"))?;

    let targets: Vec<&Canvas> = named.iter().map(|(_, c)| c).collect();
    let rngs = (0..targets.len())
        .map(|i| ChaCha8Rng::seed_from_u64(seed ^ (i as u64)))
        .collect();
    let results = parse_batch(&policy, &targets, mode, max_steps, THETA_ON as S, rngs)
        .map_err(|e| e.to_string())?;

    let mut report = String::from("input,l2,strokes,log_likelihood\n");
    for ((name, target), (program, recon)) in named.iter().zip(results.iter()) {
        save_canvas(target, &out.join(format!("{name}_target.png")))?;
        save_canvas(recon, &out.join(format!("{name}_recon.png")))?;
        stroke_order_overlay::<S>(program, GRID)?
            .save(out.join(format!("{name}_strokes.png")))
            .map_err(|e| e.to_string())?;
        fs::write(
            out.join(format!("{name}.strokeprog")),
            strokeprog_to_text(program, GRID),
        )
        .map_err(|e| e.to_string())?;
        fs::write(
            out.join(format!("{name}.svg")),
            strokeprog_to_svg(program, GRID),
        )
        .map_err(|e| e.to_string())?;
        let l2 = l2_distance(recon, target).map_err(|e| e.to_string())?;
        report.push_str(&format!(
            "{name},{l2:.6},{},{:.4}\n",
            program.strokes.len(),
            program.log_likelihood
        ));
    }
    fs::write(out.join("parse_report.csv"), &report).map_err(|e| e.to_string())?;
    println!("parsed {} inputs into {}", named.len(), out.display());
    Ok(())
}
