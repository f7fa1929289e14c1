//! `scrawl generate {uncond|exemplar|type}`: sampling pipelines over
//! trained checkpoints. Exemplar and type generation reuse the trained
//! parser with no further training.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scrawl_core::checkpoint::{load_discriminator, load_policy};
use scrawl_core::raster::{GRID, THETA_ON};
use scrawl_core::tasks::{
    build_stroke_library, discriminator_filter, exemplar_parses, generate_from_type,
    generate_unconditional, strokeprog_to_svg, strokeprog_to_text,
};
use scrawl_core::threads::set_math_threads;

use super::{create_out_dir, default_data_root, load_named_dataset, parse_split, Canvas, S};
use crate::config::{resolve, ConfigMap};
use crate::imgio::{grid_sheet, grid_sheet_highlight_first, load_canvas, save_canvas};

#[derive(Args)]
pub struct GenerateArgs {
    /// Mode: uncond, exemplar, or type.
    pub mode: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained policy checkpoint (generation policy for uncond, parsing
    /// policy for exemplar/type).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of outputs (uncond samples or type-conditioned concepts).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,

    /// Exemplar: conditioning character image (PNG).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Exemplar/type: dataset-based conditioning instead of image files.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Exemplar: index of the conditioning character in the eval split.
    #[arg(long)]
    pub index: Option<usize>,
    /// Invert input PNG polarity (dark ink on light paper).
    #[arg(long)]
    pub invert: bool,
    #[arg(long)]
    pub n_parses: Option<usize>,
    #[arg(long)]
    pub keep_quantile: Option<f64>,
    /// Exemplar: how many exemplars the output grid shows.
    #[arg(long)]
    pub n_show: Option<usize>,

    /// Type: directory of character PNGs (first 10 in sorted order).
    #[arg(long)]
    pub inputs_dir: Option<PathBuf>,
    /// Type: alphabet name when conditioning from the omniglot eval split.
    #[arg(long)]
    pub alphabet: Option<String>,
    #[arg(long)]
    pub samples_per_char: Option<usize>,
    /// Type: generate a pool of this size and subsample with the
    /// discriminator.
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub disc_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

pub fn run(args: GenerateArgs) -> Result<(), String> {
    let file = match &args.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::default(),
    };
    let checkpoint = args
        .checkpoint
        .clone()
        .or(file.get::<PathBuf>("checkpoint")?)
        .ok_or("--checkpoint is required")?;
    let out = resolve(
        args.out.clone(),
        &file,
        "out",
        PathBuf::from(format!("runs/generate-{}", args.mode)),
    )?;
    let seed = resolve(args.seed, &file, "seed", 0u64)?;
    let workers = resolve(args.workers, &file, "workers", 2usize)?;
    let max_steps = resolve(args.max_steps, &file, "max_steps", 16usize)?;
    set_math_threads(workers);

    let (policy, _, step, _) = load_policy::<S>(&checkpoint).map_err(|e| e.to_string())?;
    create_out_dir(&out)?;
    let mut resolved = file.clone();
    resolved.set("mode", &args.mode);
    resolved.set("checkpoint", checkpoint.display());
    resolved.set("out", out.display());
    resolved.set("seed", seed);
    resolved.set("max_steps", max_steps);
    resolved.write(&out.join("resolved.config"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match args.mode.as_str() {
        "uncond" => {
            let n = resolve(args.n, &file, "n", 64usize)?;
            let samples =
                generate_unconditional(&policy, n, max_steps, &mut rng).map_err(|e| e.to_string())?;
            let mut manifest = String::new();
            for (i, canvas) in samples.iter().enumerate() {
                let name = format!("sample_{i:04}.png");
                save_canvas(canvas, &out.join(&name))?;
                manifest.push_str(&name);
                manifest.push('\n');
            }
            fs::write(out.join("manifest.txt"), manifest).map_err(|e| e.to_string())?;
            if !samples.is_empty() {
                grid_sheet(&samples, 8)
                    .save(out.join("grid.png"))
                    .map_err(|e| e.to_string())?;
            }
            println!("wrote {} samples from checkpoint step {step}", samples.len());
        }
        "exemplar" => {
            let n_parses = resolve(args.n_parses, &file, "n_parses", 500usize)?;
            let keep_quantile = resolve(args.keep_quantile, &file, "keep_quantile", 0.5f64)?;
            let n_show = resolve(args.n_show, &file, "n_show", 9usize)?;
            let target: Canvas = match (&args.input, &args.dataset) {
                (Some(path), _) => load_canvas(path, GRID, args.invert)?,
                (None, Some(dataset)) => {
                    let root = args
                        .data_root
                        .clone()
                        .unwrap_or_else(|| default_data_root(dataset));
                    let ds = load_named_dataset(dataset, &root, parse_split("eval")?)?;
                    let index = args.index.unwrap_or(0);
                    ds.canvases
                        .get(index)
                        .cloned()
                        .ok_or(format!("index {index} out of range"))?
                }
                (None, None) => return Err("exemplar mode needs --input or --dataset".into()),
            };
            let retained = exemplar_parses(
                &policy,
                &target,
                n_parses,
                keep_quantile,
                max_steps,
                THETA_ON as S,
                &mut rng,
            )
            .map_err(|e| e.to_string())?;
            save_canvas(&target, &out.join("input.png"))?;
            for (i, (program, canvas)) in retained.iter().enumerate() {
                save_canvas(canvas, &out.join(format!("exemplar_{i:04}.png")))?;
                fs::write(
                    out.join(format!("exemplar_{i:04}.strokeprog")),
                    strokeprog_to_text(program, GRID),
                )
                .map_err(|e| e.to_string())?;
                fs::write(
                    out.join(format!("exemplar_{i:04}.svg")),
                    strokeprog_to_svg(program, GRID),
                )
                .map_err(|e| e.to_string())?;
            }
            // grid: the input highlighted, then the first n_show exemplars
            let mut tiles = vec![target.clone()];
            tiles.extend(retained.iter().take(n_show).map(|(_, c)| c.clone()));
            grid_sheet_highlight_first(&tiles, (n_show + 1).min(5))
                .save(out.join("grid.png"))
                .map_err(|e| e.to_string())?;
            println!(
                "kept {} of {n_parses} parses (quantile {keep_quantile}); grid shows {n_show}",
                retained.len()
            );
        }
        "type" => {
            let n = resolve(args.n, &file, "n", 20usize)?;
            let samples_per_char = resolve(args.samples_per_char, &file, "samples_per_char", 5usize)?;
            let keep_quantile = resolve(args.keep_quantile, &file, "keep_quantile", 0.5f64)?;
            let inputs: Vec<Canvas> = match (&args.inputs_dir, &args.alphabet) {
                (Some(dir), _) => {
                    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                        .map_err(|e| format!("cannot read {}: {e}", dir.display()))?
                        .flatten()
                        .map(|e| e.path())
                        .filter(|p| p.extension().is_some_and(|e| e == "png"))
                        .collect();
                    paths.sort();
                    paths
                        .iter()
                        .take(10)
                        .map(|p| load_canvas(p, GRID, args.invert))
                        .collect::<Result<_, _>>()?
                }
                (None, Some(alphabet)) => {
                    let dataset = args.dataset.clone().unwrap_or("omniglot".to_string());
                    let root = args
                        .data_root
                        .clone()
                        .unwrap_or_else(|| default_data_root(&dataset));
                    let ds = load_named_dataset(&dataset, &root, parse_split("eval")?)?;
                    let group = ds
                        .groups
                        .iter()
                        .find(|(name, _)| name == alphabet)
                        .ok_or(format!("alphabet {alphabet} not in eval split"))?;
                    ds.canvases[group.1.clone()].iter().take(10).cloned().collect()
                }
                (None, None) => return Err("type mode needs --inputs-dir or --alphabet".into()),
            };
            let library = build_stroke_library(
                &policy,
                &inputs,
                samples_per_char,
                keep_quantile,
                max_steps,
                THETA_ON as S,
                &mut rng,
            )
            .map_err(|e| e.to_string())?;
            println!(
                "stroke library: {} strokes over {} time buckets",
                library.total_strokes(),
                library.buckets.len()
            );
            let samples: Vec<Canvas> = match (&args.disc_checkpoint, args.pool) {
                (Some(disc_path), pool) => {
                    let pool = pool.unwrap_or(10 * n);
                    let (disc, _, _) =
                        load_discriminator::<S>(disc_path).map_err(|e| e.to_string())?;
                    let temperature = resolve(args.temperature, &file, "temperature", 1.0f64)?;
                    let raw = generate_from_type(&library, pool, GRID, &mut rng)
                        .map_err(|e| e.to_string())?;
                    discriminator_filter(raw, &disc, n, temperature, &mut rng)
                        .map_err(|e| e.to_string())?
                }
                (None, _) => {
                    generate_from_type(&library, n, GRID, &mut rng).map_err(|e| e.to_string())?
                }
            };
            for (i, canvas) in samples.iter().enumerate() {
                save_canvas(canvas, &out.join(format!("concept_{i:04}.png")))?;
            }
            let mut tiles = inputs.clone();
            tiles.extend(samples.iter().cloned());
            grid_sheet(&tiles, 10)
                .save(out.join("grid.png"))
                .map_err(|e| e.to_string())?;
            println!("wrote {} type-conditioned samples", samples.len());
        }
        other => return Err(format!("unknown mode {other} (expected uncond, exemplar, type)")),
    }
    Ok(())
}
