//! `scrawl train {gen|parse}`: resolves hyperparameters from defaults,
//! config file, and flags; trains; leaves checkpoints, metrics.csv, the
//! resolved config, and per-checkpoint sample grids in the output
//! directory.

use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scrawl_core::checkpoint::load_policy;
use scrawl_core::raster::THETA_ON;
use scrawl_core::tasks::{generate_unconditional, parse_batch, ParseMode};
use scrawl_core::threads::set_math_threads;
use scrawl_core::training::{train_parsing, train_unconditional, TaskKind, TrainConfig};

use super::{
    create_out_dir, default_data_root, load_named_dataset, parse_split, shared, width_mode_for,
    Canvas, S,
};
use crate::config::{resolve, ConfigMap};
use crate::imgio::grid_sheet;

#[derive(Args)]
pub struct TrainArgs {
    /// Task: gen (unconditional generation) or parse (reconstruction).
    pub task: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total policy updates.
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Resume from this policy checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub policy_lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub disc_lr: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub log_interval: Option<u64>,
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    #[arg(long)]
    pub kmeans_k: Option<usize>,
    /// Disable hard-negative mining in the discriminator update.
    #[arg(long)]
    pub no_mining: bool,
    /// Parsing fidelity against the original target instead of the residual.
    #[arg(long)]
    pub align_original: bool,
}

pub fn run(args: TrainArgs) -> Result<(), String> {
    let task = match args.task.as_str() {
        "gen" => TaskKind::Generation,
        "parse" => TaskKind::Parsing,
        other => return Err(format!("unknown task {other} (expected gen or parse)")),
    };
    let file = match &args.config {
        Some(path) => ConfigMap::load(path)?,
        None => ConfigMap::default(),
    };
    let defaults = match task {
        TaskKind::Generation => TrainConfig::generation_defaults(),
        TaskKind::Parsing => TrainConfig::parsing_defaults(),
    };

    let dataset = resolve(args.dataset.clone(), &file, "dataset", "mnist".to_string())?;
    let data_root = resolve(
        args.data_root.clone(),
        &file,
        "data_root",
        default_data_root(&dataset),
    )?;
    let cfg = TrainConfig {
        task,
        lambda1: resolve(args.lambda1, &file, "lambda1", defaults.lambda1)?,
        lambda2: resolve(args.lambda2, &file, "lambda2", defaults.lambda2)?,
        alpha: resolve(args.alpha, &file, "alpha", defaults.alpha)?,
        tau: resolve(args.tau, &file, "tau", defaults.tau)?,
        policy_lr: resolve(args.policy_lr, &file, "policy_lr", defaults.policy_lr)?,
        policy_weight_decay: resolve(
            args.weight_decay,
            &file,
            "weight_decay",
            defaults.policy_weight_decay,
        )?,
        disc_lr: resolve(args.disc_lr, &file, "disc_lr", defaults.disc_lr)?,
        batch_size: resolve(args.batch, &file, "batch", defaults.batch_size)?,
        max_steps: resolve(args.max_steps, &file, "max_steps", defaults.max_steps)?,
        seed: resolve(args.seed, &file, "seed", defaults.seed)?,
        total_updates: resolve(args.iters, &file, "iters", defaults.total_updates)?,
        log_interval: resolve(args.log_interval, &file, "log_interval", defaults.log_interval)?,
        checkpoint_interval: resolve(
            args.checkpoint_interval,
            &file,
            "checkpoint_interval",
            defaults.checkpoint_interval,
        )?,
        kmeans_k: resolve(args.kmeans_k, &file, "kmeans_k", defaults.kmeans_k)?,
        kmeans_seed: resolve(None, &file, "kmeans_seed", defaults.kmeans_seed)?,
        hard_negative_mining: if args.no_mining {
            false
        } else {
            resolve(None, &file, "mining", defaults.hard_negative_mining)?
        },
        align_against_original: args.align_original
            || resolve(None, &file, "align_original", defaults.align_against_original)?,
    };
    let workers = resolve(args.workers, &file, "workers", 2usize)?;
    let out = resolve(
        args.out.clone(),
        &file,
        "out",
        PathBuf::from(format!("runs/{}-{}", args.task, dataset)),
    )?;

    // dataset problems must not leave a partial output directory behind
    let loaded = load_named_dataset(&dataset, &data_root, parse_split("train")?)?;
    let width_mode = width_mode_for(&dataset);
    create_out_dir(&out)?;

    let mut resolved = file.clone();
    resolved.set("task", &args.task);
    resolved.set("dataset", &dataset);
    resolved.set("data_root", data_root.display());
    resolved.set("out", out.display());
    resolved.set("seed", cfg.seed);
    resolved.set("iters", cfg.total_updates);
    resolved.set("batch", cfg.batch_size);
    resolved.set("lambda1", cfg.lambda1);
    resolved.set("lambda2", cfg.lambda2);
    resolved.set("alpha", cfg.alpha);
    resolved.set("tau", cfg.tau);
    resolved.set("policy_lr", cfg.policy_lr);
    resolved.set("weight_decay", cfg.policy_weight_decay);
    resolved.set("disc_lr", cfg.disc_lr);
    resolved.set("max_steps", cfg.max_steps);
    resolved.set("log_interval", cfg.log_interval);
    resolved.set("checkpoint_interval", cfg.checkpoint_interval);
    resolved.set("kmeans_k", cfg.kmeans_k);
    resolved.set("kmeans_seed", cfg.kmeans_seed);
    resolved.set("mining", cfg.hard_negative_mining);
    resolved.set("align_original", cfg.align_against_original);
    resolved.set("workers", workers);
    resolved.write(&out.join("resolved.config"))?;

    set_math_threads(workers);
    let data = shared(loaded.canvases);
    let eval_targets: Vec<Canvas> = data.iter().take(16).cloned().collect();

    let mut last_log = std::time::Instant::now();
    let mut progress = |stats: &scrawl_core::training::IterStats| {
        if last_log.elapsed().as_secs() >= 10 {
            println!(
                "iter {:>6}/{} return {:+.4} len {:.2} kl {:.3}{}{}",
                stats.iteration,
                cfg.total_updates,
                stats.mean_return,
                stats.mean_length,
                stats.mean_kl,
                stats
                    .disc_fake
                    .map_or(String::new(), |v| format!(" disc_fake {v:+.4}")),
                stats
                    .recon_l2
                    .map_or(String::new(), |v| format!(" recon_l2 {v:.4}")),
            );
            last_log = std::time::Instant::now();
        }
    };

    let summary = match task {
        TaskKind::Generation => train_unconditional(
            &cfg,
            data.clone(),
            width_mode,
            &out,
            args.checkpoint.as_deref(),
            Some(&mut progress),
        ),
        TaskKind::Parsing => train_parsing(
            &cfg,
            data.clone(),
            width_mode,
            &out,
            args.checkpoint.as_deref(),
            Some(&mut progress),
        ),
    }
    .map_err(|e| e.to_string())?;

    write_sample_grids(task, &out, &eval_targets, cfg.max_steps)?;
    println!(
        "done: {} iterations, metrics at {}, last checkpoint {}",
        summary.final_iteration,
        summary.metrics_path.display(),
        summary.last_policy_checkpoint.display()
    );
    Ok(())
}

/// Renders one sample grid per saved checkpoint: unconditional samples for
/// generation, target/reconstruction pairs for parsing.
fn write_sample_grids(
    task: TaskKind,
    out: &std::path::Path,
    targets: &[Canvas],
    max_steps: usize,
) -> Result<(), String> {
    let mut checkpoints: Vec<(PathBuf, u64)> = Vec::new();
    for entry in std::fs::read_dir(out).map_err(|e| e.to_string())?.flatten() {
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(iter) = name
            .strip_prefix("policy_")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            checkpoints.push((entry.path(), iter));
        }
    }
    checkpoints.sort_by_key(|(_, i)| *i);
    for (path, iter) in checkpoints {
        let grid_path = out.join(format!("samples_{iter:06}.png"));
        if grid_path.exists() {
            continue;
        }
        let (policy, _, _, _) = load_policy::<S>(&path).map_err(|e| e.to_string())?;
        let canvases = match task {
            TaskKind::Generation => {
                let mut rng = ChaCha8Rng::seed_from_u64(iter);
                generate_unconditional(&policy, 64, max_steps, &mut rng)
                    .map_err(|e| e.to_string())?
            }
            TaskKind::Parsing => {
                let refs: Vec<&Canvas> = targets.iter().collect();
                let rngs = (0..refs.len())
                    .map(|i| ChaCha8Rng::seed_from_u64(i as u64))
                    .collect();
                let parsed = parse_batch(
                    &policy,
                    &refs,
                    ParseMode::Greedy,
                    max_steps,
                    THETA_ON as S,
                    rngs,
                )
                .map_err(|e| e.to_string())?;
                // interleave target and reconstruction
                targets
                    .iter()
                    .zip(parsed)
                    .flat_map(|(t, (_, r))| [t.clone(), r])
                    .collect()
            }
        };
        let sheet = grid_sheet(&canvases, 8);
        sheet
            .save(&grid_path)
            .map_err(|e| format!("cannot save {}: {e}", grid_path.display()))?;
    }
    Ok(())
}
