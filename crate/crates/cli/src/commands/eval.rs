//! `scrawl eval --suite {recon|fid|type|strokes}`: metric suites over
//! checkpoints and generated outputs. Emits CSV rows plus a summary JSON;
//! the fid suite also plots the metric-vs-iteration curve.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scrawl_core::checkpoint::{load_discriminator, load_policy};
use scrawl_core::eval::{
    frechet_distance, l2_distance, perceptual_distance, ssim, stroke_count_csv,
    stroke_count_report, summary_json, train_feature_classifier, type_task_metrics, Aggregate,
    ClassifierConfig, FeatureExtractor, LocalClassifier, MetricKind,
};
use scrawl_core::raster::{GRID, THETA_ON};
use scrawl_core::tasks::{
    build_stroke_library, discriminator_filter, generate_from_type, generate_unconditional,
    parse_batch, ParseMode,
};
use scrawl_core::threads::set_math_threads;

use super::{create_out_dir, default_data_root, load_named_dataset, parse_split, Canvas, S};
use crate::config::{resolve, ConfigMap};
use crate::imgio::line_plot;

#[derive(Args)]
pub struct EvalArgs {
    /// Suite: recon, fid, type, or strokes.
    #[arg(long)]
    pub suite: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// fid: training run directory whose checkpoints are evaluated.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub disc_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// recon/fid: number of held-out targets / generated samples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Path to a trained feature classifier checkpoint.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Train (and cache) the feature classifier if none is supplied.
    #[arg(long)]
    pub train_classifier: bool,
    /// type: alphabet from the omniglot eval split.
    #[arg(long)]
    pub alphabet: Option<String>,
    #[arg(long)]
    pub samples_per_char: Option<usize>,
    #[arg(long)]
    pub keep_quantile: Option<f64>,
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

fn classifier_for(
    args: &EvalArgs,
    out: &std::path::Path,
    dataset: &str,
    data_root: &std::path::Path,
) -> Result<Option<LocalClassifier<S>>, String> {
    if let Some(path) = &args.classifier {
        return Ok(Some(LocalClassifier::load(path).map_err(|e| e.to_string())?));
    }
    let cached = out.join("classifier.ckpt");
    if cached.exists() {
        return Ok(Some(LocalClassifier::load(&cached).map_err(|e| e.to_string())?));
    }
    if !args.train_classifier {
        return Ok(None);
    }
    let train = load_named_dataset(dataset, data_root, parse_split("train")?)?;
    let classes = train.labels.iter().max().map_or(10, |&m| m as usize + 1);
    println!("training feature classifier ({classes} classes)...");
    let mut model = train_feature_classifier(
        &train.canvases,
        &train.labels,
        &ClassifierConfig::new(GRID, classes),
    )
    .map_err(|e| e.to_string())?;
    let refs: Vec<&Canvas> = train.canvases.iter().take(2000).collect();
    let acc = model.accuracy(&refs, &train.labels[..refs.len().min(train.labels.len())]);
    println!("classifier train-subset accuracy: {acc:.3}");
    model.save(&cached).map_err(|e| e.to_string())?;
    Ok(Some(model))
}

pub fn run(args: EvalArgs) -> Result<(), String> {
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
    let out = resolve(
        args.out.clone(),
        &file,
        "out",
        PathBuf::from(format!("runs/eval-{}", args.suite)),
    )?;
    let seed = resolve(args.seed, &file, "seed", 0u64)?;
    let max_steps = resolve(args.max_steps, &file, "max_steps", 16usize)?;
    set_math_threads(resolve(args.workers, &file, "workers", 2usize)?);
    create_out_dir(&out)?;
    let mut resolved = file.clone();
    resolved.set("suite", &args.suite);
    resolved.set("dataset", &dataset);
    resolved.set("out", out.display());
    resolved.set("seed", seed);
    resolved.write(&out.join("resolved.config"))?;

    match args.suite.as_str() {
        // held-out reconstruction metrics of a parsing checkpoint
        "recon" => {
            let checkpoint = args.checkpoint.clone().ok_or("--checkpoint is required")?;
            let (policy, _, _, _) = load_policy::<S>(&checkpoint).map_err(|e| e.to_string())?;
            let eval_set = load_named_dataset(&dataset, &data_root, parse_split("eval")?)?;
            let n = resolve(args.n, &file, "n", 256usize)?.min(eval_set.image_count());
            let targets: Vec<&Canvas> = eval_set.canvases.iter().take(n).collect();
            let rngs = (0..n).map(|i| ChaCha8Rng::seed_from_u64(seed ^ i as u64)).collect();
            let parses = parse_batch(
                &policy,
                &targets,
                ParseMode::Greedy,
                max_steps,
                THETA_ON as S,
                rngs,
            )
            .map_err(|e| e.to_string())?;

            let extractor = classifier_for(&args, &out, &dataset, &data_root)?;
            let mut rows = String::from("index,l2,ssim,perceptual,strokes\n");
            let mut l2s = Vec::new();
            let mut ssims = Vec::new();
            let mut percs = Vec::new();
            for (i, ((program, recon), &target)) in parses.iter().zip(&targets).enumerate() {
                let l2 = l2_distance(recon, target).map_err(|e| e.to_string())?;
                let sv = ssim(recon, target).map_err(|e| e.to_string())?;
                let perc = match &extractor {
                    Some(ex) => {
                        let v = perceptual_distance(ex, recon, target).map_err(|e| e.to_string())?;
                        percs.push(v);
                        format!("{v:.6}")
                    }
                    None => "unavailable".to_string(),
                };
                l2s.push(l2);
                ssims.push(sv);
                rows.push_str(&format!(
                    "{i},{l2:.6},{sv:.6},{perc},{}\n",
                    program.strokes.len()
                ));
            }
            fs::write(out.join("recon_metrics.csv"), &rows).map_err(|e| e.to_string())?;

            let agg = |v: &[f64]| -> Aggregate {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
                Aggregate { mean, std: var.sqrt() }
            };
            let mut aggs: BTreeMap<MetricKind, Aggregate> = BTreeMap::new();
            aggs.insert(MetricKind::L2, agg(&l2s));
            aggs.insert(MetricKind::Ssim, agg(&ssims));
            if !percs.is_empty() {
                aggs.insert(MetricKind::Perceptual, agg(&percs));
            }
            fs::write(out.join("summary.json"), summary_json(&aggs)).map_err(|e| e.to_string())?;
            let mut sorted = l2s.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!(
                "recon over {n} held-out targets: L2 mean {:.4} (median {:.4}), SSIM mean {:.4}{}",
                aggs[&MetricKind::L2].mean,
                sorted[sorted.len() / 2],
                aggs[&MetricKind::Ssim].mean,
                if percs.is_empty() {
                    " (perceptual: extractor unavailable; pass --train-classifier)".to_string()
                } else {
                    format!(", perceptual mean {:.4}", aggs[&MetricKind::Perceptual].mean)
                }
            );
        }
        // Frechet feature distance per checkpoint of a generation run
        "fid" => {
            let run_dir = args.run_dir.clone().ok_or("--run-dir is required")?;
            let extractor = classifier_for(&args, &out, &dataset, &data_root)?
                .ok_or("fid needs a feature classifier (pass --train-classifier)")?;
            let eval_set = load_named_dataset(&dataset, &data_root, parse_split("eval")?)?;
            let n = resolve(args.n, &file, "n", 1024usize)?;
            let real_refs: Vec<&Canvas> =
                eval_set.canvases.iter().take(n.min(eval_set.image_count())).collect();
            let real_features = extractor.extract_batch(&real_refs);

            let mut checkpoints: Vec<(u64, PathBuf)> = fs::read_dir(&run_dir)
                .map_err(|e| format!("cannot read {}: {e}", run_dir.display()))?
                .flatten()
                .filter_map(|e| {
                    let name = e.file_name().to_string_lossy().to_string();
                    name.strip_prefix("policy_")
                        .and_then(|s| s.strip_suffix(".ckpt"))
                        .and_then(|s| s.parse::<u64>().ok())
                        .map(|iter| (iter, e.path()))
                })
                .collect();
            checkpoints.sort();
            if checkpoints.is_empty() {
                return Err(format!("no policy checkpoints in {}", run_dir.display()));
            }
            let mut rows = String::from("iteration,frechet\n");
            let mut points = Vec::new();
            for (iter, path) in &checkpoints {
                let (policy, _, _, _) = load_policy::<S>(path).map_err(|e| e.to_string())?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ iter);
                let samples = generate_unconditional(&policy, n, max_steps, &mut rng)
                    .map_err(|e| e.to_string())?;
                let fake_refs: Vec<&Canvas> = samples.iter().collect();
                let fake_features = extractor.extract_batch(&fake_refs);
                let fd = frechet_distance(&real_features, &fake_features)
                    .map_err(|e| e.to_string())?;
                println!("iteration {iter}: frechet {fd:.4}");
                rows.push_str(&format!("{iter},{fd:.6}\n"));
                points.push((*iter as f64, fd));
            }
            fs::write(out.join("fid_curve.csv"), &rows).map_err(|e| e.to_string())?;
            line_plot(&points, &out.join("fid_curve.png"))?;
            let final_fd = points.last().map(|(_, v)| *v).unwrap_or(f64::NAN);
            fs::write(
                out.join("summary.json"),
                serde_json::json!({ "frechet": { "final": final_fd } }).to_string(),
            )
            .map_err(|e| e.to_string())?;
        }
        // most-similar-pair metrics for type-conditioned generation
        "type" => {
            let checkpoint = args.checkpoint.clone().ok_or("--checkpoint is required")?;
            let alphabet = args.alphabet.clone().ok_or("--alphabet is required")?;
            let (policy, _, _, _) = load_policy::<S>(&checkpoint).map_err(|e| e.to_string())?;
            let ds = load_named_dataset(&dataset, &data_root, parse_split("eval")?)?;
            let group = ds
                .groups
                .iter()
                .find(|(name, _)| name == &alphabet)
                .ok_or(format!("alphabet {alphabet} not in eval split"))?;
            let inputs: Vec<Canvas> =
                ds.canvases[group.1.clone()].iter().take(10).cloned().collect();

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let library = build_stroke_library(
                &policy,
                &inputs,
                resolve(args.samples_per_char, &file, "samples_per_char", 5usize)?,
                resolve(args.keep_quantile, &file, "keep_quantile", 0.5f64)?,
                max_steps,
                THETA_ON as S,
                &mut rng,
            )
            .map_err(|e| e.to_string())?;
            let n = resolve(args.n, &file, "n", 20usize)?;
            let generated: Vec<Canvas> = match &args.disc_checkpoint {
                Some(disc_path) => {
                    let (disc, _, _) =
                        load_discriminator::<S>(disc_path).map_err(|e| e.to_string())?;
                    let pool = resolve(args.pool, &file, "pool", 10 * n)?;
                    let temperature = resolve(args.temperature, &file, "temperature", 1.0f64)?;
                    let raw = generate_from_type(&library, pool, GRID, &mut rng)
                        .map_err(|e| e.to_string())?;
                    discriminator_filter(raw, &disc, n, temperature, &mut rng)
                        .map_err(|e| e.to_string())?
                }
                None => generate_from_type(&library, n, GRID, &mut rng).map_err(|e| e.to_string())?,
            };

            let extractor = classifier_for(&args, &out, &dataset, &data_root)?;
            let mut metrics = vec![MetricKind::L2, MetricKind::Ssim];
            if extractor.is_some() {
                metrics.push(MetricKind::Perceptual);
            }
            let report = type_task_metrics(
                &generated,
                &inputs,
                &metrics,
                extractor.as_ref().map(|e| e as &dyn FeatureExtractor<S>),
            )
            .map_err(|e| e.to_string())?;
            let mut rows = String::from("sample,l2_best,ssim_best,perceptual_best\n");
            for (i, per) in report.per_sample.iter().enumerate() {
                rows.push_str(&format!(
                    "{i},{:.6},{:.6},{}\n",
                    per[&MetricKind::L2],
                    per[&MetricKind::Ssim],
                    per.get(&MetricKind::Perceptual)
                        .map_or("unavailable".to_string(), |v| format!("{v:.6}")),
                ));
            }
            fs::write(out.join("type_metrics.csv"), &rows).map_err(|e| e.to_string())?;
            fs::write(out.join("summary.json"), summary_json(&report.aggregates))
                .map_err(|e| e.to_string())?;
            for (metric, agg) in &report.aggregates {
                println!(
                    "{}: {:.4} +/- {:.4} (best-pair over {} samples)",
                    metric.as_str(),
                    agg.mean,
                    agg.std,
                    report.per_sample.len()
                );
            }
        }
        // per-alphabet stroke counts with the human reference column
        "strokes" => {
            let checkpoint = args.checkpoint.clone().ok_or("--checkpoint is required")?;
            let (policy, _, _, _) = load_policy::<S>(&checkpoint).map_err(|e| e.to_string())?;
            let ds = load_named_dataset(&dataset, &data_root, parse_split("eval")?)?;
            let groups: Vec<(String, Vec<&Canvas>)> = ds
                .groups
                .iter()
                .map(|(name, range)| {
                    (name.clone(), ds.canvases[range.clone()].iter().collect())
                })
                .collect();
            let rows = stroke_count_report(&policy, &groups, max_steps).map_err(|e| e.to_string())?;
            let csv = stroke_count_csv(&rows);
            fs::write(out.join("stroke_counts.csv"), &csv).map_err(|e| e.to_string())?;
            println!("alphabet  model  human");
            for row in &rows {
                println!(
                    "{:<32} {:>6.3} {:>6}",
                    row.alphabet, row.model_mean, row.human_reference
                );
            }
        }
        other => {
            return Err(format!(
                "unknown suite {other} (expected recon, fid, type, strokes)"
            ))
        }
    }
    Ok(())
}
