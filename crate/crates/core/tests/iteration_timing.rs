//! Manual timing probe for full-scale training iterations. Ignored by
//! default; run with:
//! cargo test --release -p scrawl-core --test iteration_timing -- --ignored --nocapture

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use scrawl_core::dataops::{load_dataset, DatasetSpec, Split};
use scrawl_core::policy::WidthMode;
use scrawl_core::training::{GenTrainer, ParseTrainer, TrainConfig};

fn mnist_root() -> Option<std::path::PathBuf> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    root.join("train-images-idx3-ubyte").exists().then_some(root)
}

#[test]
#[ignore = "manual timing probe"]
fn time_full_scale_iterations() {
    let Some(root) = mnist_root() else {
        eprintln!("MNIST not present; skipping");
        return;
    };
    let t0 = Instant::now();
    let spec = DatasetSpec { name: "mnist".into(), root_path: root, split: Split::Train };
    let dataset = load_dataset::<f32>(&spec, 32).unwrap();
    eprintln!("load: {:?} ({} images)", t0.elapsed(), dataset.image_count());
    let data = Arc::new(dataset.canvases);

    let t0 = Instant::now();
    let cfg = TrainConfig::parsing_defaults();
    let mut parse = ParseTrainer::new(cfg, data.clone(), WidthMode::Learned(2)).unwrap();
    eprintln!("parse trainer init: {:?}", t0.elapsed());
    for i in 0..3 {
        let t = Instant::now();
        let stats = parse.step().unwrap();
        eprintln!(
            "parse iter {i}: {:?} (strokes {:.2}, recon_l2 {:.4})",
            t.elapsed(),
            stats.mean_length,
            stats.recon_l2.unwrap()
        );
    }

    let t0 = Instant::now();
    let cfg = TrainConfig::generation_defaults();
    let mut gen = GenTrainer::new(cfg, data, WidthMode::Learned(2)).unwrap();
    eprintln!("gen trainer init (kmeans): {:?}", t0.elapsed());
    for i in 0..3 {
        let t = Instant::now();
        let stats = gen.step().unwrap();
        eprintln!(
            "gen iter {i}: {:?} (len {:.2}, disc_fake {:.3})",
            t.elapsed(),
            stats.mean_length,
            stats.disc_fake.unwrap()
        );
    }
}

#[test]
#[ignore = "manual phase-level timing probe"]
fn time_update_phases() {
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;
    use scrawl_core::policy::{canvases_to_batch, PolicyConfig, PolicyNet};
    use scrawl_core::raster::Canvas;
    use scrawl_core::training::{
        reinforce_update, run_parsing_episodes, ReinforceCfg,
    };
    use scrawl_core::rewards::ParseRewardConfig;
    use scrawl_core::nn::AdamW;

    let Some(root) = mnist_root() else {
        return;
    };
    let spec = DatasetSpec { name: "mnist".into(), root_path: root, split: Split::Train };
    let dataset = load_dataset::<f32>(&spec, 32).unwrap();
    let data = dataset.canvases;

    let mut policy = PolicyNet::<f32>::new(PolicyConfig::mnist(), 1).unwrap();
    let mut opt = AdamW::new(1.5e-4f32, 1.6e-5);
    let cfg = ParseRewardConfig::new(0.089);
    let targets: Vec<&Canvas<f32>> = (0..256).map(|i| &data[i * 7]).collect();
    let rngs: Vec<ChaCha8Rng> = (0..256).map(|e| ChaCha8Rng::seed_from_u64(e)).collect();

    let t = Instant::now();
    let trajs = run_parsing_episodes(&policy, &targets, &cfg, 16, 0.5, rngs).unwrap();
    eprintln!("rollout: {:?} ({} total steps)", t.elapsed(),
        trajs.iter().map(|t| t.len()).sum::<usize>());

    let t = Instant::now();
    let mut baseline = 0.0;
    reinforce_update(
        &mut policy,
        &trajs,
        &ReinforceCfg { alpha: 0.59, tau: 2.72 },
        &mut opt,
        &mut baseline,
    )
    .unwrap();
    eprintln!("reinforce_update: {:?}", t.elapsed());

    // isolated batched forwards for scale
    let obs: Vec<&Canvas<f32>> = (0..256).map(|i| &data[i]).collect();
    let batch = canvases_to_batch(&obs);
    let t = Instant::now();
    for _ in 0..4 {
        let _ = policy.forward_eval(&batch).unwrap();
    }
    eprintln!("4x eval forward b256: {:?}", t.elapsed());

    let t = Instant::now();
    for _ in 0..4 {
        let _ = policy.forward_train(&batch).unwrap();
    }
    eprintln!("4x train forward b256 (with caches): {:?}", t.elapsed());
}

#[test]
#[ignore = "manual gemm probe"]
fn time_raw_gemm() {
    use ndarray::Array2;
    let a = Array2::<f32>::from_elem((32, 512), 0.5);
    let b = Array2::<f32>::from_elem((512, 65536), 0.25);
    let t = Instant::now();
    let mut acc = 0.0f32;
    for _ in 0..20 {
        acc += a.dot(&b)[[0, 0]];
    }
    let dt = t.elapsed().as_secs_f64();
    eprintln!("gemm 32x512x65536: {:.1} GFLOPS (acc {acc})", 2.0 * 32.0 * 512.0 * 65536.0 * 20.0 / dt / 1e9);

    let a = Array2::<f32>::from_elem((32, 288), 0.5);
    let b = Array2::<f32>::from_elem((288, 16384), 0.25);
    let t = Instant::now();
    for _ in 0..200 {
        acc += a.dot(&b)[[0, 0]];
    }
    let dt = t.elapsed().as_secs_f64();
    eprintln!("gemm 32x288x16384: {:.1} GFLOPS (acc {acc})", 2.0 * 32.0 * 288.0 * 16384.0 * 200.0 / dt / 1e9);
}

#[test]
#[ignore = "manual full-batch trend probe"]
fn parse_trend_probe_b256() {
    let Some(root) = mnist_root() else {
        return;
    };
    scrawl_core::threads::set_math_threads(2);
    let spec = DatasetSpec { name: "mnist".into(), root_path: root, split: Split::Train };
    let dataset = load_dataset::<f32>(&spec, 32).unwrap();
    let data = Arc::new(dataset.canvases);
    let cfg = TrainConfig::parsing_defaults();
    let mut trainer = ParseTrainer::new(cfg, data, WidthMode::Learned(2)).unwrap();
    let t0 = Instant::now();
    for i in 1..=250u64 {
        let stats = trainer.step().unwrap();
        if i % 10 == 0 {
            eprintln!(
                "iter {i:>4} return {:+.4} strokes {:.2} kl {:.2} l2 {:.4} ({}s)",
                stats.mean_return,
                stats.mean_length,
                stats.mean_kl,
                stats.recon_l2.unwrap(),
                t0.elapsed().as_secs()
            );
        }
    }
}

#[test]
#[ignore = "manual small-scale trend probe"]
fn parse_trend_probe() {
    let Some(root) = mnist_root() else {
        return;
    };
    scrawl_core::threads::set_math_threads(2);
    let spec = DatasetSpec { name: "mnist".into(), root_path: root, split: Split::Train };
    let dataset = load_dataset::<f32>(&spec, 32).unwrap();
    let data = Arc::new(dataset.canvases);
    let mut cfg = TrainConfig::parsing_defaults();
    cfg.batch_size = 64;
    cfg.total_updates = 200;
    let mut trainer = ParseTrainer::new(cfg, data, WidthMode::Learned(2)).unwrap();
    let t0 = Instant::now();
    for i in 1..=200u64 {
        let stats = trainer.step().unwrap();
        if i % 10 == 0 {
            eprintln!(
                "iter {i:>4} return {:+.4} strokes {:.2} kl {:.2} l2 {:.4} ({}s)",
                stats.mean_return,
                stats.mean_length,
                stats.mean_kl,
                stats.recon_l2.unwrap(),
                t0.elapsed().as_secs()
            );
        }
    }
}

#[test]
#[ignore = "manual stop-collapse experiment"]
fn parse_optimism_probe() {
    let Some(root) = mnist_root() else {
        return;
    };
    scrawl_core::threads::set_math_threads(2);
    let spec = DatasetSpec { name: "mnist".into(), root_path: root, split: Split::Train };
    let dataset = load_dataset::<f32>(&spec, 32).unwrap();
    let data = Arc::new(dataset.canvases);
    let mut cfg = TrainConfig::parsing_defaults();
    cfg.batch_size = 64;
    cfg.total_updates = 250;
    let mut trainer = ParseTrainer::new(cfg, data, WidthMode::Learned(2)).unwrap();
    trainer.policy.set_stop_bias(4.0); // p_continue ~ 0.982
    let t0 = Instant::now();
    for i in 1..=250u64 {
        let stats = trainer.step().unwrap();
        if i % 10 == 0 {
            eprintln!(
                "iter {i:>4} return {:+.4} strokes {:.2} kl {:.2} l2 {:.4} ({}s)",
                stats.mean_return,
                stats.mean_length,
                stats.mean_kl,
                stats.recon_l2.unwrap(),
                t0.elapsed().as_secs()
            );
        }
    }
}

#[test]
#[ignore = "manual clamped-stop learning probe"]
fn parse_clamped_stop_probe() {
    let Some(root) = mnist_root() else {
        return;
    };
    scrawl_core::threads::set_math_threads(2);
    let spec = DatasetSpec { name: "mnist".into(), root_path: root, split: Split::Train };
    let dataset = load_dataset::<f32>(&spec, 32).unwrap();
    let data = Arc::new(dataset.canvases);
    let mut cfg = TrainConfig::parsing_defaults();
    cfg.batch_size = 64;
    cfg.total_updates = 300;
    let mut trainer = ParseTrainer::new(cfg, data, WidthMode::Learned(2)).unwrap();
    let t0 = Instant::now();
    for i in 1..=300u64 {
        let stats = trainer.step().unwrap();
        // clamp the stop head back to uniform: pure coordinate learning
        for p in trainer.policy.params_mut() {
            if p.v.shape() == [2] || p.v.shape() == [2, 64] {
                p.v.fill(0.0);
            }
        }
        if i % 10 == 0 {
            eprintln!(
                "iter {i:>4} return {:+.4} strokes {:.2} kl {:.2} l2 {:.4} ({}s)",
                stats.mean_return,
                stats.mean_length,
                stats.mean_kl,
                stats.recon_l2.unwrap(),
                t0.elapsed().as_secs()
            );
        }
    }
}
