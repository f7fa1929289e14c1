//! Acceptance suite. One test per criterion; each prints a single
//! `criterion N: PASS` line on success.
//!
//! The smoke-training criteria drive full-scale runs (batch 256, the
//! published hyperparameters) into `target/acceptance-runs/`. Runs resume
//! from their latest checkpoint, so an interrupted suite continues where
//! it stopped and a completed run is verified without retraining. Delete
//! the run directory to retrain from scratch.
//!
//! Requires the MNIST IDX files under `data/mnist/` (see
//! `scripts/fetch_data.sh`).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, Once, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scrawl_core::dataops::{load_dataset, DatasetSpec, Split};
use scrawl_core::policy::{
    canvases_to_batch, sample_action, Decision, PolicyArch, PolicyConfig, PolicyNet, WidthMode,
};
use scrawl_core::raster::{Canvas, StrokeAction, GRID, THETA_ON};
use scrawl_core::tasks::{parse_batch, ParseMode};
use scrawl_core::training::{
    head_grads_for_steps, reinforce_loss, reinforce_update, train_resumable, EpisodeStep,
    ReinforceCfg, StepRef, TaskKind, TrainConfig, Trajectory,
};
use scrawl_core::{checkpoint, threads};

type C32 = Canvas<f32>;

fn init_math() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        // one math thread per test: tests parallelize across criteria
        threads::set_math_threads(1);
    });
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn runs_dir() -> PathBuf {
    let dir = workspace_root().join("target/acceptance-runs");
    std::fs::create_dir_all(&dir).expect("create acceptance-runs dir");
    dir
}

fn mnist(split: Split) -> Arc<Vec<C32>> {
    static TRAIN: OnceLock<Arc<Vec<C32>>> = OnceLock::new();
    static EVAL: OnceLock<Arc<Vec<C32>>> = OnceLock::new();
    let cell = match split {
        Split::Train => &TRAIN,
        Split::Eval => &EVAL,
    };
    cell.get_or_init(|| {
        let root = workspace_root().join("data/mnist");
        assert!(
            root.join("train-images-idx3-ubyte").exists(),
            "MNIST IDX files missing under data/mnist; run scripts/fetch_data.sh first"
        );
        let spec = DatasetSpec {
            name: "mnist".into(),
            root_path: root,
            split,
        };
        Arc::new(load_dataset::<f32>(&spec, GRID).expect("load MNIST").canvases)
    })
    .clone()
}

/// Serializes access to one run directory so concurrent criteria never
/// drive the same run twice.
fn run_lock(dir: &Path) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>> = OnceLock::new();
    let registry = LOCKS.get_or_init(|| Mutex::new(HashMap::new()));
    registry
        .lock()
        .unwrap()
        .entry(dir.to_path_buf())
        .or_insert_with(|| Arc::new(Mutex::new(())))
        .clone()
}

/// Runs (or finishes, or just verifies) a training run; logs progress.
fn ensure_run(name: &str, cfg: &TrainConfig, width_mode: WidthMode) -> PathBuf {
    let dir = runs_dir().join(name);
    let lock = run_lock(&dir);
    let _guard = lock.lock().unwrap();
    let data = mnist(Split::Train);
    let start = Instant::now();
    let mut last_print = Instant::now();
    let mut progress = |stats: &scrawl_core::training::IterStats| {
        if last_print.elapsed().as_secs() >= 60 {
            eprintln!(
                "[{name}] iter {}/{} return {:.3} len {:.2} kl {:.2} l2 {} ({}s elapsed)",
                stats.iteration,
                cfg.total_updates,
                stats.mean_return,
                stats.mean_length,
                stats.mean_kl,
                stats
                    .recon_l2
                    .map_or("-".to_string(), |v| format!("{v:.4}")),
                start.elapsed().as_secs()
            );
            last_print = Instant::now();
        }
    };
    let summary = train_resumable(cfg, data, width_mode, &dir, Some(&mut progress))
        .expect("training run");
    if summary.iterations_run > 0 {
        eprintln!(
            "[{name}] ran {} iterations in {}s",
            summary.iterations_run,
            start.elapsed().as_secs()
        );
    }
    dir
}

fn final_policy_ckpt(dir: &Path, total: u64) -> PathBuf {
    dir.join(format!("policy_{total:06}.ckpt"))
}

fn mean_sq_diff(a: &C32, b: &C32) -> f64 {
    let n = (a.side() * a.side()) as f64;
    a.grid()
        .iter()
        .zip(b.grid().iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n
}

/// Greedy-parses a fixed held-out batch; returns (median L2, mean strokes).
fn heldout_parse_stats(policy: &PolicyNet<f32>, max_steps: usize) -> (f64, f64) {
    let eval = mnist(Split::Eval);
    let targets: Vec<&C32> = eval.iter().take(256).collect();
    let rngs = (0..targets.len())
        .map(|i| ChaCha8Rng::seed_from_u64(i as u64))
        .collect();
    let parses = parse_batch(
        policy,
        &targets,
        ParseMode::Greedy,
        max_steps,
        THETA_ON as f32,
        rngs,
    )
    .expect("held-out parse");
    let mut l2s: Vec<f64> = parses
        .iter()
        .zip(targets.iter())
        .map(|((_, recon), &target)| mean_sq_diff(recon, target))
        .collect();
    l2s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = l2s[l2s.len() / 2];
    let mean_strokes = parses
        .iter()
        .map(|(p, _)| p.strokes.len() as f64)
        .sum::<f64>()
        / parses.len() as f64;
    (median, mean_strokes)
}

fn parsing_cfg(seed: u64, lambda1: f64) -> TrainConfig {
    TrainConfig {
        seed,
        lambda1,
        ..TrainConfig::parsing_defaults()
    }
    // parsing defaults carry the published table: alpha 0.59, tau 2.72,
    // lr 1.5e-4, weight decay 1.6e-5, batch 256, 2000 updates
}

fn generation_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::generation_defaults()
    }
    // generation defaults carry the published table: lambda1 1.016,
    // lambda2 1, alpha 0.336, tau 0.415, lr 3.096e-5, wd 0.0064,
    // disc lr 1e-4, batch 256, 500 updates
}

// ============================================================================
// Criterion 2: reduced-policy REINFORCE gradient check
// ============================================================================

#[test]
fn criterion_2_gradient_check() {
    init_math();
    let t0 = Instant::now();
    let config = PolicyConfig {
        grid: 8,
        width_mode: WidthMode::Learned(2),
        arch: PolicyArch::Linear,
    };
    let mut policy = PolicyNet::<f64>::new(config, 42).unwrap();
    let mut flat = policy.params_to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in flat.iter_mut() {
        *v = (rng.random::<f64>() - 0.5) * 0.6;
    }
    policy.set_params_from_vec(&flat);

    // a small batch of decision points with nonzero advantages
    let mut obs: Vec<Canvas<f64>> = Vec::new();
    for _ in 0..6 {
        let mut c = Canvas::<f64>::zeros(8);
        for r in 0..8 {
            for col in 0..8 {
                if rng.random::<f64>() < 0.3 {
                    c.set(r, col, 1.0);
                }
            }
        }
        obs.push(c);
    }
    let steps: Vec<StepRef<'_, f64>> = obs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let action = (i % 3 != 2).then(|| {
                StrokeAction::new(
                    [i % 8, (i + 3) % 8, (i + 5) % 8, (i + 1) % 8, (i + 7) % 8, i % 8],
                    i % 2,
                )
            });
            StepRef {
                obs: o,
                decision: if action.is_some() { Decision::Continue } else { Decision::Stop },
                action,
                advantage: (i as f64 - 2.2) * 0.8,
            }
        })
        .collect();
    let cfg = ReinforceCfg { alpha: 0.59, tau: 0.01 };
    let inv_b = 1.0 / 4.0;

    let obs_refs: Vec<&Canvas<f64>> = steps.iter().map(|s| s.obs).collect();
    let (dists, cache) = policy.forward_train(&canvases_to_batch(&obs_refs)).unwrap();
    let (grads, _, _, _) = head_grads_for_steps(&dists, &steps, &cfg, inv_b);
    policy.zero_grads();
    policy.backward(&cache, &grads);
    let analytic = policy.grads_to_vec();

    let mut f = |pv: &[f64]| {
        let mut p2 = PolicyNet::<f64>::new(config, 42).unwrap();
        p2.set_params_from_vec(pv);
        reinforce_loss(&p2, &steps, &cfg, inv_b).unwrap()
    };
    // >= 200 randomly selected weights, central differences at h = 1e-5
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut indices: Vec<usize> = (0..220)
        .map(|_| rng.random_range(0..flat.len()))
        .collect();
    indices.sort_unstable();
    indices.dedup();
    assert!(indices.len() >= 200);
    for &i in &indices {
        let mut xp = flat.clone();
        xp[i] += h;
        let fp = f(&xp);
        xp[i] = flat[i] - h;
        let fm = f(&xp);
        let fd = (fp - fm) / (2.0 * h);
        let an = analytic[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(rel);
        assert!(
            rel <= 1e-4,
            "weight {i}: fd {fd} vs analytic {an} (rel {rel:.2e})"
        );
    }
    println!(
        "criterion 2: PASS (reduced-policy REINFORCE gradient, {} weights, worst rel {:.2e}, {:?})",
        indices.len(),
        worst,
        t0.elapsed()
    );
}

// ============================================================================
// Criterion 3: two-armed bandit convergence, 5/5 seeds
// ============================================================================

#[test]
fn criterion_3_bandit_convergence() {
    init_math();
    let t0 = Instant::now();
    let config = PolicyConfig {
        grid: 2,
        width_mode: WidthMode::Learned(2),
        arch: PolicyArch::Linear,
    };
    for seed in 1..=5u64 {
        let mut policy = PolicyNet::<f64>::new(config, seed).unwrap();
        let mut opt = scrawl_core::nn::AdamW::new(0.01, 0.0);
        let obs = Canvas::<f64>::zeros(2);
        let mut baseline = 0.0;
        let rcfg = ReinforceCfg { alpha: 0.0, tau: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbead);
        for _ in 0..500 {
            let d = policy
                .forward_eval(&canvases_to_batch(&[&obs]))
                .unwrap()
                .row(0);
            let trajs: Vec<Trajectory<f64>> = (0..32)
                .map(|_| {
                    let s = sample_action(&d, &mut rng);
                    // the stop head is the bandit: continue pays 1, stop 0
                    let reward = match s.decision {
                        Decision::Continue => 1.0,
                        Decision::Stop => 0.0,
                    };
                    Trajectory::finalize(
                        vec![EpisodeStep {
                            observation: obs.clone(),
                            decision: s.decision,
                            action: s.action,
                            log_prob: s.log_prob,
                            instantaneous_reward: reward,
                            shaped_reward: reward,
                            t: 0,
                        }],
                        obs.clone(),
                    )
                })
                .collect();
            reinforce_update(&mut policy, &trajs, &rcfg, &mut opt, &mut baseline).unwrap();
        }
        let d = policy
            .forward_eval(&canvases_to_batch(&[&obs]))
            .unwrap()
            .row(0);
        assert!(
            d.stop[0] > 0.95,
            "seed {seed}: better-arm probability {} <= 0.95",
            d.stop[0]
        );
    }
    println!(
        "criterion 3: PASS (bandit >= 0.95 on the better arm, 5/5 seeds, {:?})",
        t0.elapsed()
    );
}

// ============================================================================
// Criterion 4: parsing smoke run
// ============================================================================

const PARSE_SMOKE_SEED: u64 = 7;

#[test]
fn criterion_4_parsing_smoke() {
    init_math();
    let cfg = parsing_cfg(PARSE_SMOKE_SEED, 0.089);
    let dir = ensure_run("parse_l1_0.089_seed7", &cfg, WidthMode::Learned(2));
    let ckpt = final_policy_ckpt(&dir, cfg.total_updates);
    let (policy, _, _, _) = checkpoint::load_policy::<f32>(&ckpt).expect("final checkpoint");
    let (median_l2, mean_strokes) = heldout_parse_stats(&policy, cfg.max_steps);
    eprintln!("[criterion 4] held-out median L2 {median_l2:.4}, mean strokes {mean_strokes:.2}");
    assert!(
        median_l2 <= 0.08,
        "median held-out reconstruction L2 {median_l2:.4} > 0.08"
    );
    assert!(mean_strokes <= 8.0, "mean stroke count {mean_strokes:.2} > 8");
    println!(
        "criterion 4: PASS (2000-iteration parsing smoke: median held-out L2 {median_l2:.4} <= 0.08, \
         mean strokes {mean_strokes:.2} <= 8)"
    );
}

// ============================================================================
// Criterion 5: generation smoke run, 3 seeds
// ============================================================================

fn metrics_value(dir: &Path, iteration: u64, column: &str) -> f64 {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).expect("metrics.csv");
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    let col = header.iter().position(|&h| h == column).expect("column");
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[0].parse::<u64>() == Ok(iteration) {
            return cells[col].parse().expect("cell");
        }
    }
    panic!("iteration {iteration} not found in {}", dir.display());
}

fn generation_seed_check(seed: u64) {
    init_math();
    let cfg = generation_cfg(seed);
    let dir = ensure_run(&format!("gen_seed{seed}"), &cfg, WidthMode::Learned(2));

    // clause 1: mean discriminator score of generated samples strictly
    // increases between iteration 10 and 500
    let fake_early = metrics_value(&dir, 10, "disc_fake");
    let fake_late = metrics_value(&dir, 500, "disc_fake");
    assert!(
        fake_late > fake_early,
        "seed {seed}: disc score of fakes did not increase ({fake_early:.4} -> {fake_late:.4})"
    );

    // clause 2: mean generated on-pixel count moves toward the dataset mu
    // by at least 50% relative to the untrained policy
    let data = mnist(Split::Train);
    let theta = THETA_ON as f32;
    let stats = scrawl_core::dataops::fit_pixel_stats(&data, theta).unwrap();
    let mu = stats.mu as f64;

    let count_gap = |policy: &PolicyNet<f32>, tag: &str| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de);
        let samples =
            scrawl_core::tasks::generate_unconditional(policy, 100, cfg.max_steps, &mut rng)
                .expect("samples");
        let mean = samples
            .iter()
            .map(|c| c.on_pixel_count(theta) as f64)
            .sum::<f64>()
            / samples.len() as f64;
        eprintln!("[criterion 5 seed {seed}] {tag} mean count {mean:.1} (mu {mu:.1})");
        (mean - mu).abs()
    };

    let untrained = PolicyNet::<f32>::new(
        PolicyConfig { grid: GRID, width_mode: WidthMode::Learned(2), arch: PolicyArch::ResNet },
        cfg.seed ^ 0x504f_4c49,
    )
    .unwrap();
    let gap_untrained = count_gap(&untrained, "untrained");
    let ckpt = final_policy_ckpt(&dir, cfg.total_updates);
    let (trained, _, _, _) = checkpoint::load_policy::<f32>(&ckpt).expect("final checkpoint");
    let gap_trained = count_gap(&trained, "trained");
    assert!(
        gap_trained <= 0.5 * gap_untrained,
        "seed {seed}: |count - mu| shrank only {gap_untrained:.1} -> {gap_trained:.1}"
    );
    println!(
        "criterion 5 (seed {seed}): PASS (disc fake score {fake_early:.4} -> {fake_late:.4}, \
         count gap {gap_untrained:.1} -> {gap_trained:.1})"
    );
}

#[test]
fn criterion_5_generation_smoke_seed11() {
    generation_seed_check(11);
}

#[test]
fn criterion_5_generation_smoke_seed12() {
    generation_seed_check(12);
}

#[test]
fn criterion_5_generation_smoke_seed13() {
    generation_seed_check(13);
}

// ============================================================================
// Criterion 6: lambda-penalty monotonicity
// ============================================================================

#[test]
fn criterion_6_lambda_monotonicity() {
    init_math();
    // the heavier-penalty arm first (it is not shared with criterion 4)
    let cfg_high = parsing_cfg(PARSE_SMOKE_SEED, 0.5);
    let dir_high = ensure_run("parse_l1_0.5_seed7", &cfg_high, WidthMode::Learned(2));
    let cfg_low = parsing_cfg(PARSE_SMOKE_SEED, 0.089);
    let dir_low = ensure_run("parse_l1_0.089_seed7", &cfg_low, WidthMode::Learned(2));

    let strokes_of = |dir: &Path, cfg: &TrainConfig| -> f64 {
        let ckpt = final_policy_ckpt(dir, cfg.total_updates);
        let (policy, _, _, _) = checkpoint::load_policy::<f32>(&ckpt).expect("checkpoint");
        let (_, mean_strokes) = heldout_parse_stats(&policy, cfg.max_steps);
        mean_strokes
    };
    let low = strokes_of(&dir_low, &cfg_low);
    let high = strokes_of(&dir_high, &cfg_high);
    assert!(
        high < low,
        "stroke count not monotone in lambda1: {high:.2} (0.5) vs {low:.2} (0.089)"
    );
    println!(
        "criterion 6: PASS (mean strokes {low:.2} at lambda1=0.089 vs {high:.2} at lambda1=0.5)"
    );
}
