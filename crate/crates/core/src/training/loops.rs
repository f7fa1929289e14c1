//! Full training loops: alternating policy/discriminator updates for
//! unconditional generation, policy-only updates for parsing. Both loops
//! write an append-only metrics CSV and periodic checkpoints, and resume
//! bit-exactly from a checkpoint under fixed seeds.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;

use super::episode::{run_generation_episodes, run_parsing_episodes, GenEpisodeParams};
use super::reinforce::{reinforce_update, ReinforceCfg};
use super::{derived_rng, roles, TaskKind, TrainConfig, TrainError};
use crate::checkpoint;
use crate::dataops::{compute_cluster_centers, fit_pixel_stats, ClusterCenters};
use crate::discriminator::{discriminator_update, Discriminator};
use crate::nn::AdamW;
use crate::num::Real;
use crate::policy::{PolicyArch, PolicyConfig, PolicyNet, WidthMode};
use crate::raster::{Canvas, GRID, THETA_ON};
use crate::rewards::{GenRewardConfig, ParseRewardConfig};

pub const METRICS_HEADER: &str =
    "iteration,mean_return,mean_length,mean_kl,disc_real,disc_fake,recon_l2";

#[derive(Debug, Clone, Copy)]
pub struct IterStats {
    pub iteration: u64,
    pub mean_return: f64,
    pub mean_length: f64,
    pub mean_kl: f64,
    pub disc_real: Option<f64>,
    pub disc_fake: Option<f64>,
    pub recon_l2: Option<f64>,
    pub grad_norm: f64,
}

impl IterStats {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        format!(
            "{},{:.6},{:.6},{:.6},{},{},{}",
            self.iteration,
            self.mean_return,
            self.mean_length,
            self.mean_kl,
            opt(self.disc_real),
            opt(self.disc_fake),
            opt(self.recon_l2),
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub iterations_run: u64,
    pub final_iteration: u64,
    pub metrics_path: PathBuf,
    pub last_policy_checkpoint: PathBuf,
    pub last_disc_checkpoint: Option<PathBuf>,
    pub last_stats: Option<IterStats>,
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io { path: path.display().to_string(), source }
}

fn mean_sq_diff<S: Real>(a: &Canvas<S>, b: &Canvas<S>) -> f64 {
    let n = (a.side() * a.side()) as f64;
    a.grid()
        .iter()
        .zip(b.grid().iter())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / n
}

fn policy_ckpt_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("policy_{iteration:06}.ckpt"))
}

fn disc_ckpt_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("disc_{iteration:06}.ckpt"))
}

/// Derives the sibling discriminator checkpoint path from a policy one.
pub fn sibling_disc_path(policy_path: &Path) -> PathBuf {
    let name = policy_path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("policy_000000.ckpt")
        .replacen("policy_", "disc_", 1);
    policy_path.with_file_name(name)
}

/// Latest policy checkpoint in a run directory, by embedded iteration.
pub fn latest_policy_checkpoint(dir: &Path) -> Option<(PathBuf, u64)> {
    let mut best: Option<(PathBuf, u64)> = None;
    for entry in fs::read_dir(dir).ok()?.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name
            .strip_prefix("policy_")
            .and_then(|s| s.strip_suffix(".ckpt"))
        {
            if let Ok(iter) = num.parse::<u64>() {
                if best.as_ref().is_none_or(|(_, b)| iter > *b) {
                    best = Some((entry.path(), iter));
                }
            }
        }
    }
    best
}

/// Stable fingerprint of the hyperparameters that define a run; used to
/// refuse resuming into a directory produced by a different config.
pub fn config_fingerprint(cfg: &TrainConfig, width_mode: WidthMode) -> String {
    format!(
        "task={:?} l1={} l2={} alpha={} tau={} plr={} pwd={} dlr={} batch={} steps={} seed={} \
         total={} k={} kseed={} mining={} orig={} width={:?}",
        cfg.task,
        cfg.lambda1,
        cfg.lambda2,
        cfg.alpha,
        cfg.tau,
        cfg.policy_lr,
        cfg.policy_weight_decay,
        cfg.disc_lr,
        cfg.batch_size,
        cfg.max_steps,
        cfg.seed,
        cfg.total_updates,
        cfg.kmeans_k,
        cfg.kmeans_seed,
        cfg.hard_negative_mining,
        cfg.align_against_original,
        width_mode,
    )
}

fn check_or_write_fingerprint(
    dir: &Path,
    cfg: &TrainConfig,
    width_mode: WidthMode,
) -> Result<(), TrainError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("run_config.txt");
    let fp = config_fingerprint(cfg, width_mode);
    if path.exists() {
        let existing = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        if existing.trim() != fp {
            return Err(TrainError::Config(format!(
                "run directory {} was produced by a different config",
                dir.display()
            )));
        }
    } else {
        fs::write(&path, &fp).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Runs (or finishes) a training run in `out_dir`, resuming from the last
/// checkpoint when one exists. A completed run returns immediately.
pub fn train_resumable<S: Real>(
    cfg: &TrainConfig,
    data: Arc<Vec<Canvas<S>>>,
    width_mode: WidthMode,
    out_dir: &Path,
    on_iteration: Option<&mut dyn FnMut(&IterStats)>,
) -> Result<TrainSummary, TrainError> {
    check_or_write_fingerprint(out_dir, cfg, width_mode)?;
    let resume = latest_policy_checkpoint(out_dir)
        .filter(|(_, iter)| *iter <= cfg.total_updates)
        .map(|(path, _)| path);
    match cfg.task {
        TaskKind::Generation => train_unconditional(
            cfg,
            data,
            width_mode,
            out_dir,
            resume.as_deref(),
            on_iteration,
        ),
        TaskKind::Parsing => {
            train_parsing(cfg, data, width_mode, out_dir, resume.as_deref(), on_iteration)
        }
    }
}

// ============================================================================
// Generation trainer
// ============================================================================

pub struct GenTrainer<S: Real> {
    pub cfg: TrainConfig,
    pub policy: PolicyNet<S>,
    pub policy_opt: AdamW<S>,
    pub disc: Discriminator<S>,
    pub disc_opt: AdamW<S>,
    pub reward_cfg: GenRewardConfig<S>,
    pub centers: ClusterCenters<S>,
    pub baseline: f64,
    pub iteration: u64,
    data: Arc<Vec<Canvas<S>>>,
}

impl<S: Real> GenTrainer<S> {
    pub fn new(
        cfg: TrainConfig,
        data: Arc<Vec<Canvas<S>>>,
        width_mode: WidthMode,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let theta = S::of_f64(THETA_ON);
        let stats = fit_pixel_stats(&data, theta)?;
        let centers = compute_cluster_centers(&data, cfg.kmeans_k, cfg.kmeans_seed)?;
        let config = PolicyConfig { grid: GRID, width_mode, arch: PolicyArch::ResNet };
        let policy = PolicyNet::new(config, cfg.seed ^ 0x504f_4c49)?;
        let policy_opt = AdamW::new(S::of_f64(cfg.policy_lr), S::of_f64(cfg.policy_weight_decay));
        let disc = Discriminator::new(GRID, cfg.seed ^ 0x4449_5343);
        let disc_opt = AdamW::new(S::of_f64(cfg.disc_lr), S::zero()).with_betas(0.0, 0.9);
        let reward_cfg = GenRewardConfig { lambda1: cfg.lambda1, lambda2: cfg.lambda2, stats };
        Ok(Self {
            cfg,
            policy,
            policy_opt,
            disc,
            disc_opt,
            reward_cfg,
            centers,
            baseline: 0.0,
            iteration: 0,
            data,
        })
    }

    pub fn resume(
        cfg: TrainConfig,
        data: Arc<Vec<Canvas<S>>>,
        width_mode: WidthMode,
        policy_ckpt: &Path,
    ) -> Result<Self, TrainError> {
        let mut trainer = Self::new(cfg, data, width_mode)?;
        let (policy, opt, step, scalars) = checkpoint::load_policy::<S>(policy_ckpt)?;
        trainer.policy = policy;
        trainer.policy_opt = opt;
        trainer.iteration = step;
        trainer.baseline = scalars.get("baseline").cloned().unwrap_or(0.0);
        let disc_path = sibling_disc_path(policy_ckpt);
        let (disc, disc_opt, _) = checkpoint::load_discriminator::<S>(&disc_path)?;
        trainer.disc = disc;
        trainer.disc_opt = disc_opt;
        Ok(trainer)
    }

    /// One iteration: batch of episodes, one policy update, one
    /// discriminator update at the 3:1 fake:real ratio.
    pub fn step(&mut self) -> Result<IterStats, TrainError> {
        let iter = self.iteration + 1;
        let theta = S::of_f64(THETA_ON);
        let rngs: Vec<_> = (0..self.cfg.batch_size)
            .map(|e| derived_rng(self.cfg.seed, &[roles::EPISODE, iter, e as u64]))
            .collect();
        let params = GenEpisodeParams {
            disc: &self.disc,
            reward_cfg: &self.reward_cfg,
            centers: &self.centers,
            max_steps: self.cfg.max_steps,
            theta_on: theta,
        };
        let trajectories = run_generation_episodes(&self.policy, &params, rngs)?;

        let rcfg = ReinforceCfg { alpha: self.cfg.alpha, tau: self.cfg.tau };
        let stats = reinforce_update(
            &mut self.policy,
            &trajectories,
            &rcfg,
            &mut self.policy_opt,
            &mut self.baseline,
        )?;

        // 3:1 contract: floor(batch / 3) reals against the first 3x fakes
        let n_real = (self.cfg.batch_size / 3).max(1);
        let n_fake = 3 * n_real;
        let fakes: Vec<Canvas<S>> = trajectories
            .iter()
            .take(n_fake)
            .map(|t| t.final_canvas.clone())
            .collect();
        let mut rng = derived_rng(self.cfg.seed, &[roles::REALS, iter]);
        let reals: Vec<Canvas<S>> = (0..n_real)
            .map(|_| self.data[rng.random_range(0..self.data.len())].clone())
            .collect();
        let disc_stats = discriminator_update(
            &mut self.disc,
            &reals,
            &fakes,
            &mut self.disc_opt,
            self.cfg.hard_negative_mining,
        )?;

        self.iteration = iter;
        Ok(IterStats {
            iteration: iter,
            mean_return: stats.mean_return,
            mean_length: stats.mean_length,
            mean_kl: stats.mean_kl,
            disc_real: Some(disc_stats.mean_real_score.as_f64()),
            disc_fake: Some(disc_stats.mean_fake_score.as_f64()),
            recon_l2: None,
            grad_norm: stats.grad_norm,
        })
    }

    pub fn save(&mut self, dir: &Path) -> Result<(PathBuf, PathBuf), TrainError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let ppath = policy_ckpt_path(dir, self.iteration);
        let dpath = disc_ckpt_path(dir, self.iteration);
        let mut extras = BTreeMap::new();
        extras.insert("baseline".to_string(), self.baseline);
        checkpoint::save_policy(&ppath, &mut self.policy, &self.policy_opt, self.iteration, &extras)?;
        checkpoint::save_discriminator(&dpath, &mut self.disc, &self.disc_opt, self.iteration)?;
        Ok((ppath, dpath))
    }
}

// ============================================================================
// Parsing trainer
// ============================================================================

pub struct ParseTrainer<S: Real> {
    pub cfg: TrainConfig,
    pub policy: PolicyNet<S>,
    pub policy_opt: AdamW<S>,
    pub reward_cfg: ParseRewardConfig,
    pub baseline: f64,
    pub iteration: u64,
    data: Arc<Vec<Canvas<S>>>,
}

impl<S: Real> ParseTrainer<S> {
    pub fn new(
        cfg: TrainConfig,
        data: Arc<Vec<Canvas<S>>>,
        width_mode: WidthMode,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(TrainError::Config("parsing needs a nonempty dataset".into()));
        }
        let config = PolicyConfig { grid: GRID, width_mode, arch: PolicyArch::ResNet };
        let policy = PolicyNet::new(config, cfg.seed ^ 0x504f_4c49)?;
        let policy_opt = AdamW::new(S::of_f64(cfg.policy_lr), S::of_f64(cfg.policy_weight_decay));
        let reward_cfg = ParseRewardConfig {
            lambda1: cfg.lambda1,
            align_against_original: cfg.align_against_original,
        };
        Ok(Self { cfg, policy, policy_opt, reward_cfg, baseline: 0.0, iteration: 0, data })
    }

    pub fn resume(
        cfg: TrainConfig,
        data: Arc<Vec<Canvas<S>>>,
        width_mode: WidthMode,
        policy_ckpt: &Path,
    ) -> Result<Self, TrainError> {
        let mut trainer = Self::new(cfg, data, width_mode)?;
        let (policy, opt, step, scalars) = checkpoint::load_policy::<S>(policy_ckpt)?;
        trainer.policy = policy;
        trainer.policy_opt = opt;
        trainer.iteration = step;
        trainer.baseline = scalars.get("baseline").cloned().unwrap_or(0.0);
        Ok(trainer)
    }

    /// One iteration: batch of parsing episodes on sampled targets, one
    /// policy update. No discriminator.
    pub fn step(&mut self) -> Result<IterStats, TrainError> {
        let iter = self.iteration + 1;
        let theta = S::of_f64(THETA_ON);
        let mut target_rng = derived_rng(self.cfg.seed, &[roles::TARGET, iter]);
        let target_idx: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| target_rng.random_range(0..self.data.len()))
            .collect();
        let targets: Vec<&Canvas<S>> = target_idx.iter().map(|&i| &self.data[i]).collect();
        let rngs: Vec<_> = (0..self.cfg.batch_size)
            .map(|e| derived_rng(self.cfg.seed, &[roles::EPISODE, iter, e as u64]))
            .collect();
        let trajectories = run_parsing_episodes(
            &self.policy,
            &targets,
            &self.reward_cfg,
            self.cfg.max_steps,
            theta,
            rngs,
        )?;

        let recon_l2 = trajectories
            .iter()
            .zip(targets.iter())
            .map(|(t, &target)| mean_sq_diff(&t.final_canvas, target))
            .sum::<f64>()
            / trajectories.len() as f64;

        let rcfg = ReinforceCfg { alpha: self.cfg.alpha, tau: self.cfg.tau };
        let stats = reinforce_update(
            &mut self.policy,
            &trajectories,
            &rcfg,
            &mut self.policy_opt,
            &mut self.baseline,
        )?;
        let mean_strokes = trajectories
            .iter()
            .map(|t| t.stroke_count() as f64)
            .sum::<f64>()
            / trajectories.len() as f64;

        self.iteration = iter;
        Ok(IterStats {
            iteration: iter,
            mean_return: stats.mean_return,
            // parsing logs drawn strokes rather than decision counts
            mean_length: mean_strokes,
            mean_kl: stats.mean_kl,
            disc_real: None,
            disc_fake: None,
            recon_l2: Some(recon_l2),
            grad_norm: stats.grad_norm,
        })
    }

    pub fn save(&mut self, dir: &Path) -> Result<PathBuf, TrainError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let ppath = policy_ckpt_path(dir, self.iteration);
        let mut extras = BTreeMap::new();
        extras.insert("baseline".to_string(), self.baseline);
        checkpoint::save_policy(&ppath, &mut self.policy, &self.policy_opt, self.iteration, &extras)?;
        Ok(ppath)
    }
}

// ============================================================================
// Full loops (metrics + checkpoints)
// ============================================================================

struct MetricsLog {
    file: fs::File,
    path: PathBuf,
}

impl MetricsLog {
    fn open(path: &Path, append: bool) -> Result<Self, TrainError> {
        let exists = path.exists();
        let mut opts = fs::OpenOptions::new();
        if append && exists {
            opts.append(true);
        } else {
            opts.write(true).create(true).truncate(true);
        }
        let mut file = opts.open(path).map_err(|e| io_err(path, e))?;
        if !(append && exists) {
            writeln!(file, "{METRICS_HEADER}").map_err(|e| io_err(path, e))?;
        }
        Ok(Self { file, path: path.to_path_buf() })
    }

    fn row(&mut self, stats: &IterStats) -> Result<(), TrainError> {
        writeln!(self.file, "{}", stats.csv_row()).map_err(|e| io_err(&self.path, e))?;
        self.file.flush().map_err(|e| io_err(&self.path, e))
    }
}

fn drive<S: Real, T>(
    trainer: &mut T,
    cfg: &TrainConfig,
    out_dir: &Path,
    resumed: bool,
    mut step_fn: impl FnMut(&mut T) -> Result<IterStats, TrainError>,
    mut save_fn: impl FnMut(&mut T, &Path) -> Result<PathBuf, TrainError>,
    iteration_of: impl Fn(&T) -> u64,
    mut on_iteration: Option<&mut dyn FnMut(&IterStats)>,
) -> Result<TrainSummary, TrainError>
where
    T: ?Sized,
{
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut log = MetricsLog::open(&metrics_path, resumed)?;

    let start = iteration_of(trainer);
    let mut last_stats: Option<IterStats> = None;
    let mut last_ckpt = None;
    let mut iterations_run = 0u64;
    for iter in (start + 1)..=cfg.total_updates {
        let stats = step_fn(trainer)?;
        debug_assert_eq!(stats.iteration, iter);
        if iter % cfg.log_interval == 0 {
            log.row(&stats)?;
        }
        if iter % cfg.checkpoint_interval == 0 || iter == cfg.total_updates {
            last_ckpt = Some(save_fn(trainer, out_dir)?);
        }
        if let Some(cb) = on_iteration.as_mut() {
            cb(&stats);
        }
        last_stats = Some(stats);
        iterations_run += 1;
    }
    let final_iteration = iteration_of(trainer);
    let last_policy_checkpoint = last_ckpt.unwrap_or_else(|| policy_ckpt_path(out_dir, final_iteration));
    let _ = S::zero();
    Ok(TrainSummary {
        iterations_run,
        final_iteration,
        metrics_path,
        last_policy_checkpoint,
        last_disc_checkpoint: None,
        last_stats,
    })
}

/// Alternating policy/discriminator training for unconditional generation.
/// Writes metrics.csv and periodic paired checkpoints into `out_dir`.
pub fn train_unconditional<S: Real>(
    cfg: &TrainConfig,
    data: Arc<Vec<Canvas<S>>>,
    width_mode: WidthMode,
    out_dir: &Path,
    resume_from: Option<&Path>,
    on_iteration: Option<&mut dyn FnMut(&IterStats)>,
) -> Result<TrainSummary, TrainError> {
    if cfg.task != TaskKind::Generation {
        return Err(TrainError::Config("config task must be generation".into()));
    }
    let mut trainer = match resume_from {
        Some(path) => GenTrainer::resume(cfg.clone(), data, width_mode, path)?,
        None => GenTrainer::new(cfg.clone(), data, width_mode)?,
    };
    let resumed = resume_from.is_some();
    let mut summary = drive::<S, GenTrainer<S>>(
        &mut trainer,
        cfg,
        out_dir,
        resumed,
        |t| t.step(),
        |t, dir| t.save(dir).map(|(p, _)| p),
        |t| t.iteration,
        on_iteration,
    )?;
    summary.last_disc_checkpoint = Some(disc_ckpt_path(out_dir, summary.final_iteration));
    Ok(summary)
}

/// Policy-only parsing training; one sampled target per episode.
pub fn train_parsing<S: Real>(
    cfg: &TrainConfig,
    data: Arc<Vec<Canvas<S>>>,
    width_mode: WidthMode,
    out_dir: &Path,
    resume_from: Option<&Path>,
    on_iteration: Option<&mut dyn FnMut(&IterStats)>,
) -> Result<TrainSummary, TrainError> {
    if cfg.task != TaskKind::Parsing {
        return Err(TrainError::Config("config task must be parsing".into()));
    }
    let mut trainer = match resume_from {
        Some(path) => ParseTrainer::resume(cfg.clone(), data, width_mode, path)?,
        None => ParseTrainer::new(cfg.clone(), data, width_mode)?,
    };
    let resumed = resume_from.is_some();
    drive::<S, ParseTrainer<S>>(
        &mut trainer,
        cfg,
        out_dir,
        resumed,
        |t| t.step(),
        |t, dir| t.save(dir),
        |t| t.iteration,
        on_iteration,
    )
}
