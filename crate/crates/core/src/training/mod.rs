//! Episode execution and REINFORCE optimization for the two trainable
//! tasks: unconditional generation and parsing.

mod episode;
mod reinforce;
mod loops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::dataops::DataError;
use crate::discriminator::DiscError;
use crate::num::Real;
use crate::policy::{Decision, PolicyError};
use crate::raster::{Canvas, RasterError};
use crate::rewards::RewardError;

pub use episode::{
    run_generation_episode, run_generation_episodes, run_parsing_episode, run_parsing_episodes,
    GenEpisodeParams,
};
pub use loops::{
    config_fingerprint, latest_policy_checkpoint, sibling_disc_path, train_parsing,
    train_resumable, train_unconditional, GenTrainer, IterStats, ParseTrainer, TrainSummary,
    METRICS_HEADER,
};
pub use reinforce::{
    head_grads_for_steps, reinforce_loss, reinforce_update, ReinforceCfg, StepRef, UpdateStats,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Disc(#[from] DiscError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("empty trajectory batch")]
    EmptyBatch,
    #[error("config error: {0}")]
    Config(String),
}

// ============================================================================
// Config
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Generation,
    Parsing,
}

/// Hyperparameters for one training run. The task defaults carry the values
/// from the published tables.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub tau: f64,
    pub policy_lr: f64,
    pub policy_weight_decay: f64,
    pub disc_lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub total_updates: u64,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
    pub kmeans_k: usize,
    pub kmeans_seed: u64,
    pub hard_negative_mining: bool,
    /// Parsing fidelity against the original target instead of the residual.
    pub align_against_original: bool,
}

impl TrainConfig {
    pub fn generation_defaults() -> Self {
        Self {
            task: TaskKind::Generation,
            lambda1: 1.016,
            lambda2: 1.0,
            alpha: 0.336,
            tau: 0.415,
            policy_lr: 3.096e-5,
            policy_weight_decay: 0.0064,
            disc_lr: 1e-4,
            batch_size: 256,
            max_steps: 16,
            seed: 0,
            total_updates: 500,
            log_interval: 10,
            checkpoint_interval: 100,
            kmeans_k: 64,
            kmeans_seed: 1,
            hard_negative_mining: true,
            align_against_original: false,
        }
    }

    pub fn parsing_defaults() -> Self {
        Self {
            task: TaskKind::Parsing,
            lambda1: 0.089,
            lambda2: 0.0,
            alpha: 0.59,
            tau: 2.72,
            policy_lr: 1.5e-4,
            policy_weight_decay: 1.6e-5,
            disc_lr: 0.0,
            batch_size: 256,
            max_steps: 16,
            seed: 0,
            total_updates: 2000,
            log_interval: 10,
            checkpoint_interval: 400,
            kmeans_k: 64,
            kmeans_seed: 1,
            hard_negative_mining: false,
            align_against_original: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(TrainError::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

// ============================================================================
// Trajectories
// ============================================================================

/// One decision point of an episode.
#[derive(Debug, Clone)]
pub struct EpisodeStep<S: Real> {
    /// Canvas the policy saw at this step.
    pub observation: Canvas<S>,
    pub decision: Decision,
    pub action: Option<crate::raster::StrokeAction>,
    pub log_prob: f64,
    pub instantaneous_reward: f64,
    pub shaped_reward: f64,
    pub t: usize,
}

/// Ordered record of one episode plus per-step reward-to-go.
#[derive(Debug, Clone)]
pub struct Trajectory<S: Real> {
    pub steps: Vec<EpisodeStep<S>>,
    pub final_canvas: Canvas<S>,
    /// returns[i] = sum of shaped rewards from step i on.
    pub returns: Vec<f64>,
}

impl<S: Real> Trajectory<S> {
    pub fn finalize(steps: Vec<EpisodeStep<S>>, final_canvas: Canvas<S>) -> Self {
        let mut returns = vec![0.0; steps.len()];
        let mut acc = 0.0;
        for i in (0..steps.len()).rev() {
            acc += steps[i].shaped_reward;
            returns[i] = acc;
        }
        Self { steps, final_canvas, returns }
    }

    /// Number of decision points, including the terminal stop.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of strokes actually drawn.
    pub fn stroke_count(&self) -> usize {
        self.steps.iter().filter(|s| s.action.is_some()).count()
    }

    pub fn episode_return(&self) -> f64 {
        self.returns.first().cloned().unwrap_or(0.0)
    }
}

// ============================================================================
// Deterministic stream derivation
// ============================================================================

pub mod roles {
    pub const EPISODE: u64 = 0x45;
    pub const TARGET: u64 = 0x54;
    pub const REALS: u64 = 0x52;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Mixes a root seed with structured coordinates (role, iteration, index)
/// into an independent deterministic stream.
pub fn derived_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut acc = splitmix64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    ChaCha8Rng::seed_from_u64(acc)
}
