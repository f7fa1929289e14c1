//! The drawing agent's policy: canvas in, factored categorical action
//! distributions out. Six 32-way coordinate heads and a stop/continue head,
//! plus a brush-width head on datasets that learn width.
//!
//! Sampling, log-probability, and KL-to-uniform all run on the
//! probability vectors; gradient computation lives in [`net`].

pub mod net;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::kl_to_uniform_vec;
use crate::num::Real;
use crate::raster::StrokeAction;

pub use net::{canvases_to_batch, DistBatch, HeadGrads, PolicyFwdCache, PolicyNet};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("canvas side {found} does not match policy grid {expected}")]
    BadCanvasSide { expected: usize, found: usize },
    #[error("action bin {bin} out of range for head of size {size}")]
    InvalidBin { bin: usize, size: usize },
    #[error("continue decision requires an action")]
    MissingAction,
    #[error("grid {0} not divisible by 4 (required by the conv backbone)")]
    BadGrid(usize),
}

/// Whether the brush-width head is learned or bypassed with a constant bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WidthMode {
    Learned(usize),
    Fixed(usize),
}

impl WidthMode {
    pub fn learned_bins(&self) -> Option<usize> {
        match self {
            WidthMode::Learned(w) => Some(*w),
            WidthMode::Fixed(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyArch {
    /// Conv backbone with residual blocks, per the full agent.
    ResNet,
    /// Single fully connected layer on the flattened canvas; used by the
    /// reduced-policy gradient checks and toy problems.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyConfig {
    pub grid: usize,
    pub width_mode: WidthMode,
    pub arch: PolicyArch,
}

impl PolicyConfig {
    /// The full 32x32 agent with a learned two-bin width head.
    pub fn mnist() -> Self {
        Self {
            grid: crate::raster::GRID,
            width_mode: WidthMode::Learned(crate::raster::WIDTH_BINS),
            arch: PolicyArch::ResNet,
        }
    }

    /// Omniglot takes brush width as a constant and omits the width head.
    pub fn omniglot() -> Self {
        Self {
            grid: crate::raster::GRID,
            width_mode: WidthMode::Fixed(0),
            arch: PolicyArch::ResNet,
        }
    }

    pub fn reduced(grid: usize) -> Self {
        Self {
            grid,
            width_mode: WidthMode::Learned(crate::raster::WIDTH_BINS),
            arch: PolicyArch::Linear,
        }
    }
}

/// Continue/stop decision; index 0 = continue, index 1 = stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

impl Decision {
    pub fn index(&self) -> usize {
        match self {
            Decision::Continue => 0,
            Decision::Stop => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Decision::Continue
        } else {
            Decision::Stop
        }
    }
}

/// The per-step policy output for one canvas: six coordinate categoricals,
/// an optional width categorical, and the stop/continue categorical.
#[derive(Debug, Clone)]
pub struct ActionDistributions<S: Real> {
    pub coord: [Vec<S>; 6],
    pub width: Option<Vec<S>>,
    pub stop: [S; 2],
    pub fixed_width_bin: usize,
}

/// Result of sampling the factored distributions once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledStep {
    pub decision: Decision,
    pub action: Option<StrokeAction>,
    pub log_prob: f64,
}

fn sample_categorical<S: Real>(p: &[S], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        cum += pi.as_f64();
        if u < cum {
            return i;
        }
    }
    p.len() - 1
}

fn ln_checked(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).ln()
}

/// Samples a stop/continue decision and, on continue, a full stroke action.
/// The log-probability sums every sampled component; the stop component is
/// always included.
pub fn sample_action<S: Real>(
    dists: &ActionDistributions<S>,
    rng: &mut ChaCha8Rng,
) -> SampledStep {
    let stop_idx = sample_categorical(&dists.stop, rng);
    let mut log_prob = ln_checked(dists.stop[stop_idx].as_f64());
    if stop_idx == 1 {
        return SampledStep {
            decision: Decision::Stop,
            action: None,
            log_prob,
        };
    }
    let mut bins = [0usize; 6];
    for (head, bin) in bins.iter_mut().enumerate() {
        let idx = sample_categorical(&dists.coord[head], rng);
        log_prob += ln_checked(dists.coord[head][idx].as_f64());
        *bin = idx;
    }
    let width_bin = match &dists.width {
        Some(w) => {
            let idx = sample_categorical(w, rng);
            log_prob += ln_checked(w[idx].as_f64());
            idx
        }
        None => dists.fixed_width_bin,
    };
    SampledStep {
        decision: Decision::Continue,
        action: Some(StrokeAction::new(bins, width_bin)),
        log_prob,
    }
}

/// Log-probability the sampler would have recorded for `(decision, action)`.
pub fn log_prob_of<S: Real>(
    dists: &ActionDistributions<S>,
    decision: Decision,
    action: Option<&StrokeAction>,
) -> Result<f64, PolicyError> {
    let mut log_prob = match decision {
        Decision::Continue => ln_checked(dists.stop[0].as_f64()),
        Decision::Stop => ln_checked(dists.stop[1].as_f64()),
    };
    if decision == Decision::Stop {
        return Ok(log_prob);
    }
    let action = action.ok_or(PolicyError::MissingAction)?;
    for (head, &bin) in action.coord_bins().iter().enumerate() {
        let p = &dists.coord[head];
        if bin >= p.len() {
            return Err(PolicyError::InvalidBin { bin, size: p.len() });
        }
        log_prob += ln_checked(p[bin].as_f64());
    }
    if let Some(w) = &dists.width {
        if action.width_bin >= w.len() {
            return Err(PolicyError::InvalidBin {
                bin: action.width_bin,
                size: w.len(),
            });
        }
        log_prob += ln_checked(w[action.width_bin].as_f64());
    }
    Ok(log_prob)
}

/// Sum over all heads of KL(p || uniform). Bounded by
/// 6 ln G + ln 2 (+ ln W with a learned width head).
pub fn kl_to_uniform<S: Real>(dists: &ActionDistributions<S>) -> f64 {
    let mut kl = 0.0;
    for head in &dists.coord {
        kl += kl_to_uniform_vec(head);
    }
    kl += kl_to_uniform_vec(&dists.stop);
    if let Some(w) = &dists.width {
        kl += kl_to_uniform_vec(w);
    }
    kl
}

/// Floor keeping the mass-covering divergence finite on collapsed heads.
pub const KL_PROB_FLOOR: f64 = 1e-12;

/// KL(U || p) for one head, probabilities clamped at [`KL_PROB_FLOOR`].
/// Unlike the forward direction this diverges when any action's
/// probability vanishes, which is what makes it a usable exploration
/// regularizer.
pub fn kl_uniform_to_vec<S: Real>(p: &[S]) -> f64 {
    let n = p.len() as f64;
    let u = 1.0 / n;
    p.iter()
        .map(|&pi| u * (u / pi.as_f64().max(KL_PROB_FLOOR)).ln())
        .sum()
}

/// Sum over all heads of the mass-covering divergence KL(U || p); the
/// quantity the training-time entropy penalty hinges on.
pub fn kl_uniform_to_policy<S: Real>(dists: &ActionDistributions<S>) -> f64 {
    let mut kl = 0.0;
    for head in &dists.coord {
        kl += kl_uniform_to_vec(head);
    }
    kl += kl_uniform_to_vec(&dists.stop);
    if let Some(w) = &dists.width {
        kl += kl_uniform_to_vec(w);
    }
    kl
}

/// Upper bound of [`kl_to_uniform`] for a policy configuration.
pub fn kl_upper_bound(config: &PolicyConfig) -> f64 {
    let mut bound = 6.0 * (config.grid as f64).ln() + 2.0f64.ln();
    if let Some(w) = config.width_mode.learned_bins() {
        bound += (w as f64).ln();
    }
    bound
}
