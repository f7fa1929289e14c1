//! REINFORCE with a scalar exponential-moving-average baseline and the
//! hinged KL-to-uniform entropy penalty.
//!
//! loss = -(1/B) sum_steps log pi(a_t | C_t) * (G_t - b)
//!        + (1/B) sum_steps alpha * [ max(0, KL(pi_t || U) - tau)
//!                                    + KL(U || pi_S_t) ]
//!
//! The hinged forward divergence lets the stroke-parameter heads sharpen
//! freely up to the tau budget; the un-hinged mass-covering term on the
//! stop head alone exerts a constant restoring force against
//! episode-length collapse (its gradient p - u does not vanish when the
//! head saturates). Everything lands on the head logits in closed form and
//! backpropagates in micro-batches with a fixed reduction order.

use super::{TrainError, Trajectory};
use crate::nn::AdamW;
use crate::num::Real;
use crate::policy::{
    canvases_to_batch, Decision, DistBatch, HeadGrads, PolicyNet,
};
use crate::raster::{Canvas, StrokeAction};

const MICROBATCH: usize = 128;
const BASELINE_DECAY: f64 = 0.99;

#[derive(Debug, Clone, Copy)]
pub struct ReinforceCfg {
    pub alpha: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub loss: f64,
    pub mean_return: f64,
    pub mean_length: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
    pub baseline_used: f64,
}

/// One flattened decision point ready for the loss.
pub struct StepRef<'a, S: Real> {
    pub obs: &'a Canvas<S>,
    pub decision: Decision,
    pub action: Option<StrokeAction>,
    pub advantage: f64,
}

/// Closed-form logit gradients for a micro-batch, given the train-mode
/// probability outputs aligned with `steps`. `inv_b` is 1 / batch size.
pub fn head_grads_for_steps<S: Real>(
    dists: &DistBatch<S>,
    steps: &[StepRef<'_, S>],
    cfg: &ReinforceCfg,
    inv_b: f64,
) -> (HeadGrads<S>, f64, f64, f64) {
    let n = steps.len();
    let g = dists.coord.dim().2;
    let mut grads = HeadGrads {
        coord: ndarray::Array3::zeros((n, 6, g)),
        width: dists.width.as_ref().map(|w| ndarray::Array2::zeros((n, w.ncols()))),
        stop: ndarray::Array2::zeros((n, 2)),
    };
    let mut loss = 0.0;
    let mut kl_sum = 0.0;
    let mut penalty_sum = 0.0;

    for (j, step) in steps.iter().enumerate() {
        let a = step.advantage * inv_b;
        let stop_idx = match step.decision {
            Decision::Continue => 0usize,
            Decision::Stop => 1usize,
        };
        // policy-gradient part: advantage * (p - onehot) on sampled heads
        let mut log_prob = 0.0;
        for k in 0..2 {
            let p = dists.stop[(j, k)].as_f64();
            let onehot = if k == stop_idx { 1.0 } else { 0.0 };
            grads.stop[(j, k)] = S::of_f64(a * (p - onehot));
            if k == stop_idx {
                log_prob += p.max(f64::MIN_POSITIVE).ln();
            }
        }
        if let Some(action) = &step.action {
            for (head, &bin) in action.coord_bins().iter().enumerate() {
                for k in 0..g {
                    let p = dists.coord[(j, head, k)].as_f64();
                    let onehot = if k == bin { 1.0 } else { 0.0 };
                    grads.coord[(j, head, k)] = S::of_f64(a * (p - onehot));
                    if k == bin {
                        log_prob += p.max(f64::MIN_POSITIVE).ln();
                    }
                }
            }
            if let (Some(wp), Some(wg)) = (&dists.width, grads.width.as_mut()) {
                for k in 0..wp.ncols() {
                    let p = wp[(j, k)].as_f64();
                    let onehot = if k == action.width_bin { 1.0 } else { 0.0 };
                    wg[(j, k)] = S::of_f64(a * (p - onehot));
                    if k == action.width_bin {
                        log_prob += p.max(f64::MIN_POSITIVE).ln();
                    }
                }
            }
        }
        loss -= step.advantage * inv_b * log_prob;

        // hinged forward KL over every head
        let d = dists.row(j);
        let kl = crate::policy::kl_to_uniform(&d);
        kl_sum += kl;
        let scale = cfg.alpha * inv_b;
        if kl > cfg.tau {
            penalty_sum += cfg.alpha * (kl - cfg.tau);
            for (head, pvec) in d.coord.iter().enumerate() {
                add_fwd_kl_grad(pvec, scale, |k, v| {
                    grads.coord[(j, head, k)] += S::of_f64(v);
                });
            }
            add_fwd_kl_grad(&d.stop, scale, |k, v| {
                grads.stop[(j, k)] += S::of_f64(v);
            });
            if let (Some(wp), Some(wg)) = (&d.width, grads.width.as_mut()) {
                add_fwd_kl_grad(wp, scale, |k, v| {
                    wg[(j, k)] += S::of_f64(v);
                });
            }
        }
        // un-hinged mass-covering term on the stop head
        penalty_sum += cfg.alpha * crate::policy::kl_uniform_to_vec(&d.stop);
        for k in 0..2 {
            let u = 0.5;
            grads.stop[(j, k)] += S::of_f64(scale * (d.stop[k].as_f64() - u));
        }
    }
    loss += penalty_sum * inv_b;
    (grads, loss, kl_sum, penalty_sum)
}

/// d KL(p || U) / d logit_j = p_j (ln(n p_j) - KL_head); zero-probability
/// entries contribute zero.
fn add_fwd_kl_grad<S: Real>(p: &[S], scale: f64, mut sink: impl FnMut(usize, f64)) {
    let n = p.len() as f64;
    let kl_head: f64 = p
        .iter()
        .map(|&pi| {
            let pi = pi.as_f64();
            if pi > 0.0 {
                pi * (n * pi).ln()
            } else {
                0.0
            }
        })
        .sum();
    for (k, &pk) in p.iter().enumerate() {
        let pk = pk.as_f64();
        if pk > 0.0 {
            sink(k, scale * pk * ((n * pk).ln() - kl_head));
        }
    }
}

/// Evaluation-mode value of the REINFORCE loss; the reference function for
/// finite-difference gradient checks.
pub fn reinforce_loss<S: Real>(
    policy: &PolicyNet<S>,
    steps: &[StepRef<'_, S>],
    cfg: &ReinforceCfg,
    inv_b: f64,
) -> Result<f64, TrainError> {
    let obs: Vec<&Canvas<S>> = steps.iter().map(|s| s.obs).collect();
    let dists = policy.forward_eval(&canvases_to_batch(&obs))?;
    let mut loss = 0.0;
    for (j, step) in steps.iter().enumerate() {
        let d = dists.row(j);
        let lp = crate::policy::log_prob_of(&d, step.decision, step.action.as_ref())
            .map_err(TrainError::Policy)?;
        loss -= step.advantage * inv_b * lp;
        let kl = crate::policy::kl_to_uniform(&d);
        loss += inv_b * cfg.alpha * (kl - cfg.tau).max(0.0);
        loss += inv_b * cfg.alpha * crate::policy::kl_uniform_to_vec(&d.stop);
    }
    Ok(loss)
}

/// One gradient step over a batch of trajectories produced by the current
/// policy. The scalar baseline advances by its EMA after the advantages
/// are taken.
pub fn reinforce_update<S: Real>(
    policy: &mut PolicyNet<S>,
    trajectories: &[Trajectory<S>],
    cfg: &ReinforceCfg,
    opt: &mut AdamW<S>,
    baseline: &mut f64,
) -> Result<UpdateStats, TrainError> {
    if trajectories.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let b = trajectories.len();
    let inv_b = 1.0 / b as f64;
    let baseline_used = *baseline;

    let steps: Vec<StepRef<'_, S>> = trajectories
        .iter()
        .flat_map(|traj| {
            traj.steps.iter().zip(traj.returns.iter()).map(|(s, &ret)| StepRef {
                obs: &s.observation,
                decision: s.decision,
                action: s.action,
                advantage: ret - baseline_used,
            })
        })
        .collect();

    policy.zero_grads();
    let mut loss = 0.0;
    let mut kl_sum = 0.0;
    for chunk in steps.chunks(MICROBATCH) {
        let obs: Vec<&Canvas<S>> = chunk.iter().map(|s| s.obs).collect();
        let (dists, cache) = policy.forward_train(&canvases_to_batch(&obs))?;
        let (grads, chunk_loss, chunk_kl, _) = head_grads_for_steps(&dists, chunk, cfg, inv_b);
        policy.backward(&cache, &grads);
        loss += chunk_loss;
        kl_sum += chunk_kl;
    }

    let grad_norm = {
        let mut acc = 0.0f64;
        for p in policy.params_mut() {
            for &g in p.g.iter() {
                let g = g.as_f64();
                acc += g * g;
            }
        }
        acc.sqrt()
    };
    opt.step(&mut policy.params_mut());

    let mean_return =
        trajectories.iter().map(Trajectory::episode_return).sum::<f64>() * inv_b;
    let mean_length =
        trajectories.iter().map(|t| t.len() as f64).sum::<f64>() * inv_b;
    let mean_kl = kl_sum / steps.len().max(1) as f64;
    *baseline = BASELINE_DECAY * baseline_used + (1.0 - BASELINE_DECAY) * mean_return;

    Ok(UpdateStats {
        loss,
        mean_return,
        mean_length,
        mean_kl,
        grad_norm,
        baseline_used,
    })
}
