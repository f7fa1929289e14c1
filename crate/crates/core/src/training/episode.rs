//! Batched episode rollouts. All episodes of a batch advance in lockstep so
//! every policy forward and discriminator scoring runs as one batch;
//! per-episode seeded streams keep the results independent of batching.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EpisodeStep, TrainError, Trajectory};
use crate::dataops::ClusterCenters;
use crate::discriminator::Discriminator;
use crate::policy::{canvases_to_batch, sample_action, Decision, PolicyNet};
use crate::raster::{render_stroke, Canvas};
use crate::rewards::{
    align_or_zero, generation_reward_parts, parsing_reward, GenRewardConfig, ParseRewardConfig,
};
use crate::num::Real;

pub struct GenEpisodeParams<'a, S: Real> {
    pub disc: &'a Discriminator<S>,
    pub reward_cfg: &'a GenRewardConfig<S>,
    pub centers: &'a ClusterCenters<S>,
    pub max_steps: usize,
    pub theta_on: S,
}

struct GenState<S: Real> {
    canvas: Canvas<S>,
    rng: ChaCha8Rng,
    center_idx: usize,
    prev_reward: f64,
    steps: Vec<EpisodeStep<S>>,
    done: bool,
}

/// Runs one generation episode per RNG stream, in lockstep.
///
/// Starts from the blank canvas; every continue renders and composes the
/// stroke and credits the difference of successive instantaneous rewards.
/// The first stroke is credited against the blank-canvas reward. A stop
/// leaves the canvas unchanged, so its shaped reward is exactly zero.
pub fn run_generation_episodes<S: Real>(
    policy: &PolicyNet<S>,
    params: &GenEpisodeParams<'_, S>,
    rngs: Vec<ChaCha8Rng>,
) -> Result<Vec<Trajectory<S>>, TrainError> {
    let grid = policy.config.grid;
    let blank = Canvas::<S>::zeros(grid);
    // Blank canvas: align contributes 0 against any center, so the blank
    // reward is shared by every episode in the batch.
    let blank_score = params.disc.score(&blank)?.as_f64();
    let blank_reward = generation_reward_parts(blank_score, 0.0, 0, params.reward_cfg);

    let mut states: Vec<GenState<S>> = rngs
        .into_iter()
        .map(|mut rng| {
            let center_idx = rng.random_range(0..params.centers.k);
            GenState {
                canvas: blank.clone(),
                rng,
                center_idx,
                prev_reward: blank_reward,
                steps: Vec::new(),
                done: false,
            }
        })
        .collect();

    for t in 0..params.max_steps {
        let active: Vec<usize> = (0..states.len()).filter(|&i| !states[i].done).collect();
        if active.is_empty() {
            break;
        }
        let obs: Vec<&Canvas<S>> = active.iter().map(|&i| &states[i].canvas).collect();
        let dists = policy.forward_eval(&canvases_to_batch(&obs))?;

        // sample; render strokes for the continuing episodes
        let mut continuing: Vec<usize> = Vec::new();
        let mut new_canvases: Vec<Canvas<S>> = Vec::new();
        for (pos, &i) in active.iter().enumerate() {
            let state = &mut states[i];
            let sampled = sample_action(&dists.row(pos), &mut state.rng);
            match sampled.decision {
                Decision::Stop => {
                    state.steps.push(EpisodeStep {
                        observation: state.canvas.clone(),
                        decision: Decision::Stop,
                        action: None,
                        log_prob: sampled.log_prob,
                        instantaneous_reward: state.prev_reward,
                        shaped_reward: 0.0,
                        t,
                    });
                    state.done = true;
                }
                Decision::Continue => {
                    let action = sampled.action.expect("continue carries an action");
                    let stroke = render_stroke::<S>(&action, grid)?;
                    let composed = state.canvas.compose(&stroke)?;
                    state.steps.push(EpisodeStep {
                        observation: state.canvas.clone(),
                        decision: Decision::Continue,
                        action: Some(action),
                        log_prob: sampled.log_prob,
                        instantaneous_reward: 0.0, // filled after scoring
                        shaped_reward: 0.0,
                        t,
                    });
                    continuing.push(i);
                    new_canvases.push(composed);
                }
            }
        }

        if !continuing.is_empty() {
            let refs: Vec<&Canvas<S>> = new_canvases.iter().collect();
            let scores = params.disc.score_batch(&canvases_to_batch(&refs))?;
            for ((&i, canvas), score) in
                continuing.iter().zip(new_canvases).zip(scores)
            {
                let state = &mut states[i];
                let center = &params.centers.centers[state.center_idx];
                let (align_value, _) = align_or_zero(&canvas, center, params.theta_on);
                let reward = generation_reward_parts(
                    score.as_f64(),
                    align_value,
                    canvas.on_pixel_count(params.theta_on),
                    params.reward_cfg,
                );
                let step = state.steps.last_mut().expect("step just pushed");
                step.instantaneous_reward = reward;
                step.shaped_reward = reward - state.prev_reward;
                state.prev_reward = reward;
                state.canvas = canvas;
                if t + 1 == params.max_steps {
                    state.done = true;
                }
            }
        }
    }

    Ok(states
        .into_iter()
        .map(|s| Trajectory::finalize(s.steps, s.canvas))
        .collect())
}

/// Single-episode convenience wrapper.
pub fn run_generation_episode<S: Real>(
    policy: &PolicyNet<S>,
    params: &GenEpisodeParams<'_, S>,
    rng: ChaCha8Rng,
) -> Result<Trajectory<S>, TrainError> {
    Ok(run_generation_episodes(policy, params, vec![rng])?.remove(0))
}

struct ParseState<S: Real> {
    residual: Canvas<S>,
    original: Canvas<S>,
    accum: Canvas<S>,
    rng: ChaCha8Rng,
    steps: Vec<EpisodeStep<S>>,
    done: bool,
}

/// Runs one parsing episode per (target, RNG) pair, in lockstep.
///
/// The observation starts as the target; each continue renders a stroke,
/// scores it against the residual (or the original, behind the config
/// switch), masks it out of the residual, and composes it into the output
/// accumulation canvas. The returned final canvas is the accumulation.
pub fn run_parsing_episodes<S: Real>(
    policy: &PolicyNet<S>,
    targets: &[&Canvas<S>],
    cfg: &ParseRewardConfig,
    max_steps: usize,
    theta_on: S,
    rngs: Vec<ChaCha8Rng>,
) -> Result<Vec<Trajectory<S>>, TrainError> {
    assert_eq!(targets.len(), rngs.len(), "one rng per target");
    let grid = policy.config.grid;
    let mut states: Vec<ParseState<S>> = targets
        .iter()
        .zip(rngs)
        .map(|(&target, rng)| ParseState {
            residual: target.clone(),
            original: target.clone(),
            accum: Canvas::zeros(grid),
            rng,
            steps: Vec::new(),
            done: false,
        })
        .collect();

    for t in 0..max_steps {
        let active: Vec<usize> = (0..states.len()).filter(|&i| !states[i].done).collect();
        if active.is_empty() {
            break;
        }
        let obs: Vec<&Canvas<S>> = active.iter().map(|&i| &states[i].residual).collect();
        let dists = policy.forward_eval(&canvases_to_batch(&obs))?;

        for (pos, &i) in active.iter().enumerate() {
            let state = &mut states[i];
            let sampled = sample_action(&dists.row(pos), &mut state.rng);
            match sampled.decision {
                Decision::Stop => {
                    state.steps.push(EpisodeStep {
                        observation: state.residual.clone(),
                        decision: Decision::Stop,
                        action: None,
                        log_prob: sampled.log_prob,
                        instantaneous_reward: 0.0,
                        shaped_reward: 0.0,
                        t,
                    });
                    state.done = true;
                }
                Decision::Continue => {
                    let action = sampled.action.expect("continue carries an action");
                    let stroke = render_stroke::<S>(&action, grid)?;
                    let fidelity_target = if cfg.align_against_original {
                        &state.original
                    } else {
                        &state.residual
                    };
                    let reward = parsing_reward(&stroke, fidelity_target, t, cfg, theta_on);
                    let observation = state.residual.clone();
                    state.residual = state.residual.mask_out(&stroke, theta_on)?;
                    state.accum = state.accum.compose(&stroke)?;
                    state.steps.push(EpisodeStep {
                        observation,
                        decision: Decision::Continue,
                        action: Some(action),
                        log_prob: sampled.log_prob,
                        instantaneous_reward: reward,
                        // per-stroke fidelity is already marginal credit
                        shaped_reward: reward,
                        t,
                    });
                    if t + 1 == max_steps {
                        state.done = true;
                    }
                }
            }
        }
    }

    Ok(states
        .into_iter()
        .map(|s| Trajectory::finalize(s.steps, s.accum))
        .collect())
}

/// Single-episode convenience wrapper.
pub fn run_parsing_episode<S: Real>(
    policy: &PolicyNet<S>,
    target: &Canvas<S>,
    cfg: &ParseRewardConfig,
    max_steps: usize,
    theta_on: S,
    rng: ChaCha8Rng,
) -> Result<Trajectory<S>, TrainError> {
    Ok(run_parsing_episodes(policy, &[target], cfg, max_steps, theta_on, vec![rng])?.remove(0))
}
