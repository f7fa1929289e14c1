//! Realness scorer for generated canvases: four spectral-normalized
//! convolutions with leaky-ReLU, global sum pooling, and a
//! spectral-normalized linear output, trained with hinge loss at a 3:1
//! fake:real ratio with hard-negative mining.

use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nn::conv::{ConvCache, ConvShape};
use crate::nn::linear::LinearCache;
use crate::nn::{leaky_relu_backward, leaky_relu_forward, AdamW, Conv2d, Linear, Param};
use crate::num::Real;
use crate::policy::canvases_to_batch;
use crate::raster::Canvas;

const LEAKY_SLOPE: f64 = 0.1;
const INIT_POWER_ITERATIONS: usize = 50;

#[derive(Debug, Error)]
pub enum DiscError {
    #[error("hinge loss requires nonempty real and fake batches")]
    EmptyBatch,
    #[error("fake batch of {fake} violates the 3:1 contract against {real} reals")]
    BadRatio { real: usize, fake: usize },
    #[error("canvas side {found} does not match discriminator grid {expected}")]
    BadCanvasSide { expected: usize, found: usize },
}

// ============================================================================
// Spectral normalization
// ============================================================================

fn l2_normalize<S: Real>(v: &mut [S]) {
    let norm = v.iter().map(|&x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
    if norm > 0.0 {
        let inv = S::of_f64(1.0 / norm.max(1e-12));
        for x in v.iter_mut() {
            *x *= inv;
        }
    }
}

/// One power-iteration step on the flattened weight; returns the estimated
/// largest singular value and the (u, v) pair it used. `u` updates in place.
pub fn power_iteration_step<S: Real>(w: &Array2<S>, u: &mut [S]) -> (S, Vec<S>, Vec<S>) {
    let (rows, cols) = w.dim();
    assert_eq!(rows, u.len());
    // v = normalize(W^T u)
    let mut v = vec![S::zero(); cols];
    for r in 0..rows {
        let ur = u[r];
        for c in 0..cols {
            v[c] += w[(r, c)] * ur;
        }
    }
    l2_normalize(&mut v);
    // u = normalize(W v)
    let mut u_new = vec![S::zero(); rows];
    for r in 0..rows {
        let mut acc = S::zero();
        for c in 0..cols {
            acc += w[(r, c)] * v[c];
        }
        u_new[r] = acc;
    }
    l2_normalize(&mut u_new);
    // sigma = u^T W v
    let mut sigma = S::zero();
    for r in 0..rows {
        let mut acc = S::zero();
        for c in 0..cols {
            acc += w[(r, c)] * v[c];
        }
        sigma += u_new[r] * acc;
    }
    u.copy_from_slice(&u_new);
    (sigma, u_new, v)
}

/// Divides the weight by the one-step power-iteration estimate of its
/// largest singular value, updating the iteration state in place. A zero
/// matrix (sigma = 0) is returned unchanged.
pub fn spectral_normalize<S: Real>(w: &Array2<S>, u: &mut [S]) -> (Array2<S>, S, Vec<S>, Vec<S>) {
    let (sigma, u_used, v_used) = power_iteration_step(w, u);
    if sigma.as_f64() <= 0.0 {
        return (w.clone(), sigma, u_used, v_used);
    }
    (w.mapv(|x| x / sigma), sigma, u_used, v_used)
}

/// Gradient of a loss through W_hat = W / sigma(W), with sigma = u^T W v and
/// (u, v) treated as constants:
/// dW = (dW_hat - (sum dW_hat .* W_hat) u v^T) / sigma.
fn spectral_grad<S: Real>(
    dwhat: &Array2<S>,
    what: &Array2<S>,
    sigma: S,
    u: &[S],
    v: &[S],
) -> Array2<S> {
    if sigma.as_f64() <= 0.0 {
        return dwhat.clone();
    }
    let inner: S = dwhat
        .iter()
        .zip(what.iter())
        .map(|(&d, &w)| d * w)
        .fold(S::zero(), |a, b| a + b);
    let mut out = dwhat.clone();
    for r in 0..out.nrows() {
        for c in 0..out.ncols() {
            out[(r, c)] = (out[(r, c)] - inner * u[r] * v[c]) / sigma;
        }
    }
    out
}

// ============================================================================
// Hinge loss
// ============================================================================

/// mean(max(0, 1 - r)) over reals + mean(max(0, 1 + f)) over fakes.
pub fn hinge_loss<S: Real>(real_scores: &[S], fake_scores: &[S]) -> Result<S, DiscError> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(DiscError::EmptyBatch);
    }
    let one = S::one();
    let real: S = real_scores
        .iter()
        .map(|&r| (one - r).max(S::zero()))
        .sum::<S>()
        / S::of_usize(real_scores.len());
    let fake: S = fake_scores
        .iter()
        .map(|&f| (one + f).max(S::zero()))
        .sum::<S>()
        / S::of_usize(fake_scores.len());
    Ok(real + fake)
}

// ============================================================================
// Discriminator network
// ============================================================================

#[derive(Debug, Clone)]
pub struct Discriminator<S: Real> {
    pub grid: usize,
    pub convs: Vec<Conv2d<S>>,
    pub fc: Linear<S>,
    /// Power-iteration state per layer (4 convs then fc).
    pub sn_u: Vec<Vec<S>>,
}

pub struct DiscCache<S: Real> {
    conv_caches: Vec<ConvCache<S>>,
    relu_outs: Vec<Array4<S>>,
    norm_weights: Vec<(Array2<S>, S, Vec<S>, Vec<S>)>,
    fc_cache: LinearCache<S>,
    fc_norm: (Array2<S>, S, Vec<S>, Vec<S>),
    spatial: Vec<(usize, usize)>,
}

impl<S: Real> Discriminator<S> {
    pub fn new(grid: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = [
            ConvShape { c_in: 1, c_out: 64, kernel: 3, stride: 1, pad: 1 },
            ConvShape { c_in: 64, c_out: 64, kernel: 3, stride: 2, pad: 1 },
            ConvShape { c_in: 64, c_out: 128, kernel: 3, stride: 1, pad: 1 },
            ConvShape { c_in: 128, c_out: 128, kernel: 3, stride: 2, pad: 1 },
        ];
        let convs: Vec<Conv2d<S>> = shapes.iter().map(|&s| Conv2d::new(s, &mut rng)).collect();
        let fc = Linear::new(128, 1, &mut rng);

        let mut sn_u: Vec<Vec<S>> = convs
            .iter()
            .map(|c| {
                let mut u: Vec<S> = (0..c.shape.c_out)
                    .map(|_| S::of_f64(crate::nn::randn(&mut rng)))
                    .collect();
                l2_normalize(&mut u);
                u
            })
            .collect();
        let mut u_fc: Vec<S> = vec![S::of_f64(crate::nn::randn(&mut rng))];
        l2_normalize(&mut u_fc);
        sn_u.push(u_fc);

        let mut disc = Self { grid, convs, fc, sn_u };
        // converge the spectral estimates before first use
        for _ in 0..INIT_POWER_ITERATIONS {
            for i in 0..disc.convs.len() {
                let w = disc.convs[i].weight_matrix();
                power_iteration_step(&w, &mut disc.sn_u[i]);
            }
            let w = disc.fc.weight_matrix();
            power_iteration_step(&w, &mut disc.sn_u[4]);
        }
        disc
    }

    fn check_obs(&self, obs: &Array4<S>) -> Result<(), DiscError> {
        let (_, _, h, _) = obs.dim();
        if h != self.grid {
            return Err(DiscError::BadCanvasSide { expected: self.grid, found: h });
        }
        Ok(())
    }

    /// Evaluation-mode scores: spectral states are read, never written.
    pub fn score_batch(&self, obs: &Array4<S>) -> Result<Vec<S>, DiscError> {
        self.check_obs(obs)?;
        let mut x = obs.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let mut u = self.sn_u[i].clone();
            let (what, _, _, _) = spectral_normalize(&conv.weight_matrix(), &mut u);
            let mut normed = conv.clone();
            normed.set_weight_from_matrix(&what);
            x = normed.forward_no_cache(&x);
            leaky_relu_forward(&mut x, LEAKY_SLOPE);
        }
        let feat = sum_pool(&x);
        let mut u = self.sn_u[4].clone();
        let (what_fc, _, _, _) = spectral_normalize(&self.fc.weight_matrix(), &mut u);
        let mut fc = self.fc.clone();
        fc.set_weight_from_matrix(&what_fc);
        let out = fc.forward_no_cache(&feat);
        Ok(out.column(0).to_vec())
    }

    /// Convenience single-canvas score.
    pub fn score(&self, canvas: &Canvas<S>) -> Result<S, DiscError> {
        let obs = canvases_to_batch(&[canvas]);
        Ok(self.score_batch(&obs)?[0])
    }

    /// Training-mode forward: runs one power iteration per layer (updating
    /// the stored state) and caches everything backward needs.
    pub fn forward_train(&mut self, obs: &Array4<S>) -> Result<(Vec<S>, DiscCache<S>), DiscError> {
        self.check_obs(obs)?;
        let mut x = obs.clone();
        let mut conv_caches = Vec::new();
        let mut relu_outs = Vec::new();
        let mut norm_weights = Vec::new();
        let mut spatial = Vec::new();
        for i in 0..self.convs.len() {
            let w = self.convs[i].weight_matrix();
            let (what, sigma, u, v) = spectral_normalize(&w, &mut self.sn_u[i]);
            let mut normed = self.convs[i].clone();
            normed.set_weight_from_matrix(&what);
            let (out, cache) = normed.forward(&x);
            let mut out = out;
            leaky_relu_forward(&mut out, LEAKY_SLOPE);
            conv_caches.push(cache);
            relu_outs.push(out.clone());
            norm_weights.push((what, sigma, u, v));
            let (_, _, h, w_) = out.dim();
            spatial.push((h, w_));
            x = out;
        }
        let feat = sum_pool(&x);
        let w = self.fc.weight_matrix();
        let (what_fc, sigma, u, v) = spectral_normalize(&w, &mut self.sn_u[4]);
        let mut fc = self.fc.clone();
        fc.set_weight_from_matrix(&what_fc);
        let (out, fc_cache) = fc.forward(&feat);
        drop(feat);
        Ok((
            out.column(0).to_vec(),
            DiscCache {
                conv_caches,
                relu_outs,
                norm_weights,
                fc_cache,
                fc_norm: (what_fc, sigma, u, v),
                spatial,
            },
        ))
    }

    /// Backward from per-sample score gradients; accumulates parameter
    /// gradients on the raw (unnormalized) weights.
    pub fn backward(&mut self, cache: &DiscCache<S>, dscores: &[S]) {
        let b = dscores.len();
        let mut dout = Array2::<S>::zeros((b, 1));
        for (i, &d) in dscores.iter().enumerate() {
            dout[(i, 0)] = d;
        }
        // fc with normalized weight
        let (what_fc, sigma, u, v) = &cache.fc_norm;
        let mut fc_tmp = self.fc.clone();
        fc_tmp.set_weight_from_matrix(what_fc);
        fc_tmp.weight.zero_grad();
        fc_tmp.bias.zero_grad();
        let dfeat = fc_tmp.backward(&cache.fc_cache, &dout);
        let dwhat = fc_tmp
            .weight
            .g
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("fc grad")
            .to_owned();
        let dw = spectral_grad(&dwhat, what_fc, *sigma, u, v);
        {
            let mut gw = self
                .fc
                .weight
                .g
                .view_mut()
                .into_dimensionality::<ndarray::Ix2>()
                .expect("fc grad");
            gw += &dw;
        }
        let gb = self.fc.bias.g.as_slice_mut().expect("fc bias grad");
        for (g, &x) in gb.iter_mut().zip(fc_tmp.bias.g.iter()) {
            *g += x;
        }

        // unpool: broadcast feature gradient over spatial positions
        let (h4, w4) = cache.spatial[3];
        let c4 = self.convs[3].shape.c_out;
        let hw = h4 * w4;
        let mut dx = Array4::<S>::zeros((b, c4, h4, w4));
        {
            let dxs = dx.as_slice_mut().expect("unpool");
            for bi in 0..b {
                for c in 0..c4 {
                    let g = dfeat[(bi, c)];
                    dxs[(bi * c4 + c) * hw..(bi * c4 + c + 1) * hw].fill(g);
                }
            }
        }

        for i in (0..self.convs.len()).rev() {
            leaky_relu_backward(&mut dx, &cache.relu_outs[i], LEAKY_SLOPE);
            let (what, sigma, u, v) = &cache.norm_weights[i];
            let mut tmp = self.convs[i].clone();
            tmp.set_weight_from_matrix(what);
            tmp.weight.zero_grad();
            tmp.bias.zero_grad();
            let dprev = tmp.backward(&cache.conv_caches[i], &dx);
            let s = tmp.shape;
            let dwhat = tmp
                .weight
                .g
                .view()
                .into_shape_with_order((s.c_out, s.k()))
                .expect("conv grad")
                .to_owned();
            let dw = spectral_grad(&dwhat, what, *sigma, u, v);
            {
                let mut gw = self.convs[i]
                    .weight
                    .g
                    .view_mut()
                    .into_shape_with_order((s.c_out, s.k()))
                    .expect("conv grad");
                gw += &dw;
            }
            let gb = self.convs[i].bias.g.as_slice_mut().expect("conv bias grad");
            for (g, &x) in gb.iter_mut().zip(tmp.bias.g.iter()) {
                *g += x;
            }
            dx = dprev;
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut ps = Vec::new();
        for conv in &mut self.convs {
            ps.extend(conv.params_mut());
        }
        ps.extend(self.fc.params_mut());
        ps
    }

    pub fn named_params(&mut self) -> Vec<(String, &mut Param<S>)> {
        let mut names = Vec::new();
        for i in 0..4 {
            names.push(format!("disc_conv{i}.weight"));
            names.push(format!("disc_conv{i}.bias"));
        }
        names.push("disc_fc.weight".into());
        names.push("disc_fc.bias".into());
        names.into_iter().zip(self.params_mut()).collect()
    }

    pub fn named_buffers(&mut self) -> Vec<(String, &mut Vec<S>)> {
        self.sn_u
            .iter_mut()
            .enumerate()
            .map(|(i, u)| (format!("sn_u{i}"), u))
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Zeroes the output layer; a fresh scorer then maps everything to 0.
    pub fn zero_output_layer(&mut self) {
        self.fc.weight.v.fill(S::zero());
        self.fc.bias.v.fill(S::zero());
    }
}

fn sum_pool<S: Real>(x: &Array4<S>) -> Array2<S> {
    let (b, c, h, w) = x.dim();
    let hw = h * w;
    let xs = x.as_slice().expect("contiguous pool input");
    let mut out = Array2::<S>::zeros((b, c));
    let os = out.as_slice_mut().expect("pool out");
    for bi in 0..b {
        for ci in 0..c {
            os[bi * c + ci] = xs[(bi * c + ci) * hw..(bi * c + ci + 1) * hw]
                .iter()
                .cloned()
                .sum();
        }
    }
    out
}

// ============================================================================
// Update step with hard-negative mining
// ============================================================================

#[derive(Debug, Clone, Copy)]
pub struct DiscUpdateStats<S: Real> {
    pub loss: S,
    pub mean_real_score: S,
    pub mean_fake_score: S,
}

/// Indices of the `keep` highest-scoring fakes (the hard negatives):
/// descending score, ties by index.
pub fn mine_hard_negatives<S: Real>(scores: &[S], keep: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(keep);
    idx
}

/// One hinge-loss gradient step: fakes must be exactly 3x the reals, the
/// hardest third of the fakes (by current score) enters the loss.
pub fn discriminator_update<S: Real>(
    disc: &mut Discriminator<S>,
    reals: &[Canvas<S>],
    fakes: &[Canvas<S>],
    opt: &mut AdamW<S>,
    mining: bool,
) -> Result<DiscUpdateStats<S>, DiscError> {
    if reals.is_empty() || fakes.is_empty() {
        return Err(DiscError::EmptyBatch);
    }
    if fakes.len() != 3 * reals.len() {
        return Err(DiscError::BadRatio { real: reals.len(), fake: fakes.len() });
    }
    let keep = fakes.len().div_ceil(3);
    let mined: Vec<&Canvas<S>> = if mining {
        let fake_refs: Vec<&Canvas<S>> = fakes.iter().collect();
        let scores = disc.score_batch(&canvases_to_batch(&fake_refs)).expect("scores");
        mine_hard_negatives(&scores, keep)
            .into_iter()
            .map(|i| &fakes[i])
            .collect()
    } else {
        fakes.iter().take(keep).collect()
    };

    let n_real = reals.len();
    let n_fake = mined.len();
    let mut batch: Vec<&Canvas<S>> = reals.iter().collect();
    batch.extend(mined);
    let obs = canvases_to_batch(&batch);

    disc.zero_grads();
    let (scores, cache) = disc.forward_train(&obs)?;
    let real_scores = &scores[..n_real];
    let fake_scores = &scores[n_real..];
    let loss = hinge_loss(real_scores, fake_scores)?;

    // d hinge / d score
    let mut dscores = vec![S::zero(); scores.len()];
    let inv_real = S::one() / S::of_usize(n_real);
    let inv_fake = S::one() / S::of_usize(n_fake);
    for (i, &r) in real_scores.iter().enumerate() {
        if S::one() - r > S::zero() {
            dscores[i] = -inv_real;
        }
    }
    for (j, &f) in fake_scores.iter().enumerate() {
        if S::one() + f > S::zero() {
            dscores[n_real + j] = inv_fake;
        }
    }
    disc.backward(&cache, &dscores);
    opt.step(&mut disc.params_mut());

    let mean = |xs: &[S]| xs.iter().cloned().sum::<S>() / S::of_usize(xs.len());
    Ok(DiscUpdateStats {
        loss,
        mean_real_score: mean(real_scores),
        mean_fake_score: mean(fake_scores),
    })
}
