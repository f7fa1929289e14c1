//! Policy network: ResNet feature backbone (3 conv layers + 8 residual
//! blocks, batch norm, ReLU) and three MLP branches computing the action
//! distributions. The coordinate branch is one fully connected layer whose
//! output reshapes to a (6, G) logit matrix; the width and stop branches
//! have a 64-unit hidden layer. Final logit layers start zeroed so the
//! initial policy is exactly uniform.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ActionDistributions, PolicyArch, PolicyConfig, PolicyError, WidthMode};
use crate::nn::batchnorm::BnCache;
use crate::nn::conv::{ConvCache, ConvShape};
use crate::nn::linear::LinearCache;
use crate::nn::{BatchNorm2d, Conv2d, Linear, Param};
use crate::num::Real;
use crate::raster::Canvas;

const CHANNELS: usize = 32;
const NUM_BLOCKS: usize = 8;
const HEAD_HIDDEN: usize = 64;

// ============================================================================
// Batched distributions
// ============================================================================

/// Probability outputs for a batch of canvases.
#[derive(Debug, Clone)]
pub struct DistBatch<S: Real> {
    /// (batch, 6, grid)
    pub coord: Array3<S>,
    /// (batch, width_bins) when the width head is learned
    pub width: Option<Array2<S>>,
    /// (batch, 2): [continue, stop]
    pub stop: Array2<S>,
    pub fixed_width_bin: usize,
}

impl<S: Real> DistBatch<S> {
    pub fn len(&self) -> usize {
        self.stop.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Extracts the distributions of one batch row.
    pub fn row(&self, i: usize) -> ActionDistributions<S> {
        let coord = std::array::from_fn(|h| self.coord.slice(ndarray::s![i, h, ..]).to_vec());
        ActionDistributions {
            coord,
            width: self.width.as_ref().map(|w| w.row(i).to_vec()),
            stop: [self.stop[(i, 0)], self.stop[(i, 1)]],
            fixed_width_bin: self.fixed_width_bin,
        }
    }
}

/// Gradients of a scalar loss with respect to the head logits.
#[derive(Debug, Clone)]
pub struct HeadGrads<S: Real> {
    pub coord: Array3<S>,
    pub width: Option<Array2<S>>,
    pub stop: Array2<S>,
}

impl<S: Real> HeadGrads<S> {
    pub fn zeros(batch: usize, config: &PolicyConfig) -> Self {
        Self {
            coord: Array3::zeros((batch, 6, config.grid)),
            width: config
                .width_mode
                .learned_bins()
                .map(|w| Array2::zeros((batch, w))),
            stop: Array2::zeros((batch, 2)),
        }
    }
}

/// Packs canvases into a (batch, 1, side, side) network input.
pub fn canvases_to_batch<S: Real>(canvases: &[&Canvas<S>]) -> Array4<S> {
    let side = canvases.first().map_or(0, |c| c.side());
    let mut out = Array4::zeros((canvases.len(), 1, side, side));
    for (i, canvas) in canvases.iter().enumerate() {
        out.index_axis_mut(Axis(0), i)
            .index_axis_mut(Axis(0), 0)
            .assign(canvas.grid());
    }
    out
}

// ============================================================================
// Building blocks
// ============================================================================

fn relu4<S: Real>(x: &mut Array4<S>) {
    x.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
}

fn relu4_backward<S: Real>(dout: &mut Array4<S>, out: &Array4<S>) {
    dout.zip_mut_with(out, |d, &o| {
        if o <= S::zero() {
            *d = S::zero();
        }
    });
}

fn relu2<S: Real>(x: &mut Array2<S>) {
    x.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
}

fn relu2_backward<S: Real>(dout: &mut Array2<S>, out: &Array2<S>) {
    dout.zip_mut_with(out, |d, &o| {
        if o <= S::zero() {
            *d = S::zero();
        }
    });
}

#[derive(Debug, Clone)]
struct ResBlock<S: Real> {
    conv_a: Conv2d<S>,
    bn_a: BatchNorm2d<S>,
    conv_b: Conv2d<S>,
    bn_b: BatchNorm2d<S>,
}

struct BlockCache<S: Real> {
    conv_a: ConvCache<S>,
    bn_a: BnCache<S>,
    r_a: Array4<S>,
    conv_b: ConvCache<S>,
    bn_b: BnCache<S>,
}

impl<S: Real> ResBlock<S> {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let shape = ConvShape { c_in: CHANNELS, c_out: CHANNELS, kernel: 3, stride: 1, pad: 1 };
        Self {
            conv_a: Conv2d::new(shape, rng),
            bn_a: BatchNorm2d::new(CHANNELS),
            conv_b: Conv2d::new(shape, rng),
            bn_b: BatchNorm2d::new(CHANNELS),
        }
    }

    fn forward_train(&mut self, x: &Array4<S>) -> (Array4<S>, BlockCache<S>) {
        let (ca, conv_a) = self.conv_a.forward(x);
        let (mut ra, bn_a) = self.bn_a.forward_train(&ca);
        relu4(&mut ra);
        let (cb, conv_b) = self.conv_b.forward(&ra);
        let (ub, bn_b) = self.bn_b.forward_train(&cb);
        let mut out = ub;
        out += x;
        relu4(&mut out);
        (out, BlockCache { conv_a, bn_a, r_a: ra, conv_b, bn_b })
    }

    fn forward_eval(&self, x: &Array4<S>) -> Array4<S> {
        let ca = self.conv_a.forward_no_cache(x);
        let ra = self.bn_a.forward_eval_act(&ca, true);
        let cb = self.conv_b.forward_no_cache(&ra);
        let mut out = self.bn_b.forward_eval(&cb);
        out += x;
        relu4(&mut out);
        out
    }

    /// `out` is this block's forward output (owned by the backbone cache).
    fn backward(&mut self, cache: &BlockCache<S>, out: &Array4<S>, dout: &Array4<S>) -> Array4<S> {
        let mut dz = dout.clone();
        relu4_backward(&mut dz, out);
        let du = self.bn_b.backward(&cache.bn_b, &dz);
        let mut dra = self.conv_b.backward(&cache.conv_b, &du);
        relu4_backward(&mut dra, &cache.r_a);
        let dca = self.bn_a.backward(&cache.bn_a, &dra);
        let mut dx = self.conv_a.backward(&cache.conv_a, &dca);
        dx += &dz; // skip connection
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut ps = self.conv_a.params_mut();
        ps.extend(self.bn_a.params_mut());
        ps.extend(self.conv_b.params_mut());
        ps.extend(self.bn_b.params_mut());
        ps
    }
}

#[derive(Debug, Clone)]
struct ResNetBackbone<S: Real> {
    conv1: Conv2d<S>,
    bn1: BatchNorm2d<S>,
    conv2: Conv2d<S>,
    bn2: BatchNorm2d<S>,
    conv3: Conv2d<S>,
    bn3: BatchNorm2d<S>,
    blocks: Vec<ResBlock<S>>,
    feat_hw: usize,
}

struct ResNetCache<S: Real> {
    conv1: ConvCache<S>,
    bn1: BnCache<S>,
    r1: Array4<S>,
    conv2: ConvCache<S>,
    bn2: BnCache<S>,
    r2: Array4<S>,
    conv3: ConvCache<S>,
    bn3: BnCache<S>,
    blocks: Vec<BlockCache<S>>,
    /// activations[0] = r3, activations[i + 1] = block i output.
    activations: Vec<Array4<S>>,
}

impl<S: Real> ResNetBackbone<S> {
    fn new(grid: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv1 = Conv2d::new(
            ConvShape { c_in: 1, c_out: CHANNELS, kernel: 5, stride: 1, pad: 2 },
            rng,
        );
        let down = ConvShape { c_in: CHANNELS, c_out: CHANNELS, kernel: 4, stride: 2, pad: 1 };
        let conv2 = Conv2d::new(down, rng);
        let conv3 = Conv2d::new(down, rng);
        let blocks = (0..NUM_BLOCKS).map(|_| ResBlock::new(rng)).collect();
        Self {
            conv1,
            bn1: BatchNorm2d::new(CHANNELS),
            conv2,
            bn2: BatchNorm2d::new(CHANNELS),
            conv3,
            bn3: BatchNorm2d::new(CHANNELS),
            blocks,
            feat_hw: grid / 4,
        }
    }

    fn feat_dim(&self) -> usize {
        CHANNELS * self.feat_hw * self.feat_hw
    }

    fn forward_train(&mut self, x: &Array4<S>) -> (Array2<S>, ResNetCache<S>) {
        let (c1, conv1) = self.conv1.forward(x);
        let (mut r1, bn1) = self.bn1.forward_train(&c1);
        drop(c1);
        relu4(&mut r1);
        let (c2, conv2) = self.conv2.forward(&r1);
        let (mut r2, bn2) = self.bn2.forward_train(&c2);
        drop(c2);
        relu4(&mut r2);
        let (c3, conv3) = self.conv3.forward(&r2);
        let (mut r3, bn3) = self.bn3.forward_train(&c3);
        drop(c3);
        relu4(&mut r3);

        let mut activations: Vec<Array4<S>> = Vec::with_capacity(self.blocks.len() + 1);
        activations.push(r3);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let (next, cache) = block.forward_train(&activations[i]);
            blocks.push(cache);
            activations.push(next);
        }
        let feat = flatten(activations.last().expect("activations"));
        (
            feat,
            ResNetCache { conv1, bn1, r1, conv2, bn2, r2, conv3, bn3, blocks, activations },
        )
    }

    fn forward_eval(&self, x: &Array4<S>) -> Array2<S> {
        let r1 = self.bn1.forward_eval_act(&self.conv1.forward_no_cache(x), true);
        let r2 = self.bn2.forward_eval_act(&self.conv2.forward_no_cache(&r1), true);
        let mut h = self.bn3.forward_eval_act(&self.conv3.forward_no_cache(&r2), true);
        for block in &self.blocks {
            h = block.forward_eval(&h);
        }
        flatten(&h)
    }

    fn backward(&mut self, cache: &ResNetCache<S>, dfeat: &Array2<S>) {
        let b = dfeat.nrows();
        let hw = self.feat_hw;
        let mut dh = unflatten(dfeat, b, CHANNELS, hw);
        for (i, (block, bcache)) in self
            .blocks
            .iter_mut()
            .zip(cache.blocks.iter())
            .enumerate()
            .rev()
        {
            dh = block.backward(bcache, &cache.activations[i + 1], &dh);
        }
        relu4_backward(&mut dh, &cache.activations[0]);
        let dc3 = self.bn3.backward(&cache.bn3, &dh);
        let mut dr2 = self.conv3.backward(&cache.conv3, &dc3);
        relu4_backward(&mut dr2, &cache.r2);
        let dc2 = self.bn2.backward(&cache.bn2, &dr2);
        let mut dr1 = self.conv2.backward(&cache.conv2, &dc2);
        relu4_backward(&mut dr1, &cache.r1);
        let dc1 = self.bn1.backward(&cache.bn1, &dr1);
        self.conv1.backward_no_dx(&cache.conv1, &dc1);
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut ps = self.conv1.params_mut();
        ps.extend(self.bn1.params_mut());
        ps.extend(self.conv2.params_mut());
        ps.extend(self.bn2.params_mut());
        ps.extend(self.conv3.params_mut());
        ps.extend(self.bn3.params_mut());
        for block in &mut self.blocks {
            ps.extend(block.params_mut());
        }
        ps
    }
}

fn flatten<S: Real>(x: &Array4<S>) -> Array2<S> {
    let (b, c, h, w) = x.dim();
    x.to_shape((b, c * h * w)).expect("flatten").to_owned()
}

fn unflatten<S: Real>(x: &Array2<S>, b: usize, c: usize, hw: usize) -> Array4<S> {
    x.to_shape((b, c, hw, hw)).expect("unflatten").to_owned()
}

// ============================================================================
// Policy network
// ============================================================================

#[derive(Debug, Clone)]
enum Backbone<S: Real> {
    Flat,
    ResNet(Box<ResNetBackbone<S>>),
}

enum BackboneCache<S: Real> {
    Flat,
    ResNet(Box<ResNetCache<S>>),
}

pub struct PolicyFwdCache<S: Real> {
    backbone: BackboneCache<S>,
    obs: Array4<S>,
    coord: LinearCache<S>,
    stop_hidden: Option<(LinearCache<S>, Array2<S>)>,
    stop_out: LinearCache<S>,
    width_hidden: Option<(LinearCache<S>, Array2<S>)>,
    width_out: Option<LinearCache<S>>,
}

#[derive(Debug, Clone)]
pub struct PolicyNet<S: Real> {
    pub config: PolicyConfig,
    backbone: Backbone<S>,
    coord_head: Linear<S>,
    stop_hidden: Option<Linear<S>>,
    stop_out: Linear<S>,
    width_hidden: Option<Linear<S>>,
    width_out: Option<Linear<S>>,
}

impl<S: Real> PolicyNet<S> {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = config.grid;
        let (backbone, feat_dim, hidden) = match config.arch {
            PolicyArch::ResNet => {
                if g % 4 != 0 {
                    return Err(PolicyError::BadGrid(g));
                }
                let bb = ResNetBackbone::new(g, &mut rng);
                let fd = bb.feat_dim();
                (Backbone::ResNet(Box::new(bb)), fd, true)
            }
            PolicyArch::Linear => (Backbone::Flat, g * g, false),
        };

        let coord_head = Linear::new_zeroed(feat_dim, 6 * g);
        let (stop_hidden, stop_out, width_hidden, width_out) = if hidden {
            let sh = Linear::new(feat_dim, HEAD_HIDDEN, &mut rng);
            let so = Linear::new_zeroed(HEAD_HIDDEN, 2);
            let (wh, wo) = match config.width_mode {
                WidthMode::Learned(w) => (
                    Some(Linear::new(feat_dim, HEAD_HIDDEN, &mut rng)),
                    Some(Linear::new_zeroed(HEAD_HIDDEN, w)),
                ),
                WidthMode::Fixed(_) => (None, None),
            };
            (Some(sh), so, wh, wo)
        } else {
            let so = Linear::new_zeroed(feat_dim, 2);
            let wo = match config.width_mode {
                WidthMode::Learned(w) => Some(Linear::new_zeroed(feat_dim, w)),
                WidthMode::Fixed(_) => None,
            };
            (None, so, None, wo)
        };

        Ok(Self {
            config,
            backbone,
            coord_head,
            stop_hidden,
            stop_out,
            width_hidden,
            width_out,
        })
    }

    /// Biases the stop head toward continuing: the continue logit gets
    /// +bias/2 and the stop logit -bias/2, so fresh policies explore
    /// multi-stroke episodes instead of starting from a coin flip.
    pub fn set_stop_bias(&mut self, bias: f64) {
        let b = self.stop_out.bias.v.as_slice_mut().expect("stop bias");
        b[0] = S::of_f64(bias / 2.0);
        b[1] = S::of_f64(-bias / 2.0);
    }

    pub fn fixed_width_bin(&self) -> usize {
        match self.config.width_mode {
            WidthMode::Fixed(bin) => bin,
            WidthMode::Learned(_) => 0,
        }
    }

    fn check_obs(&self, obs: &Array4<S>) -> Result<(), PolicyError> {
        let (_, c, h, w) = obs.dim();
        if c != 1 || h != self.config.grid || w != self.config.grid {
            return Err(PolicyError::BadCanvasSide {
                expected: self.config.grid,
                found: h,
            });
        }
        Ok(())
    }

    fn heads_from_feat(&self, feat: &Array2<S>) -> DistBatch<S> {
        let b = feat.nrows();
        let g = self.config.grid;
        let coord_logits = self.coord_head.forward_no_cache(feat); // (B, 6G)
        let coord = softmax_coord(&coord_logits, b, g);
        let stop_logits = match &self.stop_hidden {
            Some(hid) => {
                let mut h = hid.forward_no_cache(feat);
                relu2(&mut h);
                self.stop_out.forward_no_cache(&h)
            }
            None => self.stop_out.forward_no_cache(feat),
        };
        let stop = crate::nn::softmax_rows(&stop_logits);
        let width = self.width_out.as_ref().map(|wo| {
            let logits = match &self.width_hidden {
                Some(hid) => {
                    let mut h = hid.forward_no_cache(feat);
                    relu2(&mut h);
                    wo.forward_no_cache(&h)
                }
                None => wo.forward_no_cache(feat),
            };
            crate::nn::softmax_rows(&logits)
        });
        DistBatch {
            coord,
            width,
            stop,
            fixed_width_bin: self.fixed_width_bin(),
        }
    }

    /// Evaluation-mode forward: frozen batch-norm statistics, no caches.
    pub fn forward_eval(&self, obs: &Array4<S>) -> Result<DistBatch<S>, PolicyError> {
        self.check_obs(obs)?;
        let feat = match &self.backbone {
            Backbone::Flat => flatten(obs),
            Backbone::ResNet(bb) => bb.forward_eval(obs),
        };
        Ok(self.heads_from_feat(&feat))
    }

    /// Training-mode forward: batch statistics, caches for backward.
    pub fn forward_train(
        &mut self,
        obs: &Array4<S>,
    ) -> Result<(DistBatch<S>, PolicyFwdCache<S>), PolicyError> {
        self.check_obs(obs)?;
        let b = obs.dim().0;
        let g = self.config.grid;
        let (feat, backbone_cache) = match &mut self.backbone {
            Backbone::Flat => (flatten(obs), BackboneCache::Flat),
            Backbone::ResNet(bb) => {
                let (feat, cache) = bb.forward_train(obs);
                (feat, BackboneCache::ResNet(Box::new(cache)))
            }
        };

        let (coord_logits, coord_cache) = self.coord_head.forward(&feat);
        let coord = softmax_coord(&coord_logits, b, g);

        let (stop_logits, stop_hidden_cache, stop_out_cache) = match &self.stop_hidden {
            Some(hid) => {
                let (mut h, hc) = hid.forward(&feat);
                relu2(&mut h);
                let (logits, oc) = self.stop_out.forward(&h);
                (logits, Some((hc, h)), oc)
            }
            None => {
                let (logits, oc) = self.stop_out.forward(&feat);
                (logits, None, oc)
            }
        };
        let stop = crate::nn::softmax_rows(&stop_logits);

        let (width, width_hidden_cache, width_out_cache) = match &self.width_out {
            Some(wo) => match &self.width_hidden {
                Some(hid) => {
                    let (mut h, hc) = hid.forward(&feat);
                    relu2(&mut h);
                    let (logits, oc) = wo.forward(&h);
                    (
                        Some(crate::nn::softmax_rows(&logits)),
                        Some((hc, h)),
                        Some(oc),
                    )
                }
                None => {
                    let (logits, oc) = wo.forward(&feat);
                    (Some(crate::nn::softmax_rows(&logits)), None, Some(oc))
                }
            },
            None => (None, None, None),
        };

        let dists = DistBatch {
            coord,
            width,
            stop,
            fixed_width_bin: self.fixed_width_bin(),
        };
        let cache = PolicyFwdCache {
            backbone: backbone_cache,
            obs: obs.clone(),
            coord: coord_cache,
            stop_hidden: stop_hidden_cache,
            stop_out: stop_out_cache,
            width_hidden: width_hidden_cache,
            width_out: width_out_cache,
        };
        Ok((dists, cache))
    }

    /// Backward from head-logit gradients; accumulates parameter gradients.
    pub fn backward(&mut self, cache: &PolicyFwdCache<S>, grads: &HeadGrads<S>) {
        let b = grads.stop.nrows();
        let g = self.config.grid;
        let dcoord2d = grads
            .coord
            .to_shape((b, 6 * g))
            .expect("coord grads")
            .to_owned();
        let mut dfeat = self.coord_head.backward(&cache.coord, &dcoord2d);

        let dstop_in = self.stop_out.backward(&cache.stop_out, &grads.stop);
        match (&mut self.stop_hidden, &cache.stop_hidden) {
            (Some(hid), Some((hc, hout))) => {
                let mut dh = dstop_in;
                relu2_backward(&mut dh, hout);
                dfeat += &hid.backward(hc, &dh);
            }
            _ => dfeat += &dstop_in,
        }

        if let (Some(wo), Some(wc), Some(dwidth)) =
            (&mut self.width_out, &cache.width_out, &grads.width)
        {
            let dwidth_in = wo.backward(wc, dwidth);
            match (&mut self.width_hidden, &cache.width_hidden) {
                (Some(hid), Some((hc, hout))) => {
                    let mut dh = dwidth_in;
                    relu2_backward(&mut dh, hout);
                    dfeat += &hid.backward(hc, &dh);
                }
                _ => dfeat += &dwidth_in,
            }
        }

        if let (Backbone::ResNet(bb), BackboneCache::ResNet(bc)) =
            (&mut self.backbone, &cache.backbone)
        {
            bb.backward(bc, &dfeat);
        }
        // Flat backbone: the observation is not a parameter, nothing to do.
        let _ = &cache.obs;
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut ps = match &mut self.backbone {
            Backbone::Flat => Vec::new(),
            Backbone::ResNet(bb) => bb.params_mut(),
        };
        ps.extend(self.coord_head.params_mut());
        if let Some(h) = &mut self.stop_hidden {
            ps.extend(h.params_mut());
        }
        ps.extend(self.stop_out.params_mut());
        if let Some(h) = &mut self.width_hidden {
            ps.extend(h.params_mut());
        }
        if let Some(o) = &mut self.width_out {
            ps.extend(o.params_mut());
        }
        ps
    }

    /// Stable (name, shape) listing; the checkpoint schema validates these.
    pub fn named_params(&mut self) -> Vec<(String, &mut Param<S>)> {
        let names = self.param_names();
        let params = self.params_mut();
        assert_eq!(names.len(), params.len());
        names.into_iter().zip(params).collect()
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if matches!(self.backbone, Backbone::ResNet(_)) {
            // order must match params_mut: conv1 bn1 conv2 bn2 conv3 bn3, blocks
            for i in 1..=3 {
                names.push(format!("conv{i}.weight"));
                names.push(format!("conv{i}.bias"));
                names.push(format!("bn{i}.gamma"));
                names.push(format!("bn{i}.beta"));
            }
            for b in 0..NUM_BLOCKS {
                for part in ["conv_a", "bn_a", "conv_b", "bn_b"] {
                    if part.starts_with("conv") {
                        names.push(format!("block{b}.{part}.weight"));
                        names.push(format!("block{b}.{part}.bias"));
                    } else {
                        names.push(format!("block{b}.{part}.gamma"));
                        names.push(format!("block{b}.{part}.beta"));
                    }
                }
            }
        }
        names.push("coord_head.weight".into());
        names.push("coord_head.bias".into());
        if self.stop_hidden.is_some() {
            names.push("stop_hidden.weight".into());
            names.push("stop_hidden.bias".into());
        }
        names.push("stop_out.weight".into());
        names.push("stop_out.bias".into());
        if self.width_hidden.is_some() {
            names.push("width_hidden.weight".into());
            names.push("width_hidden.bias".into());
        }
        if self.width_out.is_some() {
            names.push("width_out.weight".into());
            names.push("width_out.bias".into());
        }
        names
    }

    /// Batch-norm running statistics (saved in checkpoints, not trained).
    pub fn named_buffers(&mut self) -> Vec<(String, &mut Vec<S>)> {
        let mut out: Vec<(String, &mut Vec<S>)> = Vec::new();
        if let Backbone::ResNet(bb) = &mut self.backbone {
            let bb = bb.as_mut();
            for (i, bn) in [(1, &mut bb.bn1), (2, &mut bb.bn2), (3, &mut bb.bn3)] {
                out.push((format!("bn{i}.running_mean"), &mut bn.running_mean));
                out.push((format!("bn{i}.running_var"), &mut bn.running_var));
            }
            for (b, block) in bb.blocks.iter_mut().enumerate() {
                out.push((format!("block{b}.bn_a.running_mean"), &mut block.bn_a.running_mean));
                out.push((format!("block{b}.bn_a.running_var"), &mut block.bn_a.running_var));
                out.push((format!("block{b}.bn_b.running_mean"), &mut block.bn_b.running_mean));
                out.push((format!("block{b}.bn_b.running_var"), &mut block.bn_b.running_var));
            }
        }
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Flattened copy of all parameter values (finite-difference harness).
    pub fn params_to_vec(&mut self) -> Vec<S> {
        let mut out = Vec::new();
        for p in self.params_mut() {
            out.extend(p.v.iter().cloned());
        }
        out
    }

    pub fn set_params_from_vec(&mut self, flat: &[S]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            for (dst, &src) in p.v.iter_mut().zip(&flat[offset..offset + n]) {
                *dst = src;
            }
            offset += n;
        }
        assert_eq!(offset, flat.len());
    }

    pub fn grads_to_vec(&mut self) -> Vec<S> {
        let mut out = Vec::new();
        for p in self.params_mut() {
            out.extend(p.g.iter().cloned());
        }
        out
    }
}

fn softmax_coord<S: Real>(logits: &Array2<S>, b: usize, g: usize) -> Array3<S> {
    let mut coord = Array3::zeros((b, 6, g));
    for bi in 0..b {
        for head in 0..6 {
            let row = logits.slice(ndarray::s![bi, head * g..(head + 1) * g]);
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for k in 0..g {
                let e = (row[k] - max).exp();
                coord[(bi, head, k)] = e;
                sum += e;
            }
            for k in 0..g {
                coord[(bi, head, k)] /= sum;
            }
        }
    }
    coord
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{kl_to_uniform, log_prob_of, sample_action, Decision};
    use crate::raster::StrokeAction;

    fn tiny_obs(grid: usize, batch: usize) -> Array4<f64> {
        let mut obs = Array4::zeros((batch, 1, grid, grid));
        for (i, v) in obs.iter_mut().enumerate() {
            *v = ((i * 7 + 3) % 5) as f64 / 4.0;
        }
        obs
    }

    #[test]
    fn fresh_policy_is_exactly_uniform() {
        let mut net = PolicyNet::<f64>::new(PolicyConfig::mnist(), 0).unwrap();
        let obs = tiny_obs(32, 2);
        let dists = net.forward_eval(&obs).unwrap();
        for i in 0..2 {
            let d = dists.row(i);
            assert!(kl_to_uniform(&d) < 1e-12);
            for head in &d.coord {
                for &p in head {
                    assert!((p - 1.0 / 32.0).abs() < 1e-12);
                }
            }
            assert!((d.stop[0] - 0.5).abs() < 1e-12);
        }
        // width head present on MNIST config
        assert!(dists.width.is_some());
        let (mut dists_t, _) = net.forward_train(&obs).unwrap();
        let d = dists_t.row(0);
        assert!(kl_to_uniform(&d) < 1e-12);
        dists_t.fixed_width_bin = 0;
    }

    #[test]
    fn probability_vectors_normalize() {
        let mut net = PolicyNet::<f64>::new(PolicyConfig::mnist(), 3).unwrap();
        // randomize final layers so outputs are non-uniform
        for p in net.params_mut() {
            for (i, v) in p.v.iter_mut().enumerate() {
                *v += ((i % 13) as f64 - 6.0) * 0.01;
            }
        }
        let dists = net.forward_eval(&tiny_obs(32, 3)).unwrap();
        for i in 0..3 {
            let d = dists.row(i);
            for head in &d.coord {
                let s: f64 = head.iter().sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
            assert!((d.stop[0] + d.stop[1] - 1.0).abs() < 1e-5);
            let s: f64 = d.width.as_ref().unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let net = PolicyNet::<f32>::new(PolicyConfig::omniglot(), 11).unwrap();
        let obs = tiny_obs(32, 2).mapv(|v| v as f32);
        let a = net.forward_eval(&obs).unwrap();
        let b = net.forward_eval(&obs).unwrap();
        assert_eq!(a.coord, b.coord);
        assert_eq!(a.stop, b.stop);
        assert!(a.width.is_none());
    }

    #[test]
    fn param_count_is_config_deterministic() {
        let mut a = PolicyNet::<f32>::new(PolicyConfig::mnist(), 1).unwrap();
        let mut b = PolicyNet::<f32>::new(PolicyConfig::mnist(), 999).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        // coordinate head must reshape to exactly 6 x G logits
        assert_eq!(a.coord_head.dim_out, 6 * 32);
    }

    #[test]
    fn widthless_config_has_no_width_params() {
        let mut with = PolicyNet::<f32>::new(PolicyConfig::mnist(), 5).unwrap();
        let mut without = PolicyNet::<f32>::new(PolicyConfig::omniglot(), 5).unwrap();
        assert!(with.param_count() > without.param_count());
        let dists = without.forward_eval(&tiny_obs(32, 1).mapv(|v| v as f32)).unwrap();
        assert!(dists.width.is_none());
        let _ = with.param_count();
    }

    /// Analytic gradient of log_prob_of on the reduced policy matches
    /// central finite differences on every weight.
    #[test]
    fn reduced_policy_log_prob_gradient_check() {
        let config = PolicyConfig::reduced(8);
        let mut net = PolicyNet::<f64>::new(config, 2).unwrap();
        // randomize all weights (zero-init otherwise)
        let mut state = 0x12345u64;
        let mut params = net.params_to_vec();
        for v in params.iter_mut() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((state >> 33) as f64 / 2f64.powi(31) - 1.0) * 0.3;
        }
        net.set_params_from_vec(&params);

        let obs = tiny_obs(8, 1);
        let action = StrokeAction::new([3, 1, 7, 0, 5, 2], 1);

        // analytic: d log p / d logit = onehot - p for each sampled head
        let (dists, cache) = net.forward_train(&obs).unwrap();
        let d = dists.row(0);
        let mut grads = HeadGrads::zeros(1, &config);
        for (head, &bin) in action.coord_bins().iter().enumerate() {
            for k in 0..8 {
                let onehot = if k == bin { 1.0 } else { 0.0 };
                grads.coord[(0, head, k)] = onehot - d.coord[head][k];
            }
        }
        for k in 0..2 {
            let onehot = if k == 0 { 1.0 } else { 0.0 }; // continue
            grads.stop[(0, k)] = onehot - d.stop[k];
        }
        let w = grads.width.as_mut().unwrap();
        for k in 0..2 {
            let onehot = if k == action.width_bin { 1.0 } else { 0.0 };
            w[(0, k)] = onehot - d.width.as_ref().unwrap()[k];
        }
        net.zero_grads();
        net.backward(&cache, &grads);
        let analytic = net.grads_to_vec();

        let mut f = |pv: &[f64]| {
            let mut n2 = PolicyNet::<f64>::new(config, 2).unwrap();
            n2.set_params_from_vec(pv);
            let dists = n2.forward_eval(&obs).unwrap();
            log_prob_of(&dists.row(0), Decision::Continue, Some(&action)).unwrap()
        };
        let h = 1e-5;
        let mut checked = 0;
        for i in (0..params.len()).step_by(5) {
            let fd = crate::nn::testutil::central_diff(&mut f, &params, i, h);
            let re = crate::nn::testutil::rel_err(fd, analytic[i]);
            assert!(re < 1e-4, "param {i}: fd {fd} vs analytic {}", analytic[i]);
            checked += 1;
        }
        assert!(checked >= 200, "only {checked} weights checked");
    }

    #[test]
    fn resnet_shapes_work_on_small_grid() {
        // grid 16 keeps the full-architecture test fast
        let config = PolicyConfig {
            grid: 16,
            width_mode: WidthMode::Learned(2),
            arch: PolicyArch::ResNet,
        };
        let mut net = PolicyNet::<f32>::new(config, 4).unwrap();
        let obs = tiny_obs(16, 3).mapv(|v| v as f32);
        let (dists, cache) = net.forward_train(&obs).unwrap();
        assert_eq!(dists.coord.dim(), (3, 6, 16));
        let grads = HeadGrads::zeros(3, &config);
        net.backward(&cache, &grads); // zero grads flow cleanly
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let s = sample_action(&dists.row(0), &mut rng);
        assert!(s.log_prob <= 0.0);
    }

    #[test]
    fn rejects_bad_grid_and_bad_obs() {
        assert!(PolicyNet::<f32>::new(
            PolicyConfig { grid: 30, width_mode: WidthMode::Fixed(0), arch: PolicyArch::ResNet },
            0
        )
        .is_err());
        let net = PolicyNet::<f32>::new(PolicyConfig::mnist(), 0).unwrap();
        let obs = Array4::<f32>::zeros((1, 1, 16, 16));
        assert!(net.forward_eval(&obs).is_err());
    }
}
