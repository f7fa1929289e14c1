//! Per-channel batch normalization over (B, C, H, W). Training mode uses
//! batch statistics and updates the running averages; evaluation mode uses
//! the stored running statistics, which keeps inference deterministic.
//!
//! Loops run on contiguous per-sample slices, parallel across samples with
//! per-sample partial sums reduced in index order, so results do not depend
//! on the worker count.

use ndarray::Array4;
use rayon::prelude::*;

use super::Param;
use crate::num::Real;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<S: Real> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub channels: usize,
}

pub struct BnCache<S: Real> {
    /// Normalized activations.
    pub xhat: Array4<S>,
    pub inv_std: Vec<S>,
    pub mean: Vec<S>,
}

impl<S: Real> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Param::zeros(&[channels]);
        gamma.v.fill(S::one());
        Self {
            gamma,
            beta: Param::zeros(&[channels]),
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            channels,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<S>) -> (Array4<S>, BnCache<S>) {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.channels);
        let hw = h * w;
        let n = (b * hw) as f64;
        let xs = x.as_slice().expect("contiguous bn input");

        // per-sample per-channel partial sums, reduced in sample order
        let partial_sums: Vec<Vec<f64>> = xs
            .par_chunks(c * hw)
            .map(|sample| {
                (0..c)
                    .map(|ci| sample[ci * hw..(ci + 1) * hw].iter().map(|v| v.as_f64()).sum())
                    .collect()
            })
            .collect();
        let mut mean_f = vec![0.0f64; c];
        for part in &partial_sums {
            for ci in 0..c {
                mean_f[ci] += part[ci];
            }
        }
        for m in mean_f.iter_mut() {
            *m /= n;
        }

        let partial_sq: Vec<Vec<f64>> = xs
            .par_chunks(c * hw)
            .map(|sample| {
                (0..c)
                    .map(|ci| {
                        let mu = mean_f[ci];
                        sample[ci * hw..(ci + 1) * hw]
                            .iter()
                            .map(|v| {
                                let d = v.as_f64() - mu;
                                d * d
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let mut var_f = vec![0.0f64; c];
        for part in &partial_sq {
            for ci in 0..c {
                var_f[ci] += part[ci];
            }
        }
        for v in var_f.iter_mut() {
            *v /= n;
        }

        for ci in 0..c {
            self.running_mean[ci] = S::of_f64(
                (1.0 - MOMENTUM) * self.running_mean[ci].as_f64() + MOMENTUM * mean_f[ci],
            );
            self.running_var[ci] = S::of_f64(
                (1.0 - MOMENTUM) * self.running_var[ci].as_f64() + MOMENTUM * var_f[ci],
            );
        }

        let mean: Vec<S> = mean_f.iter().map(|&m| S::of_f64(m)).collect();
        let inv_std: Vec<S> = var_f
            .iter()
            .map(|&v| S::of_f64(1.0 / (v + EPS).sqrt()))
            .collect();
        let mut xhat = Array4::zeros(x.raw_dim());
        let mut out = Array4::zeros(x.raw_dim());
        {
            let gamma = self.gamma.v.as_slice().expect("gamma");
            let beta = self.beta.v.as_slice().expect("beta");
            let xh_chunks = xhat.as_slice_mut().expect("xhat").par_chunks_mut(c * hw);
            let out_chunks = out.as_slice_mut().expect("out").par_chunks_mut(c * hw);
            xs.par_chunks(c * hw)
                .zip(xh_chunks)
                .zip(out_chunks)
                .for_each(|((sample, xh), os)| {
                    for ci in 0..c {
                        let (mu, inv, g, be) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
                        let src = &sample[ci * hw..(ci + 1) * hw];
                        let xh_row = &mut xh[ci * hw..(ci + 1) * hw];
                        let out_row = &mut os[ci * hw..(ci + 1) * hw];
                        for i in 0..hw {
                            let v = (src[i] - mu) * inv;
                            xh_row[i] = v;
                            out_row[i] = g * v + be;
                        }
                    }
                });
        }
        (out, BnCache { xhat, inv_std, mean })
    }

    pub fn forward_eval(&self, x: &Array4<S>) -> Array4<S> {
        self.forward_eval_act(x, false)
    }

    /// Evaluation-mode forward, optionally fused with ReLU.
    pub fn forward_eval_act(&self, x: &Array4<S>, relu: bool) -> Array4<S> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.channels);
        let hw = h * w;
        let _ = b;
        let xs = x.as_slice().expect("contiguous bn input");
        let gamma = self.gamma.v.as_slice().expect("gamma");
        let beta = self.beta.v.as_slice().expect("beta");
        let scale: Vec<S> = (0..c)
            .map(|ci| {
                gamma[ci] * S::of_f64(1.0 / (self.running_var[ci].as_f64() + EPS).sqrt())
            })
            .collect();
        let shift: Vec<S> = (0..c)
            .map(|ci| beta[ci] - scale[ci] * self.running_mean[ci])
            .collect();

        let mut out = Array4::zeros(x.raw_dim());
        out.as_slice_mut()
            .expect("out")
            .par_chunks_mut(c * hw)
            .zip(xs.par_chunks(c * hw))
            .for_each(|(os, sample)| {
                for ci in 0..c {
                    let (sc, sh) = (scale[ci], shift[ci]);
                    let src = &sample[ci * hw..(ci + 1) * hw];
                    let dst = &mut os[ci * hw..(ci + 1) * hw];
                    if relu {
                        for i in 0..hw {
                            dst[i] = (sc * src[i] + sh).max(S::zero());
                        }
                    } else {
                        for i in 0..hw {
                            dst[i] = sc * src[i] + sh;
                        }
                    }
                }
            });
        out
    }

    /// Backward through the training-mode forward. Accumulates dGamma and
    /// dBeta; returns dX.
    pub fn backward(&mut self, cache: &BnCache<S>, dout: &Array4<S>) -> Array4<S> {
        let (b, c, h, w) = dout.dim();
        let hw = h * w;
        let n = S::of_usize(b * hw);
        let ds = dout.as_slice().expect("dout");
        let xh = cache.xhat.as_slice().expect("xhat");
        let gamma = self.gamma.v.as_slice().expect("gamma").to_vec();

        // per-sample partials: [dgamma, dbeta, sum_dxhat, sum_dxhat_xhat] per channel
        let partials: Vec<Vec<[f64; 4]>> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let mut acc = vec![[0.0f64; 4]; c];
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    let g = gamma[ci].as_f64();
                    let (mut dg, mut db, mut sd, mut sdx) = (0.0, 0.0, 0.0, 0.0);
                    for i in 0..hw {
                        let du = ds[base + i].as_f64();
                        let x = xh[base + i].as_f64();
                        dg += du * x;
                        db += du;
                        let dxhat = du * g;
                        sd += dxhat;
                        sdx += dxhat * x;
                    }
                    acc[ci] = [dg, db, sd, sdx];
                }
                acc
            })
            .collect();
        let mut totals = vec![[0.0f64; 4]; c];
        for part in &partials {
            for ci in 0..c {
                for j in 0..4 {
                    totals[ci][j] += part[ci][j];
                }
            }
        }
        {
            let ggrad = self.gamma.g.as_slice_mut().expect("gamma grad");
            let bgrad = self.beta.g.as_slice_mut().expect("beta grad");
            for ci in 0..c {
                ggrad[ci] += S::of_f64(totals[ci][0]);
                bgrad[ci] += S::of_f64(totals[ci][1]);
            }
        }

        // dx = inv_std * (dxhat - (sum(dxhat) + xhat*sum(dxhat*xhat)) / n)
        let mean_dxhat: Vec<S> = (0..c).map(|ci| S::of_f64(totals[ci][2]) / n).collect();
        let mean_dxhat_xhat: Vec<S> = (0..c).map(|ci| S::of_f64(totals[ci][3]) / n).collect();
        let mut dx = Array4::zeros(dout.raw_dim());
        dx.as_slice_mut()
            .expect("dx")
            .par_chunks_mut(c * hw)
            .enumerate()
            .for_each(|(bi, dxs)| {
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    let g = gamma[ci];
                    let inv = cache.inv_std[ci];
                    let md = mean_dxhat[ci];
                    let mdx = mean_dxhat_xhat[ci];
                    let dst = &mut dxs[ci * hw..(ci + 1) * hw];
                    for (i, d) in dst.iter_mut().enumerate() {
                        let dxhat = ds[base + i] * g;
                        *d = inv * (dxhat - md - xh[base + i] * mdx);
                    }
                }
            });
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
