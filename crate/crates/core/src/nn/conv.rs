//! 2-D convolution as im2col + GEMM. Column construction, packing, and
//! scatter run on contiguous slices (memcpy where stride allows); the
//! column matrix for the backward pass is cached by the forward call.

use ndarray::{Array2, Array4, ArrayD, Ix4};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{he_init, Param};
use crate::num::Real;

#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn k(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<S: Real> {
    pub shape: ConvShape,
    /// (c_out, c_in, k, k)
    pub weight: Param<S>,
    /// (c_out)
    pub bias: Param<S>,
}

/// What the backward pass needs from a forward call.
pub struct ConvCache<S: Real> {
    /// (k, b*oh*ow) column matrix of the input.
    pub cols: Array2<S>,
    pub in_dim: (usize, usize, usize, usize),
    pub out_hw: (usize, usize),
}

impl<S: Real> Conv2d<S> {
    pub fn new(shape: ConvShape, rng: &mut ChaCha8Rng) -> Self {
        let weight = he_init(
            &[shape.c_out, shape.c_in, shape.kernel, shape.kernel],
            shape.k(),
            rng,
        );
        let bias = Param::zeros(&[shape.c_out]);
        Self { shape, weight, bias }
    }

    fn weight2d(&self) -> Array2<S> {
        let s = &self.shape;
        self.weight
            .v
            .view()
            .into_shape_with_order((s.c_out, s.k()))
            .expect("weight reshape")
            .to_owned()
    }

    fn gemm_and_unpack(&self, cols: &Array2<S>, b: usize, oh: usize, ow: usize) -> Array4<S> {
        let s = &self.shape;
        let hw = oh * ow;
        let c_out = s.c_out;
        let out2d = self.weight2d().dot(cols); // (c_out, b*hw)
        let mut out = Array4::<S>::zeros((b, c_out, oh, ow));
        let src = out2d.as_slice().expect("contiguous gemm out");
        let bias = self.bias.v.as_slice().expect("bias");
        out.as_slice_mut()
            .expect("contiguous out")
            .par_chunks_mut(c_out * hw)
            .enumerate()
            .for_each(|(bi, sample)| {
                for c in 0..c_out {
                    let brow = bias[c];
                    let dst = &mut sample[c * hw..(c + 1) * hw];
                    let sarc = &src[c * (b * hw) + bi * hw..c * (b * hw) + bi * hw + hw];
                    for (d, &v) in dst.iter_mut().zip(sarc) {
                        *d = v + brow;
                    }
                }
            });
        out
    }

    /// Forward pass; the cache keeps the column matrix for backward.
    pub fn forward(&self, input: &Array4<S>) -> (Array4<S>, ConvCache<S>) {
        let s = &self.shape;
        let (b, c_in, h, w) = input.dim();
        assert_eq!(c_in, s.c_in, "conv input channels");
        let (oh, ow) = s.out_hw(h, w);
        let cols = im2col(input, s, oh, ow);
        let out = self.gemm_and_unpack(&cols, b, oh, ow);
        (
            out,
            ConvCache { cols, in_dim: (b, c_in, h, w), out_hw: (oh, ow) },
        )
    }

    pub fn forward_no_cache(&self, input: &Array4<S>) -> Array4<S> {
        let s = &self.shape;
        let (b, c_in, h, w) = input.dim();
        assert_eq!(c_in, s.c_in, "conv input channels");
        let (oh, ow) = s.out_hw(h, w);
        let cols = im2col(input, s, oh, ow);
        self.gemm_and_unpack(&cols, b, oh, ow)
    }

    fn backward_weights(&mut self, cache: &ConvCache<S>, dout: &Array4<S>) -> Array2<S> {
        let s = self.shape;
        let (b, _, _, _) = cache.in_dim;
        let (oh, ow) = cache.out_hw;
        let (_, c_out, doh, dow) = dout.dim();
        assert_eq!((c_out, doh, dow), (s.c_out, oh, ow));
        let hw = oh * ow;

        // pack (b, c_out, oh, ow) -> (c_out, b*hw) with row memcpys
        let mut delta = Array2::<S>::zeros((s.c_out, b * hw));
        {
            let dsl = delta.as_slice_mut().expect("delta");
            let src = dout.as_slice().expect("dout");
            for c in 0..s.c_out {
                for bi in 0..b {
                    let dst = &mut dsl[c * (b * hw) + bi * hw..c * (b * hw) + bi * hw + hw];
                    dst.copy_from_slice(&src[(bi * s.c_out + c) * hw..(bi * s.c_out + c) * hw + hw]);
                }
            }
        }

        // bias gradient
        {
            let g = self.bias.g.as_slice_mut().expect("bias grad");
            for c in 0..s.c_out {
                g[c] += delta.row(c).iter().cloned().sum::<S>();
            }
        }

        // weight gradient: delta . cols^T
        let dw2d = delta.dot(&cache.cols.t()); // (c_out, k)
        {
            let mut gw = self
                .weight
                .g
                .view_mut()
                .into_shape_with_order((s.c_out, s.k()))
                .expect("grad reshape");
            gw += &dw2d;
        }
        delta
    }

    /// Accumulates dW and db, returns dInput.
    pub fn backward(&mut self, cache: &ConvCache<S>, dout: &Array4<S>) -> Array4<S> {
        let s = self.shape;
        let (b, _, h, w) = cache.in_dim;
        let (oh, ow) = cache.out_hw;
        let delta = self.backward_weights(cache, dout);
        // input gradient: W^T . delta, then col2im
        let dcols = self.weight2d().t().dot(&delta); // (k, b*hw)
        col2im(&dcols, &s, b, h, w, oh, ow)
    }

    /// Accumulates dW and db only; for the first layer, whose input needs
    /// no gradient.
    pub fn backward_no_dx(&mut self, cache: &ConvCache<S>, dout: &Array4<S>) {
        let _ = self.backward_weights(cache, dout);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }

    /// Flattened 2-D weight view used by spectral normalization.
    pub fn weight_matrix(&self) -> Array2<S> {
        self.weight2d()
    }

    pub fn set_weight_from_matrix(&mut self, m: &Array2<S>) {
        let s = self.shape;
        let w4 = m
            .view()
            .into_shape_with_order((s.c_out, s.c_in, s.kernel, s.kernel))
            .expect("weight reshape")
            .to_owned();
        self.weight.v = w4.into_dyn();
    }
}

/// Builds the (k, b*oh*ow) column matrix, zero padding outside the input.
/// Parallel over kernel rows: each row of the matrix is one contiguous
/// destination written in a single pass.
pub fn im2col<S: Real>(input: &Array4<S>, s: &ConvShape, oh: usize, ow: usize) -> Array2<S> {
    let (b, _, h, w) = input.dim();
    let k = s.k();
    let hw = oh * ow;
    let n = b * hw;
    let xs = input.as_slice().expect("contiguous input");
    let sample_len = s.c_in * h * w;
    let ksq = s.kernel * s.kernel;

    let mut cols = Array2::<S>::zeros((k, n));
    cols.as_slice_mut()
        .expect("cols")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(krow, row)| {
            let ci = krow / ksq;
            let kh = (krow % ksq) / s.kernel;
            let kw = krow % s.kernel;
            for bi in 0..b {
                let chan = &xs[bi * sample_len + ci * h * w..bi * sample_len + (ci + 1) * h * w];
                let out_b = &mut row[bi * hw..(bi + 1) * hw];
                for ohh in 0..oh {
                    let ih = (ohh * s.stride + kh) as isize - s.pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let irow = &chan[ih as usize * w..(ih as usize + 1) * w];
                    let out_row = &mut out_b[ohh * ow..(ohh + 1) * ow];
                    if s.stride == 1 {
                        // contiguous source run clipped to the input width
                        let iw0 = kw as isize - s.pad as isize;
                        let lo = (-iw0).max(0) as usize;
                        let hi = ow.min(((w as isize) - iw0).max(0) as usize);
                        if lo < hi {
                            let src0 = (iw0 + lo as isize) as usize;
                            out_row[lo..hi].copy_from_slice(&irow[src0..src0 + (hi - lo)]);
                        }
                    } else {
                        for (oww, o) in out_row.iter_mut().enumerate() {
                            let iw = (oww * s.stride + kw) as isize - s.pad as isize;
                            if iw >= 0 && iw < w as isize {
                                *o = irow[iw as usize];
                            }
                        }
                    }
                }
            }
        });
    cols
}

/// Scatter-adds column gradients back into input layout.
fn col2im<S: Real>(
    dcols: &Array2<S>,
    s: &ConvShape,
    b: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Array4<S> {
    let hw = oh * ow;
    let dsl = dcols.as_slice().expect("dcols");
    let sample_len = s.c_in * h * w;

    let bands: Vec<Vec<S>> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let mut dx = vec![S::zero(); sample_len];
            for ci in 0..s.c_in {
                let chan = &mut dx[ci * h * w..(ci + 1) * h * w];
                for kh in 0..s.kernel {
                    for kw in 0..s.kernel {
                        let krow = ci * s.kernel * s.kernel + kh * s.kernel + kw;
                        let drow = &dsl[krow * (b * hw) + bi * hw..krow * (b * hw) + bi * hw + hw];
                        for ohh in 0..oh {
                            let ih = (ohh * s.stride + kh) as isize - s.pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let crow = &mut chan[ih as usize * w..(ih as usize + 1) * w];
                            let srow = &drow[ohh * ow..(ohh + 1) * ow];
                            for (oww, &v) in srow.iter().enumerate() {
                                let iw = (oww * s.stride + kw) as isize - s.pad as isize;
                                if iw >= 0 && iw < w as isize {
                                    crow[iw as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
            dx
        })
        .collect();

    let mut out = Array4::<S>::zeros((b, s.c_in, h, w));
    let osl = out.as_slice_mut().expect("out");
    for (bi, band) in bands.into_iter().enumerate() {
        osl[bi * sample_len..(bi + 1) * sample_len].copy_from_slice(&band);
    }
    out
}

/// Reinterprets a dynamic-dim parameter as 4-D.
pub fn as4<S: Real>(a: &ArrayD<S>) -> ndarray::ArrayView4<'_, S> {
    a.view().into_dimensionality::<Ix4>().expect("4d view")
}
