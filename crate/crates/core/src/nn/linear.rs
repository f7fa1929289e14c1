//! Fully connected layer over (batch, features) matrices.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::{he_init, Param};
use crate::num::Real;

#[derive(Debug, Clone)]
pub struct Linear<S: Real> {
    /// (out, in)
    pub weight: Param<S>,
    /// (out)
    pub bias: Param<S>,
    pub dim_in: usize,
    pub dim_out: usize,
}

pub struct LinearCache<S: Real> {
    pub input: Array2<S>,
}

impl<S: Real> Linear<S> {
    pub fn new(dim_in: usize, dim_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: he_init(&[dim_out, dim_in], dim_in, rng),
            bias: Param::zeros(&[dim_out]),
            dim_in,
            dim_out,
        }
    }

    /// All-zero weights and bias: logits start exactly uniform.
    pub fn new_zeroed(dim_in: usize, dim_out: usize) -> Self {
        Self {
            weight: Param::zeros(&[dim_out, dim_in]),
            bias: Param::zeros(&[dim_out]),
            dim_in,
            dim_out,
        }
    }

    fn weight2d(&self) -> ndarray::ArrayView2<'_, S> {
        self.weight
            .v
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2d weight")
    }

    pub fn forward(&self, input: &Array2<S>) -> (Array2<S>, LinearCache<S>) {
        (
            self.forward_no_cache(input),
            LinearCache {
                input: input.clone(),
            },
        )
    }

    pub fn forward_no_cache(&self, input: &Array2<S>) -> Array2<S> {
        assert_eq!(input.ncols(), self.dim_in, "linear input width");
        let mut out = input.dot(&self.weight2d().t());
        let bias = self.bias.v.as_slice().expect("bias slice");
        for mut row in out.rows_mut() {
            for (v, &b) in row.iter_mut().zip(bias.iter()) {
                *v += b;
            }
        }
        out
    }

    /// Accumulates dW and db, returns dInput.
    pub fn backward(&mut self, cache: &LinearCache<S>, dout: &Array2<S>) -> Array2<S> {
        let dw = dout.t().dot(&cache.input); // (out, in)
        {
            let mut gw = self
                .weight
                .g
                .view_mut()
                .into_dimensionality::<ndarray::Ix2>()
                .expect("2d grad");
            gw += &dw;
        }
        let gb = self.bias.g.as_slice_mut().expect("bias grad");
        for row in dout.rows() {
            for (g, &d) in gb.iter_mut().zip(row.iter()) {
                *g += d;
            }
        }
        dout.dot(&self.weight2d())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn weight_matrix(&self) -> Array2<S> {
        self.weight2d().to_owned()
    }

    pub fn set_weight_from_matrix(&mut self, m: &Array2<S>) {
        self.weight.v = m.to_owned().into_dyn();
    }
}
