//! Minimal deterministic neural-network stack: im2col convolutions backed
//! by BLAS GEMM, batch normalization, linear layers, and decoupled-decay
//! Adam. Forward passes cache exactly what their backward passes need;
//! gradients accumulate into [`Param::g`] so a whole update batch can be
//! processed in micro-batches with a fixed reduction order.

pub mod batchnorm;
pub mod conv;
pub mod linear;
pub mod optim;

use ndarray::{Array2, ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

use crate::num::Real;

pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use linear::Linear;
pub use optim::AdamW;

// ============================================================================
// Parameters
// ============================================================================

/// One learnable tensor with its gradient and Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Param<S: Real> {
    pub v: ArrayD<S>,
    pub g: ArrayD<S>,
    pub m1: ArrayD<S>,
    pub m2: ArrayD<S>,
}

impl<S: Real> Param<S> {
    pub fn new(v: ArrayD<S>) -> Self {
        let zeros = ArrayD::zeros(v.raw_dim());
        Self {
            v,
            g: zeros.clone(),
            m1: zeros.clone(),
            m2: zeros,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(S::zero());
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

// ============================================================================
// Initialization
// ============================================================================

/// Standard normal draw via Box-Muller; identical sequence for any scalar
/// type because the stream is computed in f64.
pub fn randn(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// He fan-in initialization: N(0, sqrt(2 / fan_in)).
pub fn he_init<S: Real>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Param<S> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n).map(|_| S::of_f64(randn(rng) * std)).collect();
    Param::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape"))
}

// ============================================================================
// Activations
// ============================================================================

/// In-place leaky ReLU; `slope = 0` is plain ReLU.
pub fn leaky_relu_forward<S: Real, D: ndarray::Dimension>(
    x: &mut ndarray::Array<S, D>,
    slope: f64,
) {
    let a = S::of_f64(slope);
    x.mapv_inplace(|v| if v > S::zero() { v } else { v * a });
}

/// Backward through leaky ReLU using the forward *output* as the mask
/// (valid for slope >= 0: output sign matches input sign).
pub fn leaky_relu_backward<S: Real, D: ndarray::Dimension>(
    dout: &mut ndarray::Array<S, D>,
    out: &ndarray::Array<S, D>,
    slope: f64,
) {
    let a = S::of_f64(slope);
    dout.zip_mut_with(out, |d, &o| {
        if o <= S::zero() {
            *d *= a;
        }
    });
}

// ============================================================================
// Softmax over the last axis of a (batch, n) matrix
// ============================================================================

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<S: Real>(logits: &Array2<S>) -> Array2<S> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.iter().cloned().sum::<S>();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// KL(p || U_n) = sum_i p_i ln(n p_i) for one probability vector.
/// Zero-probability entries contribute zero.
pub fn kl_to_uniform_vec<S: Real>(p: &[S]) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .map(|&pi| {
            let pi = pi.as_f64();
            if pi > 0.0 {
                pi * (n * pi).ln()
            } else {
                0.0
            }
        })
        .sum()
}
