//! Stroke-based drawing agent core.
//!
//! A drawing agent that emits quadratic-Bezier stroke programs on a 32x32
//! canvas, trained with REINFORCE for unconditional character generation
//! (adversarial + data-fidelity rewards) and for parsing raster glyphs into
//! ordered stroke sequences. The trained parser is reused, with no further
//! training, for exemplar generation and for type-conditioned concept
//! generation from a stroke library.
//!
//! Everything numeric is generic over [`num::Real`] (`f32` or `f64`);
//! concrete aliases for the common instantiations live at the crate root.

extern crate blas_src;

pub mod dataops;
pub mod discriminator;
pub mod eval;
pub mod linalg;
pub mod checkpoint;
pub mod nn;
pub mod policy;
pub mod num;
pub mod raster;
pub mod rewards;
pub mod tasks;
pub mod threads;
pub mod training;

pub use num::Real;
pub use raster::{Canvas, StrokeAction, GRID, THETA_ON, WIDTH_BINS};

/// Single-precision canvas used by the training loops.
pub type Canvas32 = Canvas<f32>;
/// Double-precision canvas used by oracles and gradient checks.
pub type Canvas64 = Canvas<f64>;
