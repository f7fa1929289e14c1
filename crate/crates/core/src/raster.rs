//! Quadratic-Bezier stroke rasterization and canvas algebra.
//!
//! The renderer is deliberately non-differentiable and bit-deterministic:
//! the same [`StrokeAction`] always produces the identical binary mask.
//! Generation composes strokes onto the canvas (pixelwise max); parsing
//! removes them (mask-out). Both share the same pixel-set semantics, so all
//! reward arithmetic stays exact on {0, 1} grids.

use ndarray::Array2;
use thiserror::Error;

use crate::num::Real;

/// Side length of the square drawing grid.
pub const GRID: usize = 32;
/// Number of brush-width options.
pub const WIDTH_BINS: usize = 2;
/// Threshold above which a cell counts as an on-pixel.
pub const THETA_ON: f64 = 0.5;

/// Brush radius in pixels for a width bin.
pub fn brush_radius(width_bin: usize) -> f64 {
    match width_bin {
        0 => 0.7,
        _ => 1.4,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("canvas dimension mismatch: {0}x{0} vs {1}x{1}")]
    DimensionMismatch(usize, usize),
    #[error("curve parameter t={0} outside [0, 1]")]
    ParamOutOfRange(f64),
    #[error("coordinate bin {bin} outside grid [0, {grid})")]
    BinOutOfRange { bin: usize, grid: usize },
    #[error("width bin {bin} outside [0, {bins})")]
    WidthOutOfRange { bin: usize, bins: usize },
}

// ============================================================================
// Stroke action
// ============================================================================

/// The 7-parameter stroke program element: quadratic Bezier control bins
/// plus a brush width bin. Coordinate bin `b` maps to the pixel center
/// `b + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StrokeAction {
    pub x0: usize,
    pub y0: usize,
    pub cx: usize,
    pub cy: usize,
    pub x1: usize,
    pub y1: usize,
    pub width_bin: usize,
}

impl StrokeAction {
    pub fn new(bins: [usize; 6], width_bin: usize) -> Self {
        Self {
            x0: bins[0],
            y0: bins[1],
            cx: bins[2],
            cy: bins[3],
            x1: bins[4],
            y1: bins[5],
            width_bin,
        }
    }

    pub fn coord_bins(&self) -> [usize; 6] {
        [self.x0, self.y0, self.cx, self.cy, self.x1, self.y1]
    }

    pub fn validate(&self, grid: usize, width_bins: usize) -> Result<(), RasterError> {
        for bin in self.coord_bins() {
            if bin >= grid {
                return Err(RasterError::BinOutOfRange { bin, grid });
            }
        }
        if self.width_bin >= width_bins {
            return Err(RasterError::WidthOutOfRange {
                bin: self.width_bin,
                bins: width_bins,
            });
        }
        Ok(())
    }

    /// Mirror image across the vertical grid axis.
    pub fn mirror_horizontal(&self, grid: usize) -> Self {
        Self {
            x0: grid - 1 - self.x0,
            y0: self.y0,
            cx: grid - 1 - self.cx,
            cy: self.cy,
            x1: grid - 1 - self.x1,
            y1: self.y1,
            width_bin: self.width_bin,
        }
    }

    /// Continuous control points at pixel centers.
    pub fn control_points(&self) -> [[f64; 2]; 3] {
        let c = |b: usize| b as f64 + 0.5;
        [
            [c(self.x0), c(self.y0)],
            [c(self.cx), c(self.cy)],
            [c(self.x1), c(self.y1)],
        ]
    }
}

// ============================================================================
// Canvas
// ============================================================================

/// A square intensity grid with values in [0, 1]. The sole observation and
/// output medium of the drawing agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas<S: Real> {
    grid: Array2<S>,
}

impl<S: Real> Canvas<S> {
    pub fn zeros(side: usize) -> Self {
        Self {
            grid: Array2::zeros((side, side)),
        }
    }

    /// Wraps an existing grid; the array must be square.
    pub fn from_grid(grid: Array2<S>) -> Result<Self, RasterError> {
        let (h, w) = grid.dim();
        if h != w {
            return Err(RasterError::DimensionMismatch(h, w));
        }
        Ok(Self { grid })
    }

    pub fn side(&self) -> usize {
        self.grid.nrows()
    }

    pub fn grid(&self) -> &Array2<S> {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut Array2<S> {
        &mut self.grid
    }

    pub fn into_grid(self) -> Array2<S> {
        self.grid
    }

    /// Intensity at (row, col).
    pub fn get(&self, row: usize, col: usize) -> S {
        self.grid[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: S) {
        self.grid[(row, col)] = value;
    }

    fn check_same_side(&self, other: &Self) -> Result<(), RasterError> {
        if self.side() != other.side() {
            return Err(RasterError::DimensionMismatch(self.side(), other.side()));
        }
        Ok(())
    }

    /// Pixelwise maximum: adds a stroke to the canvas.
    pub fn compose(&self, stroke: &Self) -> Result<Self, RasterError> {
        self.check_same_side(stroke)?;
        let mut grid = self.grid.clone();
        grid.zip_mut_with(&stroke.grid, |c, &s| {
            if s > *c {
                *c = s;
            }
        });
        Ok(Self { grid })
    }

    /// Removes a stroke: cells covered by the stroke (at `theta_on`) drop
    /// to zero, everything else keeps its value.
    pub fn mask_out(&self, stroke: &Self, theta_on: S) -> Result<Self, RasterError> {
        self.check_same_side(stroke)?;
        let mut grid = self.grid.clone();
        grid.zip_mut_with(&stroke.grid, |c, &s| {
            if s >= theta_on {
                *c = S::zero();
            }
        });
        Ok(Self { grid })
    }

    /// Number of cells with intensity >= `theta_on`.
    pub fn on_pixel_count(&self, theta_on: S) -> usize {
        self.grid.iter().filter(|&&v| v >= theta_on).count()
    }

    /// Set of on-pixel indices in row-major order.
    pub fn on_pixels(&self, theta_on: S) -> Vec<(usize, usize)> {
        let side = self.side();
        let mut out = Vec::new();
        for r in 0..side {
            for c in 0..side {
                if self.grid[(r, c)] >= theta_on {
                    out.push((r, c));
                }
            }
        }
        out
    }

    pub fn is_empty(&self, theta_on: S) -> bool {
        self.grid.iter().all(|&v| v < theta_on)
    }
}

// ============================================================================
// Bezier evaluation and rendering
// ============================================================================

/// Quadratic Bezier point: B(t) = (1-t)^2 p0 + 2(1-t)t p1 + t^2 p2.
pub fn bezier_point(
    p0: [f64; 2],
    p1: [f64; 2],
    p2: [f64; 2],
    t: f64,
) -> Result<[f64; 2], RasterError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(RasterError::ParamOutOfRange(t));
    }
    Ok(bezier_point_unchecked(p0, p1, p2, t))
}

#[inline]
fn bezier_point_unchecked(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], t: f64) -> [f64; 2] {
    let u = 1.0 - t;
    let w0 = u * u;
    let w1 = 2.0 * u * t;
    let w2 = t * t;
    [
        w0 * p0[0] + w1 * p1[0] + w2 * p2[0],
        w0 * p0[1] + w1 * p1[1] + w2 * p2[1],
    ]
}

/// Stamps a filled disk of radius `r` centered at `(x, y)` into the mask.
fn stamp_disk<S: Real>(grid: &mut Array2<S>, side: usize, x: f64, y: f64, r: f64) {
    let r2 = r * r;
    let col_lo = ((x - r).floor().max(0.0)) as usize;
    let col_hi = ((x + r).ceil() as isize).min(side as isize - 1).max(0) as usize;
    let row_lo = ((y - r).floor().max(0.0)) as usize;
    let row_hi = ((y + r).ceil() as isize).min(side as isize - 1).max(0) as usize;
    for row in row_lo..=row_hi {
        let dy = (row as f64 + 0.5) - y;
        for col in col_lo..=col_hi {
            let dx = (col as f64 + 0.5) - x;
            if dx * dx + dy * dy <= r2 {
                grid[(row, col)] = S::one();
            }
        }
    }
}

/// Renders a stroke as a binary mask on a `side`-pixel grid.
///
/// The curve is sampled at `4 * side` evenly spaced parameter values and a
/// filled disk of the brush radius is stamped at each sample, dense enough
/// that consecutive stamps overlap at any grid size.
pub fn render_stroke<S: Real>(action: &StrokeAction, side: usize) -> Result<Canvas<S>, RasterError> {
    action.validate(side, WIDTH_BINS)?;
    let [p0, p1, p2] = action.control_points();
    let r = brush_radius(action.width_bin);
    let samples = 4 * side;
    let mut grid = Array2::zeros((side, side));
    for i in 0..samples {
        let t = i as f64 / (samples - 1) as f64;
        let [x, y] = bezier_point_unchecked(p0, p1, p2, t);
        stamp_disk(&mut grid, side, x, y, r);
    }
    Ok(Canvas { grid })
}
