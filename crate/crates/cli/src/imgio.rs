//! Canvas image I/O: grayscale PNG round trips, grid sheets with 2-pixel
//! separators, color stroke-order overlays, and minimal line plots.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use scrawl_core::raster::{render_stroke, Canvas, StrokeAction};
use scrawl_core::tasks::StrokeProgram;
use scrawl_core::Real;

const SEPARATOR: u8 = 96;

pub fn canvas_to_gray<S: Real>(canvas: &Canvas<S>) -> GrayImage {
    let side = canvas.side() as u32;
    let mut img = GrayImage::new(side, side);
    for (y, x, p) in img.enumerate_pixels_mut().map(|(x, y, p)| (y, x, p)) {
        let v = canvas.get(y as usize, x as usize).as_f64().clamp(0.0, 1.0);
        *p = Luma([(v * 255.0).round() as u8]);
    }
    img
}

pub fn save_canvas<S: Real>(canvas: &Canvas<S>, path: &Path) -> Result<(), String> {
    canvas_to_gray(canvas)
        .save(path)
        .map_err(|e| format!("cannot save {}: {e}", path.display()))
}

pub fn load_canvas<S: Real>(path: &Path, side: usize, invert: bool) -> Result<Canvas<S>, String> {
    let img = image::open(path)
        .map_err(|e| format!("cannot open {}: {e}", path.display()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    let gray: Vec<f64> = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    Ok(scrawl_core::dataops::canvas_from_gray(
        &gray, h as usize, w as usize, side, invert,
    ))
}

/// Assembles canvases into a grid sheet with 2-pixel separators.
pub fn grid_sheet<S: Real>(canvases: &[Canvas<S>], columns: usize) -> GrayImage {
    assert!(!canvases.is_empty());
    let side = canvases[0].side() as u32;
    let cols = columns.max(1) as u32;
    let rows = (canvases.len() as u32).div_ceil(cols);
    let width = cols * side + (cols - 1) * 2;
    let height = rows * side + (rows - 1) * 2;
    let mut sheet = GrayImage::from_pixel(width, height, Luma([SEPARATOR]));
    for (i, canvas) in canvases.iter().enumerate() {
        let gx = (i as u32 % cols) * (side + 2);
        let gy = (i as u32 / cols) * (side + 2);
        let tile = canvas_to_gray(canvas);
        for (x, y, p) in tile.enumerate_pixels() {
            sheet.put_pixel(gx + x, gy + y, *p);
        }
    }
    sheet
}

/// Grid sheet with the first tile (the conditioning input) framed in red.
pub fn grid_sheet_highlight_first<S: Real>(canvases: &[Canvas<S>], columns: usize) -> RgbImage {
    let gray = grid_sheet(canvases, columns);
    let mut rgb = RgbImage::new(gray.width(), gray.height());
    for (x, y, p) in gray.enumerate_pixels() {
        let v = p.0[0];
        rgb.put_pixel(x, y, Rgb([v, v, v]));
    }
    if let Some(first) = canvases.first() {
        let side = first.side() as u32;
        for x in 0..side {
            rgb.put_pixel(x, 0, Rgb([220, 40, 40]));
            rgb.put_pixel(x, side - 1, Rgb([220, 40, 40]));
        }
        for y in 0..side {
            rgb.put_pixel(0, y, Rgb([220, 40, 40]));
            rgb.put_pixel(side - 1, y, Rgb([220, 40, 40]));
        }
    }
    rgb
}

/// Stroke-order palette: first stroke pink, second green, third blue, then
/// further hues.
pub const STROKE_ORDER_COLORS: [[u8; 3]; 6] = [
    [255, 105, 180], // pink
    [60, 179, 75],   // green
    [65, 105, 225],  // blue
    [255, 165, 0],   // orange
    [148, 0, 211],   // violet
    [0, 206, 209],   // teal
];

/// Color-coded stroke-order overlay: each stroke of the program rendered in
/// its order color over a white background.
pub fn stroke_order_overlay<S: Real>(
    program: &StrokeProgram,
    side: usize,
) -> Result<RgbImage, String> {
    let mut img = RgbImage::from_pixel(side as u32, side as u32, Rgb([255, 255, 255]));
    for (i, action) in program.strokes.iter().enumerate() {
        let color = STROKE_ORDER_COLORS[i % STROKE_ORDER_COLORS.len()];
        let mask: Canvas<S> = render_stroke(action, side).map_err(|e| e.to_string())?;
        for row in 0..side {
            for col in 0..side {
                if mask.get(row, col).as_f64() >= 0.5 {
                    img.put_pixel(col as u32, row as u32, Rgb(color));
                }
            }
        }
    }
    Ok(img)
}

/// One stroke as a standalone overlay-friendly canvas color test helper.
pub fn single_stroke_canvas<S: Real>(action: &StrokeAction, side: usize) -> Canvas<S> {
    render_stroke(action, side).expect("valid action")
}

/// Minimal metric-vs-iteration line plot: axes plus one polyline.
pub fn line_plot(points: &[(f64, f64)], path: &Path) -> Result<(), String> {
    let (w, h) = (640u32, 400u32);
    let margin = 40f64;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let (x0, x1) = points.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &(x, _)| {
        (lo.min(x), hi.max(x))
    });
    let (y0, y1) = points.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &(_, y)| {
        (lo.min(y), hi.max(y))
    });
    let xr = (x1 - x0).max(1e-12);
    let yr = (y1 - y0).max(1e-12);
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = margin + (x - x0) / xr * (w as f64 - 2.0 * margin);
        let py = (h as f64 - margin) - (y - y0) / yr * (h as f64 - 2.0 * margin);
        (px.round() as i64, py.round() as i64)
    };
    // axes
    for x in (margin as u32)..(w - margin as u32) {
        img.put_pixel(x, h - margin as u32, Rgb([0, 0, 0]));
    }
    for y in (margin as u32)..(h - margin as u32) {
        img.put_pixel(margin as u32, y, Rgb([0, 0, 0]));
    }
    // polyline
    let mut prev: Option<(i64, i64)> = None;
    for &(x, y) in points {
        let (px, py) = to_px(x, y);
        if let Some((qx, qy)) = prev {
            let steps = (px - qx).abs().max((py - qy).abs()).max(1);
            for s in 0..=steps {
                let ix = qx + (px - qx) * s / steps;
                let iy = qy + (py - qy) * s / steps;
                if ix >= 0 && iy >= 0 && (ix as u32) < w && (iy as u32) < h {
                    img.put_pixel(ix as u32, iy as u32, Rgb([40, 80, 200]));
                }
            }
        }
        prev = Some((px, py));
    }
    img.save(path)
        .map_err(|e| format!("cannot save {}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canvas_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let canvas: Canvas<f32> =
            single_stroke_canvas(&StrokeAction::new([2, 3, 16, 20, 29, 27], 1), 32);
        save_canvas(&canvas, &path).unwrap();
        // ink-is-one glyphs round trip without inversion
        let loaded: Canvas<f32> = load_canvas(&path, 32, false).unwrap();
        assert_eq!(loaded, canvas);
    }

    #[test]
    fn grid_dimensions_include_separators() {
        let canvases: Vec<Canvas<f32>> = (0..5)
            .map(|i| single_stroke_canvas(&StrokeAction::new([i, 2, 6, 20, 29, 27], 0), 32))
            .collect();
        let sheet = grid_sheet(&canvases, 3);
        assert_eq!(sheet.width(), 3 * 32 + 2 * 2);
        assert_eq!(sheet.height(), 2 * 32 + 2);
        let rgb = grid_sheet_highlight_first(&canvases, 3);
        assert_eq!(rgb.get_pixel(0, 0).0, [220, 40, 40]);
    }

    #[test]
    fn overlay_uses_order_palette() {
        let program = StrokeProgram {
            strokes: vec![
                StrokeAction::new([2, 2, 8, 8, 14, 2], 0),
                StrokeAction::new([2, 20, 8, 26, 14, 20], 0),
            ],
            log_likelihood: -1.0,
            stopped: true,
        };
        let img = stroke_order_overlay::<f32>(&program, 32).unwrap();
        let has = |c: [u8; 3]| img.pixels().any(|p| p.0 == c);
        assert!(has(STROKE_ORDER_COLORS[0]));
        assert!(has(STROKE_ORDER_COLORS[1]));
    }

    #[test]
    fn plot_writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.png");
        let points: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, (i as f64 * 0.3).sin())).collect();
        line_plot(&points, &path).unwrap();
        assert!(path.exists());
    }
}
