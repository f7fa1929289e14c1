//! Quantitative evaluation: per-pair L2 and SSIM, Fréchet feature distance
//! on a pluggable extractor, a perceptual-distance proxy, the per-alphabet
//! stroke-count report, and most-similar-pair aggregation for the
//! type-conditioned task.

mod features;
mod frechet;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::num::Real;
use crate::policy::PolicyNet;
use crate::raster::{Canvas, RasterError, THETA_ON};
use crate::tasks::{parse_batch, ParseMode, TaskError};

pub use features::{
    train_feature_classifier, ClassifierConfig, FeatureExtractor, LocalClassifier,
};
pub use frechet::{frechet_distance, frechet_distance_with, gaussian_fit};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("feature lists are too small ({n} samples, dim {d}) without regularization")]
    TooFewSamples { n: usize, d: usize },
    #[error("empty input list")]
    EmptyInput,
    #[error("feature extractor not available: {0}")]
    ExtractorUnavailable(String),
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
}

// ============================================================================
// Pixel metrics
// ============================================================================

/// Mean squared intensity difference over pixels.
pub fn l2_distance<S: Real>(a: &Canvas<S>, b: &Canvas<S>) -> Result<f64, EvalError> {
    if a.side() != b.side() {
        return Err(RasterError::DimensionMismatch(a.side(), b.side()).into());
    }
    let n = (a.side() * a.side()) as f64;
    Ok(a.grid()
        .iter()
        .zip(b.grid().iter())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / n)
}

const SSIM_WINDOW: usize = 7;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 1.0;

/// Structural similarity with a 7x7 uniform window over valid positions,
/// population moments, dynamic range 1. Symmetric, in [-1, 1].
pub fn ssim<S: Real>(a: &Canvas<S>, b: &Canvas<S>) -> Result<f64, EvalError> {
    if a.side() != b.side() {
        return Err(RasterError::DimensionMismatch(a.side(), b.side()).into());
    }
    let side = a.side();
    let w = SSIM_WINDOW.min(side);
    let c1 = (SSIM_K1 * SSIM_L).powi(2);
    let c2 = (SSIM_K2 * SSIM_L).powi(2);

    // running box sums per window via separable accумulation
    let to_f = |c: &Canvas<S>| -> Vec<f64> { c.grid().iter().map(|v| v.as_f64()).collect() };
    let xa = to_f(a);
    let xb = to_f(b);

    // integral images for x, y, x^2, y^2, xy
    let ii = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut out = vec![0.0; (side + 1) * (side + 1)];
        for r in 0..side {
            let mut row_acc = 0.0;
            for c in 0..side {
                row_acc += f(r * side + c);
                out[(r + 1) * (side + 1) + (c + 1)] = out[r * (side + 1) + (c + 1)] + row_acc;
            }
        }
        out
    };
    let sx = ii(&|i| xa[i]);
    let sy = ii(&|i| xb[i]);
    let sxx = ii(&|i| xa[i] * xa[i]);
    let syy = ii(&|i| xb[i] * xb[i]);
    let sxy = ii(&|i| xa[i] * xb[i]);
    let window_sum = |s: &[f64], r: usize, c: usize| -> f64 {
        let stride = side + 1;
        s[(r + w) * stride + (c + w)] - s[r * stride + (c + w)] - s[(r + w) * stride + c]
            + s[r * stride + c]
    };

    let n = (w * w) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=(side - w) {
        for c in 0..=(side - w) {
            let mx = window_sum(&sx, r, c) / n;
            let my = window_sum(&sy, r, c) / n;
            let vx = window_sum(&sxx, r, c) / n - mx * mx;
            let vy = window_sum(&syy, r, c) / n - my * my;
            let cov = window_sum(&sxy, r, c) / n - mx * my;
            let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

// ============================================================================
// Perceptual distance (proxy or plugged-in extractor)
// ============================================================================

/// Normalized squared distance between extractor features, averaged over
/// the extractor's layers.
pub fn perceptual_distance<S: Real>(
    extractor: &dyn FeatureExtractor<S>,
    a: &Canvas<S>,
    b: &Canvas<S>,
) -> Result<f64, EvalError> {
    let la = extractor.extract_layers(a);
    let lb = extractor.extract_layers(b);
    if la.len() != lb.len() {
        return Err(EvalError::DimMismatch(la.len(), lb.len()));
    }
    let mut total = 0.0;
    for (fa, fb) in la.iter().zip(lb.iter()) {
        if fa.len() != fb.len() {
            return Err(EvalError::DimMismatch(fa.len(), fb.len()));
        }
        let norm = |f: &[S]| -> Vec<f64> {
            let n: f64 = f.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
            f.iter().map(|v| v.as_f64() * inv).collect()
        };
        let na = norm(fa);
        let nb = norm(fb);
        total += na
            .iter()
            .zip(nb.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / na.len() as f64;
    }
    Ok(total / la.len() as f64)
}

// ============================================================================
// Most-similar-pair aggregation for the type task
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    L2,
    Ssim,
    Perceptual,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::L2 => "l2",
            MetricKind::Ssim => "ssim",
            MetricKind::Perceptual => "perceptual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Aggregate { mean, std: var.sqrt() }
}

#[derive(Debug, Clone)]
pub struct TypeTaskReport {
    /// Per generated sample, per metric: the best score over the inputs
    /// (min for distances, max for SSIM).
    pub per_sample: Vec<BTreeMap<MetricKind, f64>>,
    pub aggregates: BTreeMap<MetricKind, Aggregate>,
}

/// For each generated canvas, evaluates each requested metric against all
/// inputs and keeps the most similar pairing; aggregates are mean and
/// standard deviation over the generated samples.
pub fn type_task_metrics<S: Real>(
    generated: &[Canvas<S>],
    inputs: &[Canvas<S>],
    metrics: &[MetricKind],
    extractor: Option<&dyn FeatureExtractor<S>>,
) -> Result<TypeTaskReport, EvalError> {
    if generated.is_empty() || inputs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut per_sample = Vec::with_capacity(generated.len());
    for g in generated {
        let mut best: BTreeMap<MetricKind, f64> = BTreeMap::new();
        for metric in metrics {
            let mut scores = Vec::with_capacity(inputs.len());
            for input in inputs {
                let v = match metric {
                    MetricKind::L2 => l2_distance(g, input)?,
                    MetricKind::Ssim => ssim(g, input)?,
                    MetricKind::Perceptual => {
                        let ex = extractor.ok_or_else(|| {
                            EvalError::ExtractorUnavailable("perceptual metric".into())
                        })?;
                        perceptual_distance(ex, g, input)?
                    }
                };
                scores.push(v);
            }
            let best_v = match metric {
                MetricKind::Ssim => scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                _ => scores.iter().cloned().fold(f64::INFINITY, f64::min),
            };
            best.insert(*metric, best_v);
        }
        per_sample.push(best);
    }
    let mut aggregates = BTreeMap::new();
    for metric in metrics {
        let values: Vec<f64> = per_sample.iter().map(|m| m[metric]).collect();
        aggregates.insert(*metric, aggregate(&values));
    }
    Ok(TypeTaskReport { per_sample, aggregates })
}

// ============================================================================
// Stroke-count report
// ============================================================================

/// Human-labeled mean stroke counts for the 20 evaluation alphabets,
/// reproduced verbatim as a static reference column (never computed).
pub const HUMAN_STROKE_COUNTS: [(&str, &str); 20] = [
    ("Angelic", "4.49"),
    ("Atemayar_Qelisayer", "3.571"),
    ("Atlantean", "2.078"),
    ("Aurek-Besh", "2.565"),
    ("Avesta", "1.52"),
    ("Ge_ez", "1.984"),
    ("Glagolitic", "2.88"),
    ("Gurmukhi", "3.09"),
    ("Kannada", "2.33"),
    ("Keble", "4.140"),
    ("Malayalam", "1.453"),
    ("Manipuri", "2.82"),
    ("Mongolian", "2.405"),
    ("Old_Church_Slavonic_(Cyrillic)", "2.954"),
    ("Oriya", "2.82"),
    ("Sylheti", "2.84"),
    ("Syriac_(Serto)", "2.206"),
    ("Tengwar", "2.492"),
    ("Tibetan", "3.62"),
    ("ULOG", "3.253"),
];

fn human_count_for(alphabet: &str) -> &'static str {
    HUMAN_STROKE_COUNTS
        .iter()
        .find(|(name, _)| *name == alphabet)
        .map(|(_, v)| *v)
        .unwrap_or("-")
}

#[derive(Debug, Clone)]
pub struct StrokeCountRow {
    pub alphabet: String,
    pub model_mean: f64,
    pub human_reference: &'static str,
    pub characters: usize,
}

/// Greedy-parses every character of each alphabet group and reports the
/// mean program length next to the human-labeled reference column.
pub fn stroke_count_report<S: Real>(
    policy: &PolicyNet<S>,
    groups: &[(String, Vec<&Canvas<S>>)],
    max_steps: usize,
) -> Result<Vec<StrokeCountRow>, EvalError> {
    use rand::SeedableRng;
    let theta = S::of_f64(THETA_ON);
    let mut rows = Vec::with_capacity(groups.len());
    for (alphabet, canvases) in groups {
        if canvases.is_empty() {
            return Err(EvalError::EmptyInput);
        }
        let mut total = 0usize;
        for chunk in canvases.chunks(256) {
            let rngs = (0..chunk.len())
                .map(|i| rand_chacha::ChaCha8Rng::seed_from_u64(i as u64))
                .collect();
            let parses = parse_batch(policy, chunk, ParseMode::Greedy, max_steps, theta, rngs)?;
            total += parses.iter().map(|(p, _)| p.strokes.len()).sum::<usize>();
        }
        rows.push(StrokeCountRow {
            alphabet: alphabet.clone(),
            model_mean: total as f64 / canvases.len() as f64,
            human_reference: human_count_for(alphabet),
            characters: canvases.len(),
        });
    }
    Ok(rows)
}

/// CSV rendering of the stroke-count report.
pub fn stroke_count_csv(rows: &[StrokeCountRow]) -> String {
    let mut out = String::from("alphabet,model_mean_strokes,human_mean_strokes,characters\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.3},{},{}\n",
            row.alphabet, row.model_mean, row.human_reference, row.characters
        ));
    }
    out
}

/// Summary JSON of metric aggregates: {"metric": {"mean": .., "std": ..}}.
pub fn summary_json(aggregates: &BTreeMap<MetricKind, Aggregate>) -> String {
    let mut map = serde_json::Map::new();
    for (metric, agg) in aggregates {
        let mut inner = serde_json::Map::new();
        inner.insert("mean".into(), serde_json::json!(agg.mean));
        inner.insert("std".into(), serde_json::json!(agg.std));
        map.insert(metric.as_str().into(), serde_json::Value::Object(inner));
    }
    serde_json::Value::Object(map).to_string()
}
