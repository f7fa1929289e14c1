//! Lloyd's k-means over flattened pixel vectors, k-means++ seeding,
//! deterministic for a fixed seed. Cluster centers become the alignment
//! targets of the generation reward.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DataError;
use crate::num::Real;
use crate::raster::Canvas;

const MAX_ITERS: usize = 50;
const REL_TOL: f64 = 1e-4;

/// k canvases, each the mean of one cluster of training characters.
#[derive(Debug, Clone)]
pub struct ClusterCenters<S: Real> {
    pub centers: Vec<Canvas<S>>,
    pub k: usize,
}

/// Runs k-means and returns the centers as canvases (values stay in [0, 1]
/// because the inputs are binary).
pub fn compute_cluster_centers<S: Real>(
    canvases: &[Canvas<S>],
    k: usize,
    seed: u64,
) -> Result<ClusterCenters<S>, DataError> {
    let (centers, _history) = lloyd(canvases, k, seed)?;
    Ok(centers)
}

/// k-means with the per-iteration inertia history exposed for tests.
pub(crate) fn lloyd<S: Real>(
    canvases: &[Canvas<S>],
    k: usize,
    seed: u64,
) -> Result<(ClusterCenters<S>, Vec<f64>), DataError> {
    let n = canvases.len();
    if k == 0 || n == 0 {
        return Err(DataError::EmptyDataset);
    }
    if k > n {
        return Err(DataError::KTooLarge { k, n });
    }
    let side = canvases[0].side();
    let dim = side * side;

    let mut data = Array2::<S>::zeros((n, dim));
    for (i, canvas) in canvases.iter().enumerate() {
        for (j, &v) in canvas.grid().iter().enumerate() {
            data[(i, j)] = v;
        }
    }
    let point_norms: Vec<f64> = (0..n)
        .map(|i| data.row(i).iter().map(|&v| v.as_f64().powi(2)).sum())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(&data, &point_norms, k, &mut rng);

    let mut assignments = vec![0usize; n];
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..MAX_ITERS {
        let inertia = assign(&data, &point_norms, &centers, &mut assignments);
        history.push(inertia);

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            let row = data.row(i);
            let acc = &mut sums[a * dim..(a + 1) * dim];
            for (s, &v) in acc.iter_mut().zip(row.iter()) {
                *s += v.as_f64();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue; // empty cluster keeps its previous center
            }
            let inv = 1.0 / counts[c] as f64;
            for j in 0..dim {
                centers[(c, j)] = S::of_f64(sums[c * dim + j] * inv);
            }
        }

        if history.len() >= 2 {
            let prev = history[history.len() - 2];
            let cur = history[history.len() - 1];
            if prev <= 0.0 || (prev - cur) / prev < REL_TOL {
                break;
            }
        }
    }

    let centers = (0..k)
        .map(|c| {
            let mut canvas = Canvas::zeros(side);
            for row in 0..side {
                for col in 0..side {
                    canvas.set(row, col, centers[(c, row * side + col)]);
                }
            }
            canvas
        })
        .collect();
    Ok((ClusterCenters { centers, k }, history))
}

/// Assigns every point to its nearest center via one GEMM; returns inertia.
fn assign<S: Real>(
    data: &Array2<S>,
    point_norms: &[f64],
    centers: &Array2<S>,
    assignments: &mut [usize],
) -> f64 {
    let k = centers.nrows();
    let center_norms: Vec<f64> = (0..k)
        .map(|c| centers.row(c).iter().map(|&v| v.as_f64().powi(2)).sum())
        .collect();
    // ||x - c||^2 = ||x||^2 - 2 x.c + ||c||^2
    let cross = data.dot(&centers.t());
    let mut inertia = 0.0;
    for i in 0..data.nrows() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let d = point_norms[i] - 2.0 * cross[(i, c)].as_f64() + center_norms[c];
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        assignments[i] = best;
        inertia += best_d.max(0.0);
    }
    inertia
}

/// k-means++ seeding: each next center is drawn with probability
/// proportional to its squared distance from the chosen set.
fn seed_plus_plus<S: Real>(
    data: &Array2<S>,
    point_norms: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<S> {
    let (n, dim) = data.dim();
    let mut centers = Array2::<S>::zeros((k, dim));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&data.row(first));

    let mut d2 = vec![0.0f64; n];
    for i in 0..n {
        d2[i] = sq_dist(data, i, &centers, 0, point_norms);
    }
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            // all remaining points coincide with a chosen center
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&data.row(chosen));
        for i in 0..n {
            let d = sq_dist(data, i, &centers, c, point_norms);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

fn sq_dist<S: Real>(
    data: &Array2<S>,
    i: usize,
    centers: &Array2<S>,
    c: usize,
    point_norms: &[f64],
) -> f64 {
    let dot: f64 = data
        .row(i)
        .iter()
        .zip(centers.row(c).iter())
        .map(|(&a, &b)| a.as_f64() * b.as_f64())
        .sum();
    let cn: f64 = centers.row(c).iter().map(|&v| v.as_f64().powi(2)).sum();
    (point_norms[i] - 2.0 * dot + cn).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GRID;

    fn block_canvas(row0: usize, col0: usize) -> Canvas<f64> {
        let mut c = Canvas::zeros(GRID);
        for r in row0..row0 + 6 {
            for col in col0..col0 + 6 {
                c.set(r, col, 1.0);
            }
        }
        c
    }

    #[test]
    fn k1_center_is_pixelwise_mean() {
        let canvases = vec![block_canvas(0, 0), block_canvas(10, 10), block_canvas(20, 20)];
        let result = compute_cluster_centers(&canvases, 1, 3).unwrap();
        assert_eq!(result.k, 1);
        let center = &result.centers[0];
        for row in 0..GRID {
            for col in 0..GRID {
                let mean = canvases.iter().map(|c| c.get(row, col)).sum::<f64>() / 3.0;
                assert!((center.get(row, col) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recovers_well_separated_prototypes() {
        // 3 distinct images, each repeated 5 times: centers must be exactly
        // those images (brute-force check against the prototype set).
        let prototypes = [block_canvas(0, 0), block_canvas(12, 12), block_canvas(24, 24)];
        let mut canvases = Vec::new();
        for p in &prototypes {
            for _ in 0..5 {
                canvases.push(p.clone());
            }
        }
        let result = compute_cluster_centers(&canvases, 3, 17).unwrap();
        for p in &prototypes {
            let matched = result.centers.iter().any(|c| {
                c.grid()
                    .iter()
                    .zip(p.grid().iter())
                    .all(|(a, b)| (a - b).abs() < 1e-9)
            });
            assert!(matched, "prototype not recovered");
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let canvases: Vec<Canvas<f64>> =
            (0..20).map(|i| block_canvas(i % 13, (i * 7) % 13)).collect();
        let a = compute_cluster_centers(&canvases, 4, 99).unwrap();
        let b = compute_cluster_centers(&canvases, 4, 99).unwrap();
        for (x, y) in a.centers.iter().zip(b.centers.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn objective_is_non_increasing() {
        let canvases: Vec<Canvas<f64>> =
            (0..30).map(|i| block_canvas((i * 3) % 20, (i * 11) % 20)).collect();
        let (_, history) = lloyd(&canvases, 5, 7).unwrap();
        for w in history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "inertia increased: {history:?}");
        }
    }

    #[test]
    fn k_larger_than_dataset_errors() {
        let canvases = vec![block_canvas(0, 0); 3];
        assert!(matches!(
            compute_cluster_centers(&canvases, 4, 0),
            Err(DataError::KTooLarge { k: 4, n: 3 })
        ));
    }
}
