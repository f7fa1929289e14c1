//! Fréchet distance between Gaussian fits of two feature populations:
//! ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2),
//! the matrix square roots taken by eigendecomposition of the symmetrized
//! product.

use ndarray::Array2;

use super::EvalError;
use crate::linalg::sqrtm_psd;
use crate::num::Real;

pub const DEFAULT_COV_EPS: f64 = 1e-6;

/// Sample mean and unbiased covariance of a feature list.
pub fn gaussian_fit<S: Real>(features: &[Vec<S>]) -> Result<(Vec<f64>, Array2<f64>), EvalError> {
    let n = features.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples { n, d: features.first().map_or(0, Vec::len) });
    }
    let d = features[0].len();
    for f in features {
        if f.len() != d {
            return Err(EvalError::DimMismatch(d, f.len()));
        }
    }
    let mut mean = vec![0.0f64; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f.iter()) {
            *m += v.as_f64();
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = Array2::<f64>::zeros((d, d));
    for f in features {
        let centered: Vec<f64> = f.iter().zip(mean.iter()).map(|(v, m)| v.as_f64() - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[(i, j)] /= denom;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    Ok((mean, cov))
}

/// Fréchet distance with the default covariance regularization.
pub fn frechet_distance<S: Real>(
    real_features: &[Vec<S>],
    fake_features: &[Vec<S>],
) -> Result<f64, EvalError> {
    frechet_distance_with(real_features, fake_features, Some(DEFAULT_COV_EPS))
}

/// Fréchet distance; `cov_eps = None` requires each list to outnumber the
/// feature dimension (nonsingular covariances), `Some(eps)` adds eps * I
/// before the matrix square root.
pub fn frechet_distance_with<S: Real>(
    real_features: &[Vec<S>],
    fake_features: &[Vec<S>],
    cov_eps: Option<f64>,
) -> Result<f64, EvalError> {
    let (mu1, mut cov1) = gaussian_fit(real_features)?;
    let (mu2, mut cov2) = gaussian_fit(fake_features)?;
    let d = mu1.len();
    if mu2.len() != d {
        return Err(EvalError::DimMismatch(d, mu2.len()));
    }
    match cov_eps {
        Some(eps) => {
            for i in 0..d {
                cov1[(i, i)] += eps;
                cov2[(i, i)] += eps;
            }
        }
        None => {
            if real_features.len() <= d {
                return Err(EvalError::TooFewSamples { n: real_features.len(), d });
            }
            if fake_features.len() <= d {
                return Err(EvalError::TooFewSamples { n: fake_features.len(), d });
            }
        }
    }

    let mean_term: f64 = mu1
        .iter()
        .zip(mu2.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    // tr((S1 S2)^1/2) via the symmetric form (S1^1/2 S2 S1^1/2)^1/2
    let s1_half = sqrtm_psd(&cov1);
    let inner = s1_half.dot(&cov2).dot(&s1_half);
    // symmetrize against roundoff before the second square root
    let inner_sym = (&inner + &inner.t()) * 0.5;
    let cross = sqrtm_psd(&inner_sym);
    let trace = |m: &Array2<f64>| (0..m.nrows()).map(|i| m[(i, i)]).sum::<f64>();

    Ok((mean_term + trace(&cov1) + trace(&cov2) - 2.0 * trace(&cross)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_sets_are_zero() {
        let feats: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64, (i % 5) as f64 * 0.5, (i % 3) as f64 - 1.0])
            .collect();
        let d = frechet_distance(&feats, &feats).unwrap();
        assert!(d.abs() < 1e-6, "distance {d}");
    }

    #[test]
    fn univariate_closed_form() {
        // means 0 and 1, unbiased variance exactly 1 in both populations:
        // (0-1)^2 + (1 + 1 - 2) = 1
        let a = (0.5f64).sqrt();
        let real = vec![vec![-a], vec![a]];
        let fake = vec![vec![1.0 - a], vec![1.0 + a]];
        let d = frechet_distance(&real, &fake).unwrap();
        assert!((d - 1.0).abs() < 1e-6, "distance {d}");
    }

    #[test]
    fn unregularized_requires_enough_samples() {
        let real = vec![vec![0.0, 0.0], vec![1.0, 1.0]]; // n = d = 2
        let fake = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]];
        assert!(matches!(
            frechet_distance_with(&real, &fake, None),
            Err(EvalError::TooFewSamples { .. })
        ));
        assert!(frechet_distance_with(&real, &fake, Some(1e-6)).is_ok());
    }

    /// 2x2 SPD square root in closed form: (M + sqrt(det) I) / sqrt(tr + 2 sqrt(det)).
    fn sqrtm_2x2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).sqrt();
        let denom = (m[0][0] + m[1][1] + 2.0 * det).sqrt();
        [
            [(m[0][0] + det) / denom, m[0][1] / denom],
            [m[1][0] / denom, (m[1][1] + det) / denom],
        ]
    }

    #[test]
    fn bivariate_sampled_gaussians_match_closed_form() {
        // known parameters
        let mu2 = [1.0, 0.5];
        let cov2 = [[2.0, 0.3], [0.3, 1.0]];
        // closed form with S1 = I: ||mu||^2 + tr(I + S2 - 2 S2^1/2)
        let s2_half = sqrtm_2x2(cov2);
        let expected = mu2[0] * mu2[0] + mu2[1] * mu2[1]
            + (1.0 + 1.0 + cov2[0][0] + cov2[1][1])
            - 2.0 * (s2_half[0][0] + s2_half[1][1]);

        // sample 1e4 points from each Gaussian
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut randn = || {
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        // Cholesky of cov2: L = [[a, 0], [b, c]]
        let a = cov2[0][0].sqrt();
        let b = cov2[0][1] / a;
        let c = (cov2[1][1] - b * b).sqrt();
        let n = 10_000;
        let mut real = Vec::with_capacity(n);
        let mut fake = Vec::with_capacity(n);
        for _ in 0..n {
            real.push(vec![randn(), randn()]);
            let (z1, z2) = (randn(), randn());
            fake.push(vec![mu2[0] + a * z1, mu2[1] + b * z1 + c * z2]);
        }
        let d = frechet_distance(&real, &fake).unwrap();
        assert!(
            (d - expected).abs() / expected < 0.02,
            "sampled {d} vs closed form {expected}"
        );
    }

    #[test]
    fn symmetric_for_equal_size_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gen = |rng: &mut ChaCha8Rng, shift: f64| -> Vec<Vec<f64>> {
            (0..50)
                .map(|_| (0..3).map(|_| rng.random::<f64>() + shift).collect())
                .collect()
        };
        let a = gen(&mut rng, 0.0);
        let b = gen(&mut rng, 0.8);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!(ab > 0.0);
    }
}
