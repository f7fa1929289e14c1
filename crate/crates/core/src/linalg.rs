//! Small dense symmetric eigensolver (cyclic Jacobi). Used for the matrix
//! square roots inside the Fréchet distance and as the SVD route when a
//! largest-singular-value reference is needed.

use ndarray::Array2;

/// Eigendecomposition of a symmetric matrix: returns (eigenvalues,
/// eigenvectors as columns), unordered.
pub fn jacobi_eigen_sym(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric eigen needs a square matrix");
    let mut m = a.clone();
    let mut vecs = Array2::<f64>::eye(n);

    let frob: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-14 * frob.max(1.0);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = vecs[(k, p)];
                    let vkq = vecs[(k, q)];
                    vecs[(k, p)] = c * vkp - s * vkq;
                    vecs[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigvals = (0..n).map(|i| m[(i, i)]).collect();
    (eigvals, vecs)
}

/// Largest singular value via eigenvalues of the smaller Gram matrix; the
/// independent reference for the power-iteration estimate.
pub fn max_singular_value(a: &Array2<f64>) -> f64 {
    let gram = if a.nrows() <= a.ncols() {
        a.dot(&a.t())
    } else {
        a.t().dot(a)
    };
    let (eigvals, _) = jacobi_eigen_sym(&gram);
    eigvals.into_iter().fold(0.0f64, f64::max).max(0.0).sqrt()
}

/// Symmetric positive-semidefinite square root via eigendecomposition;
/// negative eigenvalues from roundoff clamp to zero.
pub fn sqrtm_psd(a: &Array2<f64>) -> Array2<f64> {
    let (eigvals, vecs) = jacobi_eigen_sym(a);
    let n = a.nrows();
    let mut scaled = vecs.clone();
    for (j, &lambda) in eigvals.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    scaled.dot(&vecs.t())
}
