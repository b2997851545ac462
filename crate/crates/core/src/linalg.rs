//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Extreme eigenvalues of a symmetric matrix.
pub fn symmetric_eig_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Square-root factor `F` of a symmetric PSD matrix, `F Fᵀ = m`.
/// Negative eigenvalues below the PSD tolerance are clamped to zero.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-10 * scale.max(1.0);
    let mut vecs = eig.eigenvectors;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -tol {
            return Err(Error::NotPositiveDefinite { min_eig: lam });
        }
        let s = lam.max(0.0).sqrt();
        for i in 0..vecs.nrows() {
            vecs[(i, j)] *= s;
        }
    }
    Ok(vecs)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix via its
/// eigendecomposition, with a relative rank threshold.
pub fn symmetric_pinv(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let cutoff = rank_tol * scale.max(1e-300);
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cutoff {
            let v = eig.eigenvectors.column(j);
            out += (&v * v.transpose()) / lam;
        }
    }
    out
}

/// Orthogonal projector onto the null space of `rows` (each row a
/// constraint gradient), via SVD with relative rank threshold `rank_tol`.
pub fn nullspace_projector(rows: &DMatrix<f64>, dim: usize, rank_tol: f64) -> DMatrix<f64> {
    if rows.nrows() == 0 {
        return DMatrix::identity(dim, dim);
    }
    let svd = rows.clone().svd(false, true);
    let v_t = svd.v_t.expect("svd requested V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rank_tol * smax.max(1e-300);
    let mut p = DMatrix::identity(dim, dim);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let v = v_t.row(i).transpose();
            p -= &v * v.transpose();
        }
    }
    p
}

/// Nonnegative least squares `min_{beta >= 0} ||A beta - b||` by the
/// Lawson-Hanson active-set method. Returns `(beta, residual_norm)`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let mut passive = vec![false; n];
    let mut beta = DVector::zeros(n);
    let max_outer = 3 * n + 10;

    for _ in 0..max_outer {
        let resid = b - a * &beta;
        let w = a.transpose() * &resid;
        // Most-violating inactive coordinate.
        let mut best = None;
        for j in 0..n {
            if !passive[j] && w[j] > tol {
                match best {
                    Some((_, wv)) if w[j] <= wv => {}
                    _ => best = Some((j, w[j])),
                }
            }
        }
        let Some((j_in, _)) = best else { break };
        passive[j_in] = true;

        // Inner loop: solve on the passive set, backtrack if any passive
        // coefficient goes nonpositive.
        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(idx.iter());
            let sol = sub
                .clone()
                .svd(true, true)
                .solve(b, 1e-14)
                .expect("svd solve");
            if sol.iter().all(|&v| v > 0.0) {
                beta.fill(0.0);
                for (k, &j) in idx.iter().enumerate() {
                    beta[j] = sol[k];
                }
                break;
            }
            // Step toward `sol` until the first passive coefficient hits 0.
            let mut alpha = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if sol[k] <= 0.0 {
                    let t = beta[j] / (beta[j] - sol[k]);
                    alpha = alpha.min(t);
                }
            }
            for (k, &j) in idx.iter().enumerate() {
                beta[j] += alpha * (sol[k] - beta[j]);
                if beta[j] <= tol {
                    beta[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    let resid = (b - a * &beta).norm();
    (beta, resid)
}

/// Compensated (Kahan) streaming sum of vectors.
pub struct KahanVecSum {
    sum: DVector<f64>,
    comp: DVector<f64>,
    count: usize,
}

impl KahanVecSum {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: DVector::zeros(dim),
            comp: DVector::zeros(dim),
            count: 0,
        }
    }

    pub fn add(&mut self, v: &DVector<f64>) {
        for i in 0..self.sum.len() {
            let y = v[i] - self.comp[i];
            let t = self.sum[i] + y;
            self.comp[i] = (t - self.sum[i]) - y;
            self.sum[i] = t;
        }
        self.count += 1;
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.sum / self.count as f64
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Unbiased sample covariance of a set of vectors (columns of data points).
pub fn sample_covariance(points: &[DVector<f64>]) -> DMatrix<f64> {
    let n = points.len();
    assert!(n >= 2, "covariance needs at least two samples");
    let dim = points[0].len();
    let mut mean = DVector::zeros(dim);
    for p in points {
        mean += p;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for p in points {
        let d = p - &mean;
        cov += &d * d.transpose();
    }
    cov / (n as f64 - 1.0)
}

/// Mean and standard error of a slice of scalars.
pub fn mean_and_std_err(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(!values.is_empty());
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}
