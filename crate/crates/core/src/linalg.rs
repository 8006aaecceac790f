//! Small dense linear-algebra helpers shared across modules: half
//! vectorization, symmetric roots, covariance of a data matrix.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Number of distinct second moments of `p` variables.
pub fn moment_count(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Position of element `(i, j)`, `i >= j`, in the row-major lower triangle.
#[inline]
pub fn vech_index(i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    i * (i + 1) / 2 + j
}

/// `(i, j)` pairs in vech order.
pub fn vech_pairs(p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(moment_count(p));
    for i in 0..p {
        for j in 0..=i {
            out.push((i, j));
        }
    }
    out
}

pub fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows();
    let mut out = DVector::zeros(moment_count(p));
    let mut k = 0;
    for i in 0..p {
        for j in 0..=i {
            out[k] = m[(i, j)];
            k += 1;
        }
    }
    out
}

/// Infers `p` from the vector length.
pub fn dimension_of(len: usize) -> Result<usize> {
    let p = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if moment_count(p) != len {
        return Err(Error::InvalidInput(format!(
            "length {len} is not a triangular number"
        )));
    }
    Ok(p)
}

pub fn devech(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = dimension_of(v.len())?;
    let mut m = DMatrix::zeros(p, p);
    let mut k = 0;
    for i in 0..p {
        for j in 0..=i {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(m)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Column means and the `1/n` covariance of an `n x p` data matrix.
pub fn sample_covariance(data: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.nrows();
    let p = data.ncols();
    let mut mean = DVector::zeros(p);
    for j in 0..p {
        mean[j] = data.column(j).sum() / n as f64;
    }
    let mut centered = data.clone();
    for j in 0..p {
        let mu = mean[j];
        centered.column_mut(j).add_scalar_mut(-mu);
    }
    let mut cov = centered.tr_mul(&centered) / n as f64;
    symmetrize(&mut cov);
    (mean, cov)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite()) && m.clone().cholesky().is_some()
}

/// Log-determinant of a positive definite matrix via Cholesky.
pub fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    Some(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

fn spectral_function(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(f);
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&vals) * q.transpose();
    symmetrize(&mut out);
    out
}

/// Symmetric PSD square root; eigenvalues below `-1e-10 * max` are rejected,
/// small negatives are clipped to zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min < -1e-10 * max.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidMoments(format!(
            "matrix is not positive semidefinite (smallest eigenvalue {min:e})"
        )));
    }
    Ok(spectral_function(m, |x| x.max(0.0).sqrt()))
}

/// Inverse of the symmetric square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(min > 1e-14 * max) {
        return Err(Error::InvalidMoments(format!(
            "matrix is singular or indefinite (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    Ok(spectral_function(m, |x| 1.0 / x.sqrt()))
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Count of singular values above `rel_tol` times the largest.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        Some(&max) if max > 0.0 => sv.iter().filter(|&&s| s > rel_tol * max).count(),
        _ => 0,
    }
}

/// Eigenvalues `(re, im)` of a general real matrix, sorted by descending
/// real part. The Schur iteration is bounded. When it stalls, it is retried
/// with a looser deflation threshold and on shifted copies. Rounding noise
/// on the subdiagonal can sit just above `eps * |diagonal|` forever on
/// exactly rank-deficient inputs, which is what stalls it.
pub fn general_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = m.amax();
    let budget = 200 * n.max(10);
    // The largest threshold moves eigenvalues by about 1.4e-14 * |M|.
    for eps in [f64::EPSILON, 8.0 * f64::EPSILON, 64.0 * f64::EPSILON] {
        for shift in [0.0, 0.37, -0.61, 1.13] {
            let s = shift * scale;
            let shifted = m + DMatrix::identity(n, n) * s;
            if let Some(schur) = Schur::try_new(shifted, eps, budget) {
                let mut v: Vec<(f64, f64)> = schur
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| (z.re - s, z.im))
                    .collect();
                v.sort_by(|a, b| b.0.total_cmp(&a.0));
                return Ok(v);
            }
        }
    }
    Err(Error::NumericalFailure(
        "Schur iteration did not converge".into(),
    ))
}

/// `tr(A B)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}
