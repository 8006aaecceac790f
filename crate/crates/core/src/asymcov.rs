//! Asymptotic covariance of sample moments, the normal-theory weight
//! matrix, the residual weight matrix `U` and the eigenvalues of `U Gamma`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, vech_pairs};
use crate::model::CovMatrix;
use crate::wchisq::MixtureWeights;

/// Relative threshold below which an eigenvalue of `Gamma` counts as zero.
const GAMMA_PD_TOL: f64 = 1e-10;

/// Asymptotic covariance matrix of `sqrt(n) (s - sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMatrix(DMatrix<f64>);

impl GammaMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput("Gamma must be square".into()));
        }
        linalg::dimension_of(m.nrows())?;
        let mut m = m;
        linalg::symmetrize(&mut m);
        Ok(Self(m))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Distribution-free estimate: the `1/n` covariance of
/// `vech((x_i - xbar)(x_i - xbar)')`.
pub fn gamma_adf(data: &DMatrix<f64>) -> Result<GammaMatrix> {
    let n = data.nrows();
    let p = data.ncols();
    if n < 2 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    if p == 0 {
        return Err(Error::InvalidInput("data has no columns".into()));
    }
    let (mean, _) = linalg::sample_covariance(data);
    let pairs = vech_pairs(p);
    let ps = pairs.len();
    let mut d = DMatrix::zeros(n, ps);
    let mut centered = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            centered[j] = data[(i, j)] - mean[j];
        }
        for (k, &(a, b)) in pairs.iter().enumerate() {
            d[(i, k)] = centered[a] * centered[b];
        }
    }
    for k in 0..ps {
        let mu = d.column(k).sum() / n as f64;
        d.column_mut(k).add_scalar_mut(-mu);
    }
    let mut g = d.tr_mul(&d) / n as f64;
    linalg::symmetrize(&mut g);
    Ok(GammaMatrix(g))
}

/// Normal-theory `Gamma = 2 D+ (Sigma (x) Sigma) D+'`, i.e.
/// `cov(s_ij, s_kl) = sigma_ik sigma_jl + sigma_il sigma_jk`.
pub fn gamma_normal(sigma: &CovMatrix) -> GammaMatrix {
    let pairs = vech_pairs(sigma.nrows());
    let ps = pairs.len();
    let mut g = DMatrix::zeros(ps, ps);
    for (r, &(i, j)) in pairs.iter().enumerate() {
        for (c, &(k, l)) in pairs.iter().enumerate() {
            g[(r, c)] = sigma[(i, k)] * sigma[(j, l)] + sigma[(i, l)] * sigma[(j, k)];
        }
    }
    GammaMatrix(g)
}

/// Normal-theory ML weight matrix `V = 1/2 D' (Sigma^-1 (x) Sigma^-1) D`.
pub fn v_ml(sigma: &CovMatrix) -> Result<DMatrix<f64>> {
    let w = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidMoments("covariance matrix is not positive definite".into()))?
        .inverse();
    let pairs = vech_pairs(sigma.nrows());
    let ps = pairs.len();
    let mult = |i: usize, j: usize| if i == j { 1.0 } else { 2.0 };
    let mut v = DMatrix::zeros(ps, ps);
    for (r, &(i, j)) in pairs.iter().enumerate() {
        for (c, &(k, l)) in pairs.iter().enumerate().take(r + 1) {
            let val =
                0.25 * mult(i, j) * mult(k, l) * (w[(i, k)] * w[(j, l)] + w[(i, l)] * w[(j, k)]);
            v[(r, c)] = val;
            v[(c, r)] = val;
        }
    }
    Ok(v)
}

/// Residual weight matrix together with its theoretical rank.
#[derive(Debug, Clone, PartialEq)]
pub struct UMatrix {
    matrix: DMatrix<f64>,
    rank: usize,
}

impl UMatrix {
    /// Wraps a symmetric matrix whose theoretical rank is known.
    pub fn from_parts(mut matrix: DMatrix<f64>, rank: usize) -> Self {
        linalg::symmetrize(&mut matrix);
        Self { matrix, rank }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// `U = V - V D (D' V D)^-1 D' V` for the Jacobian `D`.
pub fn u_matrix(v: &DMatrix<f64>, delta: &DMatrix<f64>) -> Result<UMatrix> {
    let ps = v.nrows();
    if delta.nrows() != ps {
        return Err(Error::InvalidInput(format!(
            "Jacobian has {} rows, weight matrix is {ps}x{ps}",
            delta.nrows()
        )));
    }
    let q = delta.ncols();
    if q == 0 {
        return Ok(UMatrix {
            matrix: v.clone(),
            rank: ps,
        });
    }
    if q > ps {
        return Err(Error::OverParametrized {
            moments: ps,
            params: q,
        });
    }
    let vd = v * delta;
    let info = delta.tr_mul(&vd);
    let sv = linalg::singular_values(&info);
    let max = sv.first().copied().unwrap_or(0.0);
    if !(sv.last().copied().unwrap_or(0.0) > 1e-12 * max) {
        return Err(Error::RankDeficient {
            context: "D' V D is singular; the model is not locally identified".into(),
            singular_values: sv,
        });
    }
    let inv = info
        .cholesky()
        .ok_or_else(|| Error::RankDeficient {
            context: "D' V D is not positive definite".into(),
            singular_values: sv.clone(),
        })?
        .inverse();
    let mut u = v - &vd * inv * vd.transpose();
    linalg::symmetrize(&mut u);
    Ok(UMatrix {
        matrix: u,
        rank: ps - q,
    })
}

/// `U_d = U_nested - U_parent`, of rank equal to the number of independent
/// constraints.
pub fn u_diff(nested: &UMatrix, parent: &UMatrix) -> Result<UMatrix> {
    if nested.matrix.shape() != parent.matrix.shape() {
        return Err(Error::Inconsistent("U matrices differ in size".into()));
    }
    if nested.rank < parent.rank {
        return Err(Error::Inconsistent(format!(
            "nested rank {} is below parent rank {}",
            nested.rank, parent.rank
        )));
    }
    let mut d = &nested.matrix - &parent.matrix;
    linalg::symmetrize(&mut d);
    let scale = nested
        .matrix
        .iter()
        .chain(parent.matrix.iter())
        .fold(0.0_f64, |m, x| m.max(x.abs()));
    let eig = SymmetricEigen::new(d.clone());
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min < -1e-6 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Inconsistent(format!(
            "U_nested - U_parent has a negative eigenvalue {min:e}; models are not nested \
             or were built from different weight matrices"
        )));
    }
    Ok(UMatrix {
        matrix: d,
        rank: nested.rank - parent.rank,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumSource {
    Estimated,
    Oracle,
    Pooled,
}

/// The `d` nonzero eigenvalues of `U Gamma`, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    pub weights: MixtureWeights,
    pub source: SpectrumSource,
    /// Largest absolute imaginary part discarded by the eigensolver.
    pub imag_residual: f64,
}

impl EigenSpectrum {
    pub fn new(weights: MixtureWeights, source: SpectrumSource) -> Self {
        Self {
            weights,
            source,
            imag_residual: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.weights.as_slice()
    }
}

/// Full eigendecomposition `U Gamma = E diag(values) E^-1`, eigenvalues
/// sorted by descending real part.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub imag_residual: f64,
    /// Whether the real symmetric similarity path was used.
    pub symmetric: bool,
}

/// Eigendecomposition of `U Gamma`.
///
/// When `Gamma` is positive definite the spectrum is taken from the
/// symmetric matrix `Gamma^1/2 U Gamma^1/2` (with `E = Gamma^-1/2 Q`);
/// otherwise a general real Schur eigensolver is used and eigenvectors are
/// recovered from null spaces of `U Gamma - mu I`.
pub fn decompose(u: &UMatrix, gamma: &GammaMatrix) -> Result<Decomposition> {
    let g = gamma.as_matrix();
    if g.shape() != u.matrix.shape() {
        return Err(Error::InvalidInput(format!(
            "U is {}x{}, Gamma is {}x{}",
            u.matrix.nrows(),
            u.matrix.ncols(),
            g.nrows(),
            g.ncols()
        )));
    }
    let geig = SymmetricEigen::new(g.clone());
    let gmax = geig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let gmin = geig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if gmax > 0.0 && gmin > GAMMA_PD_TOL * gmax {
        symmetric_path(&u.matrix, &geig)
    } else {
        general_path(&(&u.matrix * g))
    }
}

fn symmetric_path(
    u: &DMatrix<f64>,
    geig: &SymmetricEigen<f64, nalgebra::Dyn>,
) -> Result<Decomposition> {
    let qg = &geig.eigenvectors;
    let root = geig.eigenvalues.map(f64::sqrt);
    let inv_root = root.map(|x| 1.0 / x);
    let g_half = qg * DMatrix::from_diagonal(&root) * qg.transpose();
    let g_inv_half = qg * DMatrix::from_diagonal(&inv_root) * qg.transpose();
    let mut m = &g_half * u * &g_half;
    linalg::symmetrize(&mut m);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let q = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok(Decomposition {
        values,
        vectors: &g_inv_half * &q,
        inverse: q.transpose() * &g_half,
        imag_residual: 0.0,
        symmetric: true,
    })
}

fn general_path(product: &DMatrix<f64>) -> Result<Decomposition> {
    let n = product.nrows();
    let vals = linalg::general_eigenvalues(product)?;
    let values: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let imag_residual = vals.iter().fold(0.0_f64, |m, v| m.max(v.1.abs()));
    let vectors = general_eigenvectors(product, &values)?;
    let inverse = vectors.clone().try_inverse().ok_or_else(|| {
        Error::NumericalFailure("eigenvector matrix of U Gamma is singular".into())
    })?;
    debug_assert_eq!(vectors.ncols(), n);
    Ok(Decomposition {
        values,
        vectors,
        inverse,
        imag_residual,
        symmetric: false,
    })
}

/// Right eigenvectors of a diagonalizable matrix with real spectrum `values`
/// (descending), one column per eigenvalue. Numerically equal eigenvalues
/// are grouped and share a null-space basis.
fn general_eigenvectors(m: &DMatrix<f64>, values: &[f64]) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let scale = values
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 1e-7 * scale;
    let mut out = DMatrix::zeros(n, n);
    let mut col = 0;
    let mut i = 0;
    while i < values.len() {
        let mut j = i + 1;
        while j < values.len() && (values[j] - values[j - 1]).abs() <= tol {
            j += 1;
        }
        let k = j - i;
        let mu = values[i..j].iter().sum::<f64>() / k as f64;
        let shifted = m - DMatrix::identity(n, n) * mu;
        let svd = shifted.svd(false, true);
        let vt = svd
            .v_t
            .ok_or_else(|| Error::NumericalFailure("SVD did not return vectors".into()))?;
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        for &r in idx.iter().take(k) {
            out.set_column(col, &vt.row(r).transpose());
            col += 1;
        }
        i = j;
    }
    Ok(out)
}

/// The `d` largest eigenvalues of `U Gamma` as mixture weights.
pub fn lambda_hat(u: &UMatrix, gamma: &GammaMatrix, d: usize) -> Result<EigenSpectrum> {
    let dec = decompose(u, gamma)?;
    spectrum_from_decomposition(&dec, d)
}

pub fn spectrum_from_decomposition(dec: &Decomposition, d: usize) -> Result<EigenSpectrum> {
    if d == 0 || d > dec.values.len() {
        return Err(Error::InvalidInput(format!(
            "cannot retain {d} of {} eigenvalues",
            dec.values.len()
        )));
    }
    let largest = dec.values[0];
    let kept = &dec.values[..d];
    if !(largest > 0.0) || kept.iter().any(|&v| !(v > 1e-10 * largest)) {
        return Err(Error::RankMismatch(format!(
            "expected {d} positive eigenvalues of U Gamma, got {:?}",
            kept.iter()
                .filter(|&&v| v <= 1e-10 * largest)
                .collect::<Vec<_>>()
        )));
    }
    if dec.imag_residual > 1e-8 * largest {
        return Err(Error::NumericalFailure(format!(
            "eigenvalues of U Gamma have imaginary parts up to {:e}",
            dec.imag_residual
        )));
    }
    Ok(EigenSpectrum {
        weights: MixtureWeights::new(kept.to_vec())?,
        source: SpectrumSource::Estimated,
        imag_residual: dec.imag_residual,
    })
}

/// `tr(U Gamma)` and `tr((U Gamma)^2)`.
pub fn traces(u: &UMatrix, gamma: &GammaMatrix) -> (f64, f64) {
    let ug = u.as_matrix() * gamma.as_matrix();
    let t1 = ug.trace();
    let t2 = linalg::trace_of_product(&ug, &ug);
    (t1, t2)
}
