//! Multivariate normal and Vale-Maurelli nonnormal samples.
//!
//! Kurtosis targets are excess kurtosis (zero for the normal).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Coefficients of `a + bZ + cZ^2 + dZ^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleishmanCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl FleishmanCoeffs {
    pub const IDENTITY: Self = Self {
        a: 0.0,
        b: 1.0,
        c: 0.0,
        d: 0.0,
    };

    pub fn apply(&self, z: f64) -> f64 {
        self.a + z * (self.b + z * (self.c + z * self.d))
    }

    /// Variance of the transform of a standard normal.
    pub fn variance(&self) -> f64 {
        let Self { b, c, d, .. } = *self;
        b * b + 6.0 * b * d + 2.0 * c * c + 15.0 * d * d
    }
}

fn moment_residuals(x: [f64; 3], skew: f64, exkurt: f64) -> [f64; 3] {
    let [b, c, d] = x;
    [
        b * b + 6.0 * b * d + 2.0 * c * c + 15.0 * d * d - 1.0,
        2.0 * c * (b * b + 24.0 * b * d + 105.0 * d * d + 2.0) - skew,
        24.0 * (b * d
            + c * c * (1.0 + b * b + 28.0 * b * d)
            + d * d * (12.0 + 48.0 * b * d + 141.0 * c * c + 225.0 * d * d))
            - exkurt,
    ]
}

fn moment_jacobian(x: [f64; 3]) -> nalgebra::Matrix3<f64> {
    let [b, c, d] = x;
    nalgebra::Matrix3::new(
        2.0 * b + 6.0 * d,
        4.0 * c,
        6.0 * b + 30.0 * d,
        2.0 * c * (2.0 * b + 24.0 * d),
        2.0 * (b * b + 24.0 * b * d + 105.0 * d * d + 2.0),
        2.0 * c * (24.0 * b + 210.0 * d),
        24.0 * (d + c * c * (2.0 * b + 28.0 * d) + 48.0 * d * d * d),
        24.0 * (2.0 * c * (1.0 + b * b + 28.0 * b * d) + 282.0 * c * d * d),
        24.0 * (b
            + 28.0 * b * c * c
            + 2.0 * d * (12.0 + 48.0 * b * d + 141.0 * c * c + 225.0 * d * d)
            + d * d * (48.0 * b + 450.0 * d)),
    )
}

fn newton(start: [f64; 3], skew: f64, exkurt: f64) -> Option<[f64; 3]> {
    let mut x = start;
    for _ in 0..200 {
        let r = moment_residuals(x, skew, exkurt);
        if r.iter().all(|v| v.abs() <= 1e-13) {
            return Some(x);
        }
        let step = moment_jacobian(x).lu().solve(&nalgebra::Vector3::from(r))?;
        let mut damp = 1.0;
        let norm = |r: [f64; 3]| r.iter().map(|v| v * v).sum::<f64>();
        loop {
            let trial = [
                x[0] - damp * step[0],
                x[1] - damp * step[1],
                x[2] - damp * step[2],
            ];
            if norm(moment_residuals(trial, skew, exkurt)) < norm(r) || damp < 1e-6 {
                x = trial;
                break;
            }
            damp *= 0.5;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    let r = moment_residuals(x, skew, exkurt);
    r.iter().all(|v| v.abs() <= 1e-10).then_some(x)
}

/// Solves the Fleishman moment equations for a standardized variable with
/// the given skewness and excess kurtosis. Among multiple roots, those
/// giving a monotone transform (`b, d >= 0`, `c^2 <= 3bd`) are preferred,
/// then the largest linear coefficient `b`.
pub fn fleishman_coeffs(skew: f64, exkurt: f64) -> Result<FleishmanCoeffs> {
    if !skew.is_finite() || !exkurt.is_finite() {
        return Err(Error::InvalidInput("moment targets must be finite".into()));
    }
    if skew == 0.0 && exkurt == 0.0 {
        return Ok(FleishmanCoeffs::IDENTITY);
    }
    // Solve for |skew| and mirror, so that the sign symmetry is exact.
    let g1 = skew.abs();
    let monotone = |x: &[f64; 3]| x[2] >= 0.0 && x[1] * x[1] <= 3.0 * x[0] * x[2];
    let mut best: Option<[f64; 3]> = None;
    for &b0 in &[1.0, 0.9, 0.75, 0.6, 0.45, 0.3, 0.15] {
        for &d0 in &[0.0, 0.02, 0.05, 0.1, 0.2, 0.3] {
            for &c0 in &[g1 / 6.0, g1 / 3.0, 0.0, 0.5] {
                let Some(x) = newton([b0, c0, d0], g1, exkurt) else {
                    continue;
                };
                if !(x[0] > 0.0) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(bst) => match (monotone(&x), monotone(&bst)) {
                        (true, false) => true,
                        (false, true) => false,
                        _ => x[0] > bst[0] + 1e-12,
                    },
                };
                if better {
                    best = Some(x);
                }
            }
        }
    }
    let [b, c, d] = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no Fleishman transform for skewness {skew} and excess kurtosis {exkurt}; \
             the feasible region requires roughly exkurt >= 1.5 skew^2 - 1.2"
        ))
    })?;
    let c = c.copysign(if skew < 0.0 { -1.0 } else { 1.0 });
    Ok(FleishmanCoeffs { a: -c, b, c, d })
}

/// Correlation of two Fleishman transforms of standard normals with
/// correlation `rho`.
pub fn transformed_correlation(rho: f64, f1: &FleishmanCoeffs, f2: &FleishmanCoeffs) -> f64 {
    let lin = f1.b * f2.b + 3.0 * f1.b * f2.d + 3.0 * f1.d * f2.b + 9.0 * f1.d * f2.d;
    rho * lin + rho * rho * 2.0 * f1.c * f2.c + rho.powi(3) * 6.0 * f1.d * f2.d
}

/// Normal correlation that produces `target` after transformation.
pub fn intermediate_correlation(
    target: f64,
    f1: &FleishmanCoeffs,
    f2: &FleishmanCoeffs,
) -> Result<f64> {
    let g = |r: f64| transformed_correlation(r, f1, f2) - target;
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let (glo, ghi) = (g(lo), g(hi));
    const EDGE: f64 = 1e-12;
    if glo.abs() <= EDGE {
        return Ok(lo);
    }
    if ghi.abs() <= EDGE {
        return Ok(hi);
    }
    if glo > 0.0 || ghi < 0.0 {
        return Err(Error::Infeasible(format!(
            "correlation {target} is not attainable with these marginals (range [{:.4}, {:.4}])",
            glo + target,
            ghi + target
        )));
    }
    let lin = f1.b * f2.b + 3.0 * f1.b * f2.d + 3.0 * f1.d * f2.b + 9.0 * f1.d * f2.d;
    let mut r = (target / lin).clamp(-1.0, 1.0);
    for _ in 0..200 {
        let v = g(r);
        if v.abs() <= 1e-15 {
            break;
        }
        if v < 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        let slope = lin + 4.0 * r * f1.c * f2.c + 18.0 * r * r * f1.d * f2.d;
        let newton = r - v / slope;
        r = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 {
            break;
        }
    }
    Ok(r)
}

/// `n` rows from `N(0, sigma)`: `x = L z` with `sigma = L L'`. A positive
/// semidefinite `sigma` without a Cholesky factor uses its spectral root.
pub fn mvn_sample(sigma: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let factor = sampling_factor(sigma)?;
    let p = sigma.nrows();
    let mut rng = seeding::rng(seed);
    let z = DMatrix::from_row_iterator(
        n,
        p,
        (0..n * p).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    Ok(z * factor.transpose())
}

fn sampling_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() || sigma.nrows() == 0 {
        return Err(Error::InvalidInput(
            "covariance must be a nonempty square matrix".into(),
        ));
    }
    if let Some(ch) = sigma.clone().cholesky() {
        return Ok(ch.unpack());
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let max = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&v| v < -1e-10 * max) {
        return Err(Error::InvalidInput(
            "covariance matrix is not positive semidefinite".into(),
        ));
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// Vale-Maurelli sample with covariance `sigma` and common marginal
/// skewness and excess kurtosis.
pub fn vale_maurelli_sample(
    sigma: &DMatrix<f64>,
    skew: f64,
    exkurt: f64,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let coeffs = fleishman_coeffs(skew, exkurt)?;
    let rz = intermediate_matrix(sigma, &coeffs)?;
    let z = mvn_sample(&rz, n, seed)?;
    let sd: Vec<f64> = (0..sigma.nrows()).map(|i| sigma[(i, i)].sqrt()).collect();
    Ok(DMatrix::from_fn(n, sigma.ncols(), |i, j| {
        sd[j] * coeffs.apply(z[(i, j)])
    }))
}

/// Correlation matrix of the latent normals.
pub fn intermediate_matrix(sigma: &DMatrix<f64>, coeffs: &FleishmanCoeffs) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    if !sigma.is_square() || p == 0 {
        return Err(Error::InvalidInput(
            "covariance must be a nonempty square matrix".into(),
        ));
    }
    if (0..p).any(|i| !(sigma[(i, i)] > 0.0)) {
        return Err(Error::InvalidInput("variances must be positive".into()));
    }
    let mut rz = DMatrix::identity(p, p);
    for i in 0..p {
        for j in 0..i {
            let target = sigma[(i, j)] / (sigma[(i, i)] * sigma[(j, j)]).sqrt();
            let r = intermediate_correlation(target, coeffs, coeffs)?;
            rz[(i, j)] = r;
            rz[(j, i)] = r;
        }
    }
    let eig = SymmetricEigen::new(rz.clone());
    let min = eig.eigenvalues.min();
    if min >= 1e-10 {
        return Ok(rz);
    }
    if min < -1e-6 {
        return Err(Error::Infeasible(format!(
            "intermediate correlation matrix has eigenvalue {min:e}"
        )));
    }
    let clipped = eig.eigenvalues.map(|v| v.max(1e-10));
    let mut m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let s: Vec<f64> = (0..p).map(|i| m[(i, i)].sqrt()).collect();
    for i in 0..p {
        for j in 0..p {
            m[(i, j)] /= s[i] * s[j];
        }
    }
    Ok(m)
}

/// Sample skewness and excess kurtosis of one column.
pub fn sample_moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let e = v - mean;
        let e2 = e * e;
        m2 += e2;
        m3 += e2 * e;
        m4 += e2 * e2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_transform() {
        assert_eq!(
            fleishman_coeffs(0.0, 0.0).unwrap(),
            FleishmanCoeffs::IDENTITY
        );
    }

    #[test]
    fn solves_moment_system() {
        for (s, k) in [(1.0, 7.0), (2.0, 21.0), (0.5, 1.0), (0.0, 3.0), (-1.0, 7.0)] {
            let f = fleishman_coeffs(s, k).unwrap();
            assert_eq!(f.a, -f.c);
            assert!((f.variance() - 1.0).abs() <= 1e-10);
            let r = moment_residuals([f.b, f.c.abs(), f.d], s.abs(), k);
            assert!(r.iter().all(|v| v.abs() <= 1e-10), "{s} {k}: {r:?}");
        }
    }

    #[test]
    fn prefers_monotone_root() {
        let f = fleishman_coeffs(1.0, 7.0).unwrap();
        assert!((f.b - 0.6546011357).abs() < 1e-8 && f.d > 0.0, "{f:?}");
        let f = fleishman_coeffs(2.0, 21.0).unwrap();
        assert!((f.b - 0.3592693198).abs() < 1e-8 && f.d > 0.0, "{f:?}");
    }

    #[test]
    fn skew_symmetry() {
        let p = fleishman_coeffs(1.0, 7.0).unwrap();
        let m = fleishman_coeffs(-1.0, 7.0).unwrap();
        assert_eq!((m.a, m.b, m.c, m.d), (-p.a, p.b, -p.c, p.d));
    }

    #[test]
    fn infeasible_target() {
        assert!(matches!(
            fleishman_coeffs(3.0, 0.0),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn intermediate_correlation_inverts() {
        let f = fleishman_coeffs(2.0, 21.0).unwrap();
        for target in [-0.3, 0.0, 0.2, 0.5, 0.8] {
            let r = intermediate_correlation(target, &f, &f).unwrap();
            assert_relative_eq!(transformed_correlation(r, &f, &f), target, epsilon = 1e-12);
        }
        assert_eq!(intermediate_correlation(1.0, &f, &f).unwrap(), 1.0);
    }

    #[test]
    fn mvn_is_seeded_and_linear() {
        let sigma = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let a = mvn_sample(&sigma, 50, 9).unwrap();
        assert_eq!(a, mvn_sample(&sigma, 50, 9).unwrap());
        let z = mvn_sample(&DMatrix::identity(2, 2), 50, 9).unwrap();
        let l = sigma.clone().cholesky().unwrap().unpack();
        assert_relative_eq!(a, z * l.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn mvn_singular_and_invalid() {
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = mvn_sample(&sing, 20, 1).unwrap();
        for i in 0..20 {
            assert_relative_eq!(x[(i, 0)], x[(i, 1)], epsilon = 1e-12);
        }
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(mvn_sample(&bad, 5, 1).is_err());
    }

    #[test]
    fn vm_reduces_to_normal() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        assert_eq!(
            vale_maurelli_sample(&sigma, 0.0, 0.0, 30, 4).unwrap(),
            mvn_sample(
                &DMatrix::from_row_slice(2, 2, &[1.0, 0.6 / 2f64.sqrt(), 0.6 / 2f64.sqrt(), 1.0]),
                30,
                4
            )
            .unwrap()
            .map_with_location(|_, j, v| v * [2f64.sqrt(), 1.0][j])
        );
    }
}
