//! Bootstrap procedures: the Bollen-Stine test, the uniformity-based
//! selector among p-value approximations, and the bootstrap tests of
//! equal eigenvalues (scaled-statistic consistency and asymptotic
//! robustness).
//!
//! Resample `k` draws its rows from the stream `seeding::stream(seed, k)`,
//! and rows are put in lexicographic order first, so every result depends
//! only on the data set, `B` and the seed.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{analyze, analyze_nested, Analysis, NestedAnalysis};
use crate::asymcov::{gamma_adf, u_matrix, v_ml, Decomposition};
use crate::error::{Error, Result};
use crate::fit::estimate;
use crate::linalg::{self, sym_inv_sqrt, sym_sqrt};
use crate::model::{CovMatrix, ModelSpec};
use crate::pvalue::{Method, PValueReport};
use crate::seeding;
use crate::wchisq::MixtureWeights;

/// Failure share above which bootstrap results are flagged as unreliable.
pub const FAILURE_WARNING_RATE: f64 = 0.05;

/// `x_i -> Sigma^1/2 S^-1/2 x_i` for every row, with symmetric roots.
pub fn bollen_stine_transform(data: &DMatrix<f64>, target: &CovMatrix) -> Result<DMatrix<f64>> {
    let (_, s) = linalg::sample_covariance(data);
    if !linalg::is_positive_definite(&s) {
        return Err(Error::DegenerateData(
            "sample covariance is singular".into(),
        ));
    }
    if target.shape() != s.shape() {
        return Err(Error::InvalidInput(
            "target covariance has the wrong size".into(),
        ));
    }
    let m = sym_inv_sqrt(&s)? * sym_sqrt(target)?;
    Ok(data * m)
}

/// Rows sorted lexicographically.
pub fn canonical_order(data: &DMatrix<f64>) -> DMatrix<f64> {
    let mut idx: Vec<usize> = (0..data.nrows()).collect();
    idx.sort_by(|&a, &b| {
        data.row(a)
            .iter()
            .zip(data.row(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    data.select_rows(&idx)
}

/// Resample `index` of `data`: `n` rows drawn with replacement.
pub fn resample_rows(data: &DMatrix<f64>, seed: u64, index: u64) -> DMatrix<f64> {
    let n = data.nrows();
    let mut rng = seeding::stream(seed, index);
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    data.select_rows(&idx)
}

/// Statistics of one Bollen-Stine resample; `None` marks a failed refit.
#[derive(Debug, Clone)]
pub struct ResampleDraw {
    pub t_stat: Option<f64>,
    /// One p-value per requested candidate.
    pub pvalues: Vec<Option<f64>>,
}

/// Evaluates `statistic` on `b` resamples of `data`, in parallel and in
/// resample order.
pub fn bootstrap<T, F>(data: &DMatrix<f64>, b: usize, seed: u64, statistic: F) -> Vec<T>
where
    T: Send,
    F: Fn(&DMatrix<f64>) -> T + Sync,
{
    (0..b)
        .into_par_iter()
        .map(|k| statistic(&resample_rows(data, seed, k as u64)))
        .collect()
}

fn failed_draw(candidates: &[Method]) -> ResampleDraw {
    ResampleDraw {
        t_stat: None,
        pvalues: vec![None; candidates.len()],
    }
}

/// Draws `b` resamples of the transformed sample and refits each one,
/// starting from the original estimate. When `candidates` is nonempty the
/// eigenvalues are re-estimated per resample and each candidate's p-value
/// is recorded.
pub fn bollen_stine_draws(
    model: &ModelSpec,
    original: &Analysis,
    transformed: &DMatrix<f64>,
    candidates: &[Method],
    b: usize,
    seed: u64,
) -> Vec<ResampleDraw> {
    let start = [original.fit.theta_hat.clone()];
    bootstrap(transformed, b, seed, |x| {
        if candidates.is_empty() {
            let (_, cov) = linalg::sample_covariance(x);
            let t = estimate(model, &cov, x.nrows(), &start)
                .ok()
                .filter(|f| f.converged)
                .map(|f| f.t_stat);
            return ResampleDraw {
                t_stat: t,
                pvalues: vec![],
            };
        }
        match analyze(model, x, &start) {
            Ok(a) if a.fit.converged => ResampleDraw {
                t_stat: Some(a.fit.t_stat),
                pvalues: candidates
                    .iter()
                    .map(|m| a.pvalue(m).ok().map(|r| r.p))
                    .collect(),
            },
            _ => failed_draw(candidates),
        }
    })
}

/// Nested-model counterpart of [`bollen_stine_draws`]: the statistic is the
/// difference of the two fit statistics, and `transformed` must satisfy the
/// nested model exactly.
pub fn nested_bollen_stine_draws(
    parent: &ModelSpec,
    nested: &ModelSpec,
    original: &NestedAnalysis,
    transformed: &DMatrix<f64>,
    candidates: &[Method],
    b: usize,
    seed: u64,
) -> Vec<ResampleDraw> {
    let start = [original.nested.theta_hat.clone()];
    bootstrap(transformed, b, seed, |x| {
        match analyze_nested(parent, nested, x, &start) {
            Ok(a) if a.parent.converged && a.nested.converged => ResampleDraw {
                t_stat: Some(a.statistic()),
                pvalues: candidates
                    .iter()
                    .map(|m| a.pvalue(m).ok().map(|r| r.p))
                    .collect(),
            },
            _ => failed_draw(candidates),
        }
    })
}

/// Exceedance share among successful draws.
fn exceedance(values: impl Iterator<Item = Option<f64>>, observed: f64) -> (f64, usize, usize) {
    let (mut hits, mut ok, mut failed) = (0usize, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                ok += 1;
                if v > observed {
                    hits += 1;
                }
            }
            None => failed += 1,
        }
    }
    let p = if ok == 0 {
        f64::NAN
    } else {
        hits as f64 / ok as f64
    };
    (p, ok, failed)
}

fn failure_diagnostics(report: PValueReport, failed: usize, b: usize) -> PValueReport {
    let rate = failed as f64 / b as f64;
    let report = report
        .with("failures", json!(failed))
        .with("failure_rate", json!(rate));
    if rate > FAILURE_WARNING_RATE {
        report.with(
            "warning",
            json!(format!(
                "{failed} of {b} resamples failed; result is unreliable"
            )),
        )
    } else {
        report
    }
}

/// Bollen-Stine p-value from precomputed draws: the share of successful
/// resamples whose statistic exceeds `t_observed`.
pub fn bollen_stine_report(
    t_observed: f64,
    draws: &[ResampleDraw],
    seed: u64,
) -> Result<PValueReport> {
    let (p, ok, failed) = exceedance(draws.iter().map(|d| d.t_stat), t_observed);
    if ok == 0 {
        return Err(Error::NumericalFailure(
            "every bootstrap refit failed".into(),
        ));
    }
    let report = PValueReport {
        method: Method::BollenStine,
        p,
        weights_used: None,
        t_stat: t_observed,
        diagnostics: BTreeMap::new(),
    }
    .with("B", json!(draws.len()))
    .with("seed", json!(seed));
    Ok(failure_diagnostics(report, failed, draws.len()))
}

pub fn bollen_stine_pvalue(
    data: &DMatrix<f64>,
    model: &ModelSpec,
    b: usize,
    seed: u64,
) -> Result<PValueReport> {
    check_b(b)?;
    let data = canonical_order(data);
    let original = analyze(model, &data, &[])?;
    let transformed = bollen_stine_transform(&data, &original.fit.implied.to_cov())?;
    let draws = bollen_stine_draws(model, &original, &transformed, &[], b, seed);
    bollen_stine_report(original.fit.t_stat, &draws, seed)
}

pub(crate) fn check_b(b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::InvalidInput("B must be at least 1".into()));
    }
    Ok(())
}

/// Kolmogorov-Smirnov distance of a sample from the uniform law on [0, 1].
pub fn ks_distance_uniform(p: &[f64]) -> f64 {
    let mut s = p.to_vec();
    s.sort_by(f64::total_cmp);
    let b = s.len() as f64;
    s.iter().enumerate().fold(0.0_f64, |m, (i, &x)| {
        let i = i as f64;
        m.max((i + 1.0) / b - x).max(x - i / b)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub chosen: Method,
    pub distances: BTreeMap<String, f64>,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    /// P-value of the chosen method on the original sample.
    pub p: Option<f64>,
    pub failures: usize,
}

/// Picks the candidate whose bootstrap p-values are closest to uniform.
/// Exact ties go to the candidate with fewer pooling groups. `dof` orders
/// candidates by complexity; `original` gives the chosen method's p-value
/// on the observed sample.
pub fn selection_report(
    candidates: &[Method],
    draws: &[ResampleDraw],
    seed: u64,
    dof: usize,
    original: impl Fn(&Method) -> Result<PValueReport>,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate methods".into()));
    }
    let mut distances = BTreeMap::new();
    let mut best: Option<(f64, usize, usize)> = None;
    let mut failures = 0;
    for (l, m) in candidates.iter().enumerate() {
        let ps: Vec<f64> = draws.iter().filter_map(|dr| dr.pvalues[l]).collect();
        failures = failures.max(draws.len() - ps.len());
        let dist = if ps.is_empty() {
            1.0
        } else {
            ks_distance_uniform(&ps)
        };
        distances.insert(m.to_string(), dist);
        let key = (dist, m.complexity(dof), l);
        if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
            best = Some(key);
        }
    }
    let chosen = candidates[best.expect("candidates nonempty").2].clone();
    let p = original(&chosen).ok().map(|r| r.p);
    Ok(SelectionReport {
        chosen,
        distances,
        b: draws.len(),
        seed,
        p,
        failures,
    })
}

/// Rejects candidates that are not computable from one resample.
pub fn check_candidates(candidates: &[Method]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidate methods".into()));
    }
    if let Some(m) = candidates.iter().find(|m| !m.is_analytic()) {
        return Err(Error::InvalidInput(format!(
            "'{m}' cannot be a selection candidate"
        )));
    }
    Ok(())
}

pub fn select(
    data: &DMatrix<f64>,
    model: &ModelSpec,
    candidates: &[Method],
    b: usize,
    seed: u64,
) -> Result<SelectionReport> {
    check_b(b)?;
    check_candidates(candidates)?;
    let data = canonical_order(data);
    let original = analyze(model, &data, &[])?;
    let transformed = bollen_stine_transform(&data, &original.fit.implied.to_cov())?;
    let draws = bollen_stine_draws(model, &original, &transformed, candidates, b, seed);
    selection_report(candidates, &draws, seed, original.dof, |m| {
        original.pvalue(m)
    })
}

fn nested_draws(
    data: &DMatrix<f64>,
    parent: &ModelSpec,
    nested: &ModelSpec,
    candidates: &[Method],
    b: usize,
    seed: u64,
) -> Result<(NestedAnalysis, Vec<ResampleDraw>)> {
    let original = analyze_nested(parent, nested, data, &[])?;
    let target = nested.implied_cov(&original.nested.theta_hat)?;
    let transformed = bollen_stine_transform(data, &target)?;
    let draws =
        nested_bollen_stine_draws(parent, nested, &original, &transformed, candidates, b, seed);
    Ok((original, draws))
}

/// Bollen-Stine p-value of the difference statistic. Resamples come from
/// the sample transformed to fit the nested model exactly.
pub fn nested_bollen_stine_pvalue(
    data: &DMatrix<f64>,
    parent: &ModelSpec,
    nested: &ModelSpec,
    b: usize,
    seed: u64,
) -> Result<PValueReport> {
    check_b(b)?;
    let data = canonical_order(data);
    let (original, draws) = nested_draws(&data, parent, nested, &[], b, seed)?;
    bollen_stine_report(original.statistic(), &draws, seed)
}

/// [`select`] for the difference test.
pub fn nested_select(
    data: &DMatrix<f64>,
    parent: &ModelSpec,
    nested: &ModelSpec,
    candidates: &[Method],
    b: usize,
    seed: u64,
) -> Result<SelectionReport> {
    check_b(b)?;
    check_candidates(candidates)?;
    let data = canonical_order(data);
    let (original, draws) = nested_draws(&data, parent, nested, candidates, b, seed)?;
    selection_report(candidates, &draws, seed, original.m, |m| original.pvalue(m))
}

/// Equalizing matrix `c^1/2 E diag(lambda^-1/2, 0) E^-1`.
pub fn a_matrix(e: &DMatrix<f64>, lambda: &MixtureWeights, c: f64) -> Result<DMatrix<f64>> {
    let inv = checked_inverse(e)?;
    Ok(a_matrix_with_inverse(e, &inv, lambda.as_slice(), c))
}

fn checked_inverse(e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = linalg::singular_values(e);
    let cond = sv[0] / sv[sv.len() - 1];
    if !(cond <= 1e12) {
        return Err(Error::NumericalFailure(format!(
            "eigenvector matrix is ill-conditioned (condition number {cond:e})"
        )));
    }
    e.clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("eigenvector matrix is singular".into()))
}

fn a_matrix_with_inverse(
    e: &DMatrix<f64>,
    inv: &DMatrix<f64>,
    lambda: &[f64],
    c: f64,
) -> DMatrix<f64> {
    let d = lambda.len();
    let scaled = DMatrix::from_fn(e.nrows(), d, |i, j| e[(i, j)] / lambda[j].sqrt());
    scaled * inv.rows(0, d) * c.sqrt()
}

/// `d log(mean) - sum log`: zero iff all values are equal.
pub fn h_ar(lambda: &[f64]) -> f64 {
    let d = lambda.len() as f64;
    let mean = lambda.iter().sum::<f64>() / d;
    (d * mean.ln() - lambda.iter().map(|x| x.ln()).sum::<f64>()).max(0.0)
}

/// `log((l_1 + l_d)^2) - log(4 l_1 l_d)` for descending values.
pub fn h_sb(lambda: &[f64]) -> f64 {
    let (hi, lo) = (lambda[0], lambda[lambda.len() - 1]);
    (2.0 * (hi + lo).ln() - (4.0 * hi * lo).ln()).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub p_ar: f64,
    pub p_sb: f64,
    pub t_ar: f64,
    pub t_sb: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub failures: usize,
    pub warning: Option<String>,
}

/// The equalizing transform of the original sample in reduced form.
///
/// With `A = c^1/2 E_d L^-1/2 F_d` (`E_d` the first `d` eigenvectors, `F_d`
/// the first `d` rows of `E^-1`), the nonzero eigenvalues of `A M A` are
/// those of the `d x d` matrix `c L^-1/2 F_d M E_d L^-1/2`.
#[derive(Debug, Clone)]
pub struct Equalizer {
    left: DMatrix<f64>,
    right: DMatrix<f64>,
}

impl Equalizer {
    pub fn new(dec: &Decomposition, lambda: &[f64]) -> Result<Self> {
        let d = lambda.len();
        let inv = if dec.symmetric {
            dec.inverse.clone()
        } else {
            checked_inverse(&dec.vectors)?
        };
        let left = DMatrix::from_fn(d, inv.ncols(), |i, j| inv[(i, j)] / lambda[i].sqrt());
        let right = DMatrix::from_fn(dec.vectors.nrows(), d, |i, j| {
            dec.vectors[(i, j)] / lambda[j].sqrt()
        });
        Ok(Self { left, right })
    }

    /// Descending real parts of the nonzero eigenvalues of `A M A` with
    /// `c = 1`, `M = U Gamma`.
    pub fn eigenvalues(&self, u: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<Vec<f64>> {
        let k = (&self.left * u) * gamma * &self.right;
        Ok(linalg::general_eigenvalues(&k)?
            .into_iter()
            .map(|z| z.0)
            .collect())
    }
}

/// Bootstrap tests of equal eigenvalues; resamples come from the original
/// sample.
pub fn robustness_tests(
    data: &DMatrix<f64>,
    model: &ModelSpec,
    b: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    check_b(b)?;
    let data = canonical_order(data);
    let original = analyze(model, &data, &[])?;
    robustness_from_analysis(model, &data, &original, b, seed)
}

pub fn robustness_from_analysis(
    model: &ModelSpec,
    data: &DMatrix<f64>,
    original: &Analysis,
    b: usize,
    seed: u64,
) -> Result<RobustnessReport> {
    check_b(b)?;
    let lambda = original.spectrum()?.as_slice().to_vec();
    let dec = original
        .decomposition
        .as_ref()
        .expect("decomposition exists when the spectrum does");
    let c_hat = lambda.iter().sum::<f64>() / lambda.len() as f64;
    let t_sb = h_sb(&lambda);
    let t_ar = h_ar(&lambda);
    let eq = Equalizer::new(dec, &lambda)?;
    let d = lambda.len();
    let start = [original.fit.theta_hat.clone()];
    let draws: Vec<Option<(f64, f64)>> = bootstrap(data, b, seed, |x| {
        let (_, cov) = linalg::sample_covariance(x);
        let fit = estimate(model, &cov, x.nrows(), &start)
            .ok()
            .filter(|f| f.converged)?;
        let v = v_ml(&fit.implied.to_cov()).ok()?;
        let u = u_matrix(&v, &model.jacobian(&fit.theta_hat).ok()?).ok()?;
        let g = gamma_adf(x).ok()?;
        let base = eq.eigenvalues(u.as_matrix(), g.as_matrix()).ok()?;
        let ar = &base[..d];
        if !(ar[d - 1] > 0.0) {
            return None;
        }
        let sb: Vec<f64> = ar.iter().map(|v| v * c_hat).collect();
        Some((h_sb(&sb), h_ar(ar)))
    });
    let (p_sb, ok, failed) = exceedance(draws.iter().map(|x| x.map(|v| v.0)), t_sb);
    let (p_ar, _, _) = exceedance(draws.iter().map(|x| x.map(|v| v.1)), t_ar);
    if ok == 0 {
        return Err(Error::NumericalFailure(
            "every bootstrap resample failed".into(),
        ));
    }
    let rate = failed as f64 / b as f64;
    Ok(RobustnessReport {
        p_ar,
        p_sb,
        t_ar,
        t_sb,
        b,
        seed,
        failures: failed,
        warning: (rate > FAILURE_WARNING_RATE)
            .then(|| format!("{failed} of {b} resamples failed; result is unreliable")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymcov::{decompose, GammaMatrix, UMatrix};
    use crate::datagen::mvn_sample;
    use approx::assert_relative_eq;

    #[test]
    fn h_examples() {
        assert_eq!(h_ar(&[1.0, 1.0, 1.0]), 0.0);
        assert_eq!(h_sb(&[1.0, 1.0]), 0.0);
        assert_relative_eq!(
            h_ar(&[2.0, 1.0]),
            2.0 * 1.5f64.ln() - 2f64.ln(),
            epsilon = 1e-15
        );
        assert!((h_ar(&[2.0, 1.0]) - 0.117783).abs() < 1e-6);
        assert!((h_sb(&[4.0, 1.0]) - 0.446287).abs() < 1e-6);
        assert_relative_eq!(
            h_ar(&[6.0, 3.0, 1.5]),
            h_ar(&[2.0, 1.0, 0.5]),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            h_sb(&[6.0, 3.0, 1.5]),
            h_sb(&[2.0, 1.0, 0.5]),
            epsilon = 1e-14
        );
    }

    #[test]
    fn ks_distance_examples() {
        assert_eq!(ks_distance_uniform(&[0.5; 10]), 0.5);
        assert_relative_eq!(ks_distance_uniform(&[0.25, 0.75]), 0.25, epsilon = 1e-15);
        assert_eq!(ks_distance_uniform(&[0.0]), 1.0);
    }

    #[test]
    fn transform_identities() {
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.2, 0.5, 1.0, 0.1, 0.2, 0.1, 3.0]);
        let x = mvn_sample(&sigma, 200, 4).unwrap();
        let (_, s) = linalg::sample_covariance(&x);
        assert_relative_eq!(
            bollen_stine_transform(&x, &s).unwrap(),
            x.clone(),
            epsilon = 1e-10
        );
        let w = bollen_stine_transform(&x, &DMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!(
            linalg::sample_covariance(&w).1,
            DMatrix::identity(3, 3),
            epsilon = 1e-10
        );
        let t = bollen_stine_transform(&x, &sigma).unwrap();
        assert_relative_eq!(linalg::sample_covariance(&t).1, sigma, max_relative = 1e-8);
    }

    #[test]
    fn transformed_sample_fits_exactly() {
        let m = ModelSpec::fixture("one_factor_5").unwrap();
        let sigma = m.implied_cov(&m.start_values()).unwrap();
        let x = crate::datagen::vale_maurelli_sample(&sigma, 1.0, 7.0, 300, 8).unwrap();
        let a = analyze(&m, &x, &[]).unwrap();
        assert!(a.fit.t_stat > 0.0);
        let t = bollen_stine_transform(&x, &a.fit.implied.to_cov()).unwrap();
        let refit = analyze(&m, &t, &[]).unwrap();
        assert!(refit.fit.t_stat < 1e-8, "{}", refit.fit.t_stat);
    }

    fn random_psd_pair(p: usize, rank: usize, seed: u64) -> (UMatrix, GammaMatrix) {
        let a = mvn_sample(&DMatrix::identity(p, p), rank, seed).unwrap();
        let u = a.transpose() * a;
        let g = mvn_sample(&DMatrix::identity(p, p), 2 * p, seed + 1).unwrap();
        let g = g.transpose() * g / (2 * p) as f64;
        (
            crate::asymcov::UMatrix::from_parts(u, rank),
            GammaMatrix::new(g).unwrap(),
        )
    }

    #[test]
    fn sandwich_equalizes_spectrum() {
        for seed in 0..10u64 {
            let (u, g) = random_psd_pair(6, 3, seed * 7);
            let dec = decompose(&u, &g).unwrap();
            let lam = MixtureWeights::new(dec.values[..3].to_vec()).unwrap();
            let c = lam.mean();
            let a = a_matrix(&dec.vectors, &lam, c).unwrap();
            let w = &a * u.as_matrix() * g.as_matrix() * &a;
            let ev: Vec<f64> = linalg::general_eigenvalues(&w)
                .unwrap()
                .iter()
                .map(|z| z.0)
                .collect();
            for &v in &ev[..3] {
                assert!((v - c).abs() <= 1e-8 * c, "{v} vs {c}");
            }
            assert!(ev[3].abs() <= 1e-8 * c);
        }
    }

    #[test]
    fn reduced_eigenvalues_match_sandwich() {
        let (u, g) = random_psd_pair(6, 4, 3);
        let dec = decompose(&u, &g).unwrap();
        let lam = dec.values[..4].to_vec();
        let a = a_matrix(
            &dec.vectors,
            &MixtureWeights::new(lam.clone()).unwrap(),
            1.0,
        )
        .unwrap();
        let (u2, g2) = random_psd_pair(6, 4, 40);
        let w = &a * u2.as_matrix() * g2.as_matrix() * &a;
        let full = linalg::general_eigenvalues(&w).unwrap();
        let top = full.iter().map(|z| z.0.abs()).fold(0.0, f64::max);
        let nonzero: Vec<f64> = full
            .iter()
            .map(|z| z.0)
            .filter(|v| v.abs() > 1e-9 * top)
            .collect();
        let reduced = Equalizer::new(&dec, &lam)
            .unwrap()
            .eigenvalues(u2.as_matrix(), g2.as_matrix())
            .unwrap();
        assert_eq!(nonzero.len(), 4);
        for k in 0..4 {
            assert_relative_eq!(reduced[k], nonzero[k], max_relative = 1e-8);
        }
    }

    #[test]
    fn d_one_scaling() {
        let (u, g) = random_psd_pair(3, 1, 9);
        let dec = decompose(&u, &g).unwrap();
        let l1 = dec.values[0];
        let a = a_matrix(&dec.vectors, &MixtureWeights::new(vec![l1]).unwrap(), 2.0).unwrap();
        let v = dec.vectors.column(0);
        assert_relative_eq!(&a * v, v * (2.0 / l1).sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn bootstrap_is_deterministic_and_order_free() {
        let m = ModelSpec::fixture("one_factor_5").unwrap();
        let sigma = m.implied_cov(&m.start_values()).unwrap();
        let x = mvn_sample(&sigma, 120, 5).unwrap();
        let a = bollen_stine_pvalue(&x, &m, 20, 3).unwrap();
        let rev = DMatrix::from_fn(120, 5, |i, j| x[(119 - i, j)]);
        assert_eq!(a, bollen_stine_pvalue(&rev, &m, 20, 3).unwrap());
        assert_eq!(a, bollen_stine_pvalue(&x, &m, 20, 3).unwrap());
        let r1 = robustness_tests(&x, &m, 10, 4).unwrap();
        assert_eq!(r1, robustness_tests(&rev, &m, 10, 4).unwrap());
        assert!((0.0..=1.0).contains(&r1.p_ar) && (0.0..=1.0).contains(&r1.p_sb));
    }

    #[test]
    fn single_candidate_is_chosen() {
        let m = ModelSpec::fixture("one_factor_5").unwrap();
        let sigma = m.implied_cov(&m.start_values()).unwrap();
        let x = mvn_sample(&sigma, 150, 6).unwrap();
        let r = select(&x, &m, &[Method::Sb], 10, 1).unwrap();
        assert_eq!(r.chosen, Method::Sb);
        assert_eq!(r.distances.len(), 1);
        let r = select(&x, &m, &[Method::Full, Method::Half, Method::Sb], 10, 1).unwrap();
        assert_eq!(r.distances.len(), 3);
        let min = r.distances.values().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(r.distances[&r.chosen.to_string()], min);
    }

    #[test]
    fn ties_prefer_simpler_methods() {
        let m = ModelSpec::fixture("one_factor_5").unwrap();
        let sigma = m.implied_cov(&m.start_values()).unwrap();
        let x = mvn_sample(&sigma, 100, 2).unwrap();
        let original = analyze(&m, &x, &[]).unwrap();
        let draws = vec![
            ResampleDraw {
                t_stat: Some(1.0),
                pvalues: vec![Some(0.3), Some(0.3), Some(0.3)],
            };
            4
        ];
        let cands = [Method::Full, Method::Half, Method::Sb];
        assert_eq!(
            selection_report(&cands, &draws, 0, original.dof, |m| original.pvalue(m))
                .unwrap()
                .chosen,
            Method::Sb
        );
        let cands = [Method::Full, Method::Half];
        assert_eq!(
            selection_report(&cands, &draws, 0, original.dof, |m| original.pvalue(m))
                .unwrap()
                .chosen,
            Method::Half
        );
    }
}
