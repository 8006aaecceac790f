//! The per-sample pipeline shared by every test: fit, `Gamma`, `U` and the
//! eigenvalues of `U Gamma`.

use nalgebra::DMatrix;

use crate::asymcov::{
    self, decompose, gamma_adf, spectrum_from_decomposition, u_diff, u_matrix, v_ml, Decomposition,
    EigenSpectrum, GammaMatrix, UMatrix,
};
use crate::error::{Error, Result};
use crate::fit::{estimate, FitResult};
use crate::linalg;
use crate::model::{ModelSpec, ParamVector};
use crate::pvalue::{analytic_pvalue, diff_test, Method, PValueReport};

/// Rejects samples that cannot support a covariance analysis.
pub fn check_data(data: &DMatrix<f64>) -> Result<()> {
    if data.nrows() < 2 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 observations, got {}",
            data.nrows()
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "data contains non-finite values".into(),
        ));
    }
    for j in 0..data.ncols() {
        let col = data.column(j);
        if col.iter().all(|&x| x == col[0]) {
            return Err(Error::DegenerateData(format!(
                "column {} is constant",
                j + 1
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub fit: FitResult,
    pub dof: usize,
    pub gamma: GammaMatrix,
    pub u: UMatrix,
    /// `tr(U Gamma)` and `tr((U Gamma)^2)`.
    pub traces: (f64, f64),
    /// Absent for saturated models.
    pub decomposition: Option<Decomposition>,
    pub spectrum: Option<EigenSpectrum>,
    pub warnings: Vec<String>,
}

/// Relative violations of `sum lambda = tr(U Gamma)` and
/// `sum lambda^2 = tr((U Gamma)^2)` above this are errors.
const TRACE_ERROR: f64 = 1e-4;
const TRACE_WARNING: f64 = 1e-8;

fn check_traces(spectrum: &EigenSpectrum, traces: (f64, f64)) -> Result<Vec<String>> {
    let w = &spectrum.weights;
    let mut warnings = Vec::new();
    for (label, got, want) in [
        ("sum", w.sum(), traces.0),
        ("sum of squares", w.sum_of_squares(), traces.1),
    ] {
        let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
        if rel > TRACE_ERROR {
            return Err(Error::NumericalFailure(format!(
                "eigenvalue {label} {got} disagrees with the trace {want}"
            )));
        }
        if rel > TRACE_WARNING {
            warnings.push(format!(
                "eigenvalue {label} deviates from the trace by {rel:.1e} (relative)"
            ));
        }
    }
    Ok(warnings)
}

/// Fits `model` to `data` (rows are observations, columns follow the
/// model's observed variables) and estimates the eigenvalues of `U Gamma`.
pub fn analyze(model: &ModelSpec, data: &DMatrix<f64>, starts: &[ParamVector]) -> Result<Analysis> {
    check_data(data)?;
    if data.ncols() != model.n_observed() {
        return Err(Error::InvalidInput(format!(
            "data has {} columns, model has {} observed variables",
            data.ncols(),
            model.n_observed()
        )));
    }
    let dof = model.dof()?;
    let (_, cov) = linalg::sample_covariance(data);
    let fit = estimate(model, &cov, data.nrows(), starts)?;
    let sigma = fit.implied.to_cov();
    let v = v_ml(&sigma)?;
    let delta = model.jacobian(&fit.theta_hat)?;
    let u = u_matrix(&v, &delta)?;
    let gamma = gamma_adf(data)?;
    let traces = asymcov::traces(&u, &gamma);
    let (decomposition, spectrum, warnings) = if dof == 0 {
        (None, None, vec![])
    } else {
        let dec = decompose(&u, &gamma)?;
        let spec = spectrum_from_decomposition(&dec, dof)?;
        let warnings = check_traces(&spec, traces)?;
        (Some(dec), Some(spec), warnings)
    };
    Ok(Analysis {
        fit,
        dof,
        gamma,
        u,
        traces,
        decomposition,
        spectrum,
        warnings,
    })
}

impl Analysis {
    pub fn spectrum(&self) -> Result<&EigenSpectrum> {
        self.spectrum
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("model has zero degrees of freedom".into()))
    }

    /// P-value of the goodness-of-fit statistic by an analytic method.
    pub fn pvalue(&self, method: &Method) -> Result<PValueReport> {
        let t = self.fit.t_stat;
        analytic_pvalue(method, self.spectrum()?, self.traces, t)
    }
}

/// Nested-model comparison. Both residual weight matrices are evaluated at
/// the constrained estimate so that they share one `V`.
#[derive(Debug, Clone)]
pub struct NestedAnalysis {
    pub parent: FitResult,
    pub nested: FitResult,
    pub m: usize,
    pub u_d: UMatrix,
    pub gamma: GammaMatrix,
}

pub fn analyze_nested(
    parent: &ModelSpec,
    nested: &ModelSpec,
    data: &DMatrix<f64>,
    nested_starts: &[ParamVector],
) -> Result<NestedAnalysis> {
    check_data(data)?;
    for m in [parent, nested] {
        if data.ncols() != m.n_observed() {
            return Err(Error::InvalidInput(format!(
                "data has {} columns, model '{}' has {} observed variables",
                data.ncols(),
                m.name(),
                m.n_observed()
            )));
        }
    }
    let (d_parent, d_nested) = (parent.dof()?, nested.dof()?);
    if d_nested < d_parent {
        return Err(Error::Inconsistent(format!(
            "nested model has fewer degrees of freedom ({d_nested}) than the parent ({d_parent})"
        )));
    }
    let (_, cov) = linalg::sample_covariance(data);
    let n = data.nrows();
    let nested_fit = estimate(nested, &cov, n, nested_starts)?;
    let embedded = nested.embed_params(&nested_fit.theta_hat, parent)?;
    let mut parent_starts = vec![embedded.clone()];
    if nested_starts.is_empty() {
        parent_starts.extend(crate::fit::default_starts(parent));
    }
    let parent_fit = estimate(parent, &cov, n, &parent_starts)?;

    let v = v_ml(&nested_fit.implied.to_cov())?;
    let u_nested = u_matrix(&v, &nested.jacobian(&nested_fit.theta_hat)?)?;
    let u_parent = u_matrix(&v, &parent.jacobian(&embedded)?)?;
    let u_d = u_diff(&u_nested, &u_parent)?;
    Ok(NestedAnalysis {
        parent: parent_fit,
        nested: nested_fit,
        m: d_nested - d_parent,
        u_d,
        gamma: gamma_adf(data)?,
    })
}

impl NestedAnalysis {
    /// `T_nested - T_parent`, floored at zero.
    pub fn statistic(&self) -> f64 {
        (self.nested.t_stat - self.parent.t_stat).max(0.0)
    }

    pub fn pvalue(&self, method: &Method) -> Result<PValueReport> {
        diff_test(
            &self.parent,
            &self.nested,
            &self.u_d,
            &self.gamma,
            self.m,
            method,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::mvn_sample;
    use approx::assert_relative_eq;

    #[test]
    fn constant_column_is_degenerate() {
        let mut x = mvn_sample(&DMatrix::identity(3, 3), 20, 1).unwrap();
        x.column_mut(1).fill(2.0);
        assert!(matches!(check_data(&x), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn normal_gamma_gives_unit_eigenvalues() {
        let m = ModelSpec::fixture("one_factor_5").unwrap();
        let theta = m.start_values();
        let sigma = m.implied_cov(&theta).unwrap();
        let v = v_ml(&sigma).unwrap();
        let u = u_matrix(&v, &m.jacobian(&theta).unwrap()).unwrap();
        let g = asymcov::gamma_normal(&sigma);
        let spec = asymcov::lambda_hat(&u, &g, 5).unwrap();
        for &l in spec.as_slice() {
            assert!((l - 1.0).abs() < 1e-6, "{l}");
        }
        // U Delta = 0 and rank(U) = p* - q.
        let ud = u.as_matrix() * m.jacobian(&theta).unwrap();
        assert!(ud.amax() < 1e-8);
        assert_eq!(linalg::numerical_rank(u.as_matrix(), 1e-8), 5);
    }

    #[test]
    fn trace_identities() {
        let m = ModelSpec::fixture("one_factor_5").unwrap();
        let sigma = m.implied_cov(&m.start_values()).unwrap();
        let x = crate::datagen::vale_maurelli_sample(&sigma, 1.0, 7.0, 400, 5).unwrap();
        let a = analyze(&m, &x, &[]).unwrap();
        let w = &a.spectrum().unwrap().weights;
        assert_relative_eq!(w.sum(), a.traces.0, max_relative = 1e-6);
        assert_relative_eq!(w.sum_of_squares(), a.traces.1, max_relative = 1e-6);
    }

    #[test]
    fn bollen_difference_rank() {
        let m1 = ModelSpec::fixture("bollen_m1").unwrap();
        let m0 = ModelSpec::fixture("bollen_m0").unwrap();
        let sigma = m1.implied_cov(&m1.start_values()).unwrap();
        let x = mvn_sample(&sigma, 500, 11).unwrap();
        let nested = analyze_nested(&m1, &m0, &x, &[]).unwrap();
        assert_eq!(nested.m, 11);
        assert_eq!(nested.u_d.rank(), 11);
        assert_eq!(linalg::numerical_rank(nested.u_d.as_matrix(), 1e-6), 11);
        let full = nested.pvalue(&Method::Full).unwrap();
        assert!((0.0..=1.0).contains(&full.p));
        assert!(nested.nested.t_stat >= nested.parent.t_stat - 1e-8 * 500.0);
    }

    #[test]
    fn identical_models_give_unit_pvalue() {
        let m = ModelSpec::fixture("one_factor_5").unwrap();
        let sigma = m.implied_cov(&m.start_values()).unwrap();
        let x = mvn_sample(&sigma, 200, 2).unwrap();
        let nested = analyze_nested(&m, &m, &x, &[]).unwrap();
        assert_eq!(nested.m, 0);
        assert!(nested.u_d.as_matrix().amax() < 1e-12);
        assert_eq!(nested.pvalue(&Method::Full).unwrap().p, 1.0);
    }
}
