//! Normal-theory maximum likelihood estimation.

use nalgebra::{DMatrix, DVector};

use crate::asymcov::v_ml;
use crate::error::{Error, Result};
use crate::linalg::{self, vech_pairs};
use crate::model::{Constraint, CovMatrix, ModelSpec, MomentVector, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Euclidean norm of the gradient below which the fit counts as converged.
    pub grad_tol: f64,
    /// Relative decrease of the discrepancy regarded as stagnation.
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            rel_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    pub discrepancy: f64,
    pub t_stat: f64,
    pub implied: MomentVector,
    pub n: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// `F = log|Sigma| + tr(S Sigma^-1) - log|S| - p`.
pub fn ml_discrepancy(s: &MomentVector, sigma: &MomentVector) -> Result<f64> {
    if s.dim() != sigma.dim() {
        return Err(Error::InvalidInput(format!(
            "moment vectors of dimension {} and {}",
            s.dim(),
            sigma.dim()
        )));
    }
    let s = s.to_cov();
    let sigma = sigma.to_cov();
    let log_det_s = linalg::log_det_pd(&s).ok_or_else(|| {
        Error::InvalidMoments("sample covariance is not positive definite".into())
    })?;
    evaluate(&s, log_det_s, &sigma)
        .map(|(f, _)| f)
        .ok_or_else(|| Error::InvalidMoments("implied covariance is not positive definite".into()))
}

/// Discrepancy and `Sigma^-1`, or `None` outside the positive definite cone.
fn evaluate(s: &CovMatrix, log_det_s: f64, sigma: &CovMatrix) -> Option<(f64, DMatrix<f64>)> {
    let chol = sigma.clone().cholesky()?;
    let log_det = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|x| x.ln())
            .sum::<f64>();
    let w = chol.inverse();
    let f = log_det + linalg::trace_of_product(s, &w) - log_det_s - s.nrows() as f64;
    f.is_finite().then_some((f.max(0.0), w))
}

struct Objective<'a> {
    model: &'a ModelSpec,
    s: &'a CovMatrix,
    log_det_s: f64,
    pairs: Vec<(usize, usize)>,
}

impl<'a> Objective<'a> {
    fn new(model: &'a ModelSpec, s: &'a CovMatrix) -> Result<Self> {
        if s.nrows() != model.n_observed() || !s.is_square() {
            return Err(Error::InvalidInput(format!(
                "covariance is {}x{}, model has {} observed variables",
                s.nrows(),
                s.ncols(),
                model.n_observed()
            )));
        }
        let log_det_s = linalg::log_det_pd(s).ok_or_else(|| {
            Error::InvalidMoments("sample covariance is not positive definite".into())
        })?;
        Ok(Self {
            model,
            s,
            log_det_s,
            pairs: vech_pairs(s.nrows()),
        })
    }

    fn value(&self, theta: &ParamVector) -> Option<f64> {
        let sigma = self.model.implied_cov(theta).ok()?;
        evaluate(self.s, self.log_det_s, &sigma).map(|(f, _)| f)
    }

    /// Value and gradient `Delta' g`, where `g` holds the derivatives of `F`
    /// with respect to the distinct elements of `Sigma`.
    fn value_grad(&self, theta: &ParamVector) -> Option<(f64, DVector<f64>)> {
        let sigma = self.model.implied_cov(theta).ok()?;
        let (f, w) = evaluate(self.s, self.log_det_s, &sigma)?;
        let g = &w - &w * self.s * &w;
        let gv = DVector::from_iterator(
            self.pairs.len(),
            self.pairs
                .iter()
                .map(|&(i, j)| if i == j { g[(i, i)] } else { 2.0 * g[(i, j)] }),
        );
        let delta = self.model.jacobian_analytic(theta).ok()?;
        Some((f, delta.tr_mul(&gv)))
    }

    /// Inverse of the expected Hessian `2 Delta' V Delta`.
    fn inverse_information(&self, theta: &ParamVector) -> Option<DMatrix<f64>> {
        let sigma = self.model.implied_cov(theta).ok()?;
        let v = v_ml(&sigma).ok()?;
        let delta = self.model.jacobian_analytic(theta).ok()?;
        let info = delta.tr_mul(&(v * &delta)) * 2.0;
        info.cholesky().map(|c| c.inverse())
    }
}

/// Start values from the model file plus the same values inflated by 10%.
pub fn default_starts(model: &ModelSpec) -> Vec<ParamVector> {
    let base = model.start_values();
    let perturbed = base.0.map(|x| if x == 0.0 { 0.1 } else { 1.1 * x });
    vec![base, ParamVector(perturbed)]
}

/// Minimizes the discrepancy over the free parameters of `model`. With no
/// starts the defaults of [`default_starts`] are used; the best admissible
/// result is returned.
pub fn estimate(
    model: &ModelSpec,
    data_cov: &CovMatrix,
    n: usize,
    starts: &[ParamVector],
) -> Result<FitResult> {
    estimate_with(model, data_cov, n, starts, &FitOptions::default())
}

pub fn estimate_with(
    model: &ModelSpec,
    data_cov: &CovMatrix,
    n: usize,
    starts: &[ParamVector],
    options: &FitOptions,
) -> Result<FitResult> {
    let objective = Objective::new(model, data_cov)?;
    let defaults;
    let starts = if starts.is_empty() {
        defaults = default_starts(model);
        &defaults[..]
    } else {
        starts
    };
    let mut best: Option<FitResult> = None;
    for start in starts {
        if start.len() != model.n_params() {
            return Err(Error::InvalidInput(format!(
                "start has {} values, model has {} parameters",
                start.len(),
                model.n_params()
            )));
        }
        let Some(run) = minimize(&objective, start, options) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| run.f < b.discrepancy) {
            let implied = model.implied_moments(&run.x)?;
            best = Some(FitResult {
                t_stat: n as f64 * run.f,
                discrepancy: run.f,
                theta_hat: run.x,
                implied,
                n,
                converged: run.converged,
                gradient_norm: run.gnorm,
                iterations: run.iterations,
            });
        }
    }
    best.ok_or_else(|| {
        Error::Inadmissible("no start value gives a positive definite implied covariance".into())
    })
}

/// Fits `model` with `extra` constraints added. Starts are given in the
/// parametrization of `model`.
pub fn estimate_constrained(
    model: &ModelSpec,
    extra: &[Constraint],
    data_cov: &CovMatrix,
    n: usize,
    starts: &[ParamVector],
) -> Result<FitResult> {
    let nested = model.with_constraints(extra)?;
    let mapped = starts
        .iter()
        .map(|s| nested.params_from_labels(&model.label_values(s)))
        .collect::<Result<Vec<_>>>()?;
    estimate(&nested, data_cov, n, &mapped)
}

struct Run {
    x: ParamVector,
    f: f64,
    gnorm: f64,
    iterations: usize,
    converged: bool,
}

/// BFGS on the inverse Hessian, seeded with the inverse expected
/// information, with Armijo backtracking. Steps leaving the admissible
/// region are halved.
fn minimize(obj: &Objective, start: &ParamVector, opts: &FitOptions) -> Option<Run> {
    let q = start.len();
    let mut x = start.0.clone();
    let (mut f, mut g) = obj.value_grad(&ParamVector(x.clone()))?;
    if q == 0 {
        return Some(Run {
            x: ParamVector(x),
            f,
            gnorm: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let reset = |x: &DVector<f64>| {
        obj.inverse_information(&ParamVector(x.clone()))
            .unwrap_or_else(|| DMatrix::identity(q, q))
    };
    let mut h = reset(&x);
    let mut iterations = 0;
    let mut stalled = 0;
    while iterations < opts.max_iter && g.norm() > opts.grad_tol {
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h = DMatrix::identity(q, q);
            dir = -g.clone();
            slope = -g.norm_squared();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &dir * step;
            if let Some(fnew) = obj.value(&ParamVector(xn.clone())) {
                if fnew <= f + 1e-4 * step * slope {
                    accepted = Some(xn);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(xn) = accepted else { break };
        let (fnew, gnew) = obj.value_grad(&ParamVector(xn.clone()))?;
        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h += &s * s.transpose() * (rho * rho * yhy + rho);
        }
        let decrease = f - fnew;
        x = xn;
        f = fnew;
        g = gnew;
        iterations += 1;
        if decrease <= opts.rel_tol * f.abs().max(f64::MIN_POSITIVE) {
            // Restart from the expected-information metric before giving up.
            stalled += 1;
            if stalled > 4 {
                break;
            }
            h = reset(&x);
        } else {
            stalled = 0;
        }
    }
    let gnorm = g.norm();
    Some(Run {
        x: ParamVector(x),
        f,
        gnorm,
        iterations,
        converged: gnorm <= opts.grad_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mv(rows: usize, v: &[f64]) -> MomentVector {
        MomentVector::from_cov(&DMatrix::from_row_slice(rows, rows, v))
    }

    fn diagonal_model() -> ModelSpec {
        ModelSpec::from_json(
            r#"{"variables": ["x", "y"],
                "S": [{"row": "x", "col": "x", "param": "vx", "start": 1.0},
                      {"row": "y", "col": "y", "param": "vy", "start": 1.0}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn discrepancy_values() {
        let s = mv(2, &[2.0, 0.0, 0.0, 2.0]);
        let i = mv(2, &[1.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(
            ml_discrepancy(&s, &i).unwrap(),
            2.0 - 4f64.ln(),
            epsilon = 1e-14
        );
        assert_eq!(ml_discrepancy(&s, &s).unwrap(), 0.0);
        let bad = mv(2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            ml_discrepancy(&s, &bad),
            Err(Error::InvalidMoments(_))
        ));
        assert!(matches!(
            ml_discrepancy(&bad, &s),
            Err(Error::InvalidMoments(_))
        ));
    }

    #[test]
    fn diagonal_model_matches_profile() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 5.0]);
        let fit = estimate(&diagonal_model(), &s, 100, &[]).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.theta_hat.0[0], 2.0, epsilon = 1e-7);
        assert_relative_eq!(fit.theta_hat.0[1], 5.0, epsilon = 1e-7);
        let f = ml_discrepancy(&MomentVector::from_cov(&s), &mv(2, &[2.0, 0.0, 0.0, 5.0])).unwrap();
        assert_relative_eq!(fit.discrepancy, f, epsilon = 1e-12);
        assert_eq!(fit.t_stat, 100.0 * fit.discrepancy);
        // Grid search on the two variances finds nothing lower.
        let sv = MomentVector::from_cov(&s);
        for a in 0..=40 {
            for b in 0..=40 {
                let d = mv(
                    2,
                    &[1.5 + a as f64 * 0.025, 0.0, 0.0, 4.5 + b as f64 * 0.025],
                );
                assert!(ml_discrepancy(&sv, &d).unwrap() >= fit.discrepancy - 1e-12);
            }
        }
    }

    #[test]
    fn saturated_fit_is_exact() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.3, 0.4, 1.0, -0.2, 0.3, -0.2, 1.5]);
        let fit = estimate(&ModelSpec::saturated(&["a", "b", "c"]), &s, 50, &[]).unwrap();
        assert!(fit.converged);
        assert!(fit.t_stat < 1e-10);
        assert_relative_eq!(fit.implied.to_cov(), s, epsilon = 1e-7);
    }

    #[test]
    fn recovers_population_values() {
        for name in ["one_factor_3", "one_factor_5", "bollen_m1", "bollen_m0"] {
            let m = ModelSpec::fixture(name).unwrap();
            let theta0 = m.start_values();
            let sigma = m.implied_cov(&theta0).unwrap();
            let fit = estimate(&m, &sigma, 500, &[]).unwrap();
            assert!(fit.converged, "{name}");
            assert!(fit.t_stat <= 1e-8, "{name}: {}", fit.t_stat);
            assert_relative_eq!(fit.theta_hat.0, theta0.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn fixing_everything_skips_optimization() {
        let m = ModelSpec::fixture("one_factor_3").unwrap();
        let fixes: Vec<Constraint> = m
            .param_names()
            .iter()
            .map(|n| Constraint::fix(n, 0.7))
            .collect();
        let s = DMatrix::identity(3, 3);
        let fit = estimate_constrained(&m, &fixes, &s, 10, &[]).unwrap();
        assert_eq!(fit.theta_hat.len(), 0);
        assert_eq!(fit.iterations, 0);
        let sigma = m.implied_cov(&ParamVector::from_slice(&[0.7; 5])).unwrap();
        let f =
            ml_discrepancy(&MomentVector::from_cov(&s), &MomentVector::from_cov(&sigma)).unwrap();
        assert_relative_eq!(fit.discrepancy, f, epsilon = 1e-14);
    }

    #[test]
    fn empty_constraints_match_plain_fit() {
        let m = ModelSpec::fixture("one_factor_5").unwrap();
        let mut s = m.implied_cov(&m.start_values()).unwrap();
        s[(0, 1)] += 0.1;
        s[(1, 0)] += 0.1;
        let a = estimate(&m, &s, 100, &[]).unwrap();
        let b = estimate_constrained(&m, &[], &s, 100, &[]).unwrap();
        assert!((a.discrepancy - b.discrepancy).abs() <= 1e-10);
        assert_eq!(a, b);
    }

    #[test]
    fn nested_fit_is_not_better() {
        let m1 = ModelSpec::fixture("bollen_m1").unwrap();
        let m0 = ModelSpec::fixture("bollen_m0").unwrap();
        let mut theta = m1.start_values();
        for (k, v) in theta.0.iter_mut().enumerate() {
            *v *= 1.0 + 0.05 * ((k % 5) as f64 - 2.0);
        }
        let s = m1.implied_cov(&theta).unwrap();
        let n = 300;
        let f1 = estimate(&m1, &s, n, &[]).unwrap();
        let f0 = estimate(&m0, &s, n, &[]).unwrap();
        assert!(f1.converged && f0.converged);
        assert!(f1.t_stat < 1e-8);
        assert!(f0.t_stat >= f1.t_stat - 1e-8 * n as f64);
        assert!(f0.t_stat > 0.1);
    }

    #[test]
    fn deterministic() {
        let m = ModelSpec::fixture("bollen_m1").unwrap();
        let mut s = m.implied_cov(&m.start_values()).unwrap();
        s[(2, 5)] += 0.3;
        s[(5, 2)] += 0.3;
        let a = estimate(&m, &s, 75, &[]).unwrap();
        let b = estimate(&m, &s, 75, &[]).unwrap();
        assert_eq!(a, b);
    }

    fn pd_matrix(p: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-1.0f64..1.0, p * p).prop_map(move |v| {
            let b = DMatrix::from_vec(p, p, v);
            &b * b.transpose() + DMatrix::identity(p, p) * 0.1
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn discrepancy_is_nonnegative(s in pd_matrix(3), sigma in pd_matrix(3)) {
            let f = ml_discrepancy(&MomentVector::from_cov(&s), &MomentVector::from_cov(&sigma)).unwrap();
            prop_assert!(f >= 0.0);
        }
    }
}
