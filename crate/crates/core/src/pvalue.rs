//! P-value approximations for statistics whose limit law is a weighted sum
//! of chi-square(1) variables, and the nested-model difference test.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::asymcov::{lambda_hat, EigenSpectrum, GammaMatrix, SpectrumSource, UMatrix};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::wchisq::{chi_square_survival, survival, MixtureWeights};

/// Cut-off indices (1-based) starting each new block of pooled eigenvalues.
///
/// Block `l` covers indices `tau_{l-1} ..= tau_l - 1` with `tau_0 = 1`; the
/// last block runs through `d`. No cut-offs means a single block.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupingScheme {
    cutoffs: Vec<usize>,
}

impl GroupingScheme {
    pub fn new(cutoffs: Vec<usize>) -> Result<Self> {
        if cutoffs.first().is_some_and(|&c| c < 2) {
            return Err(Error::InvalidInput("cut-offs must exceed 1".into()));
        }
        if cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "cut-offs must be strictly increasing, got {cutoffs:?}"
            )));
        }
        Ok(Self { cutoffs })
    }

    /// One block: the scaled statistic.
    pub fn single() -> Self {
        Self::default()
    }

    /// Every eigenvalue in its own block.
    pub fn singletons(d: usize) -> Self {
        Self {
            cutoffs: (2..=d).collect(),
        }
    }

    /// Two blocks, indices `1..=ceil(d/2)` and the rest.
    pub fn half(d: usize) -> Self {
        let cut = d.div_ceil(2) + 1;
        Self {
            cutoffs: if cut <= d { vec![cut] } else { vec![] },
        }
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }

    /// Zero-based half-open index ranges of the blocks for dimension `d`.
    pub fn blocks(&self, d: usize) -> Result<Vec<std::ops::Range<usize>>> {
        if let Some(&last) = self.cutoffs.last() {
            if last > d {
                return Err(Error::InvalidInput(format!(
                    "cut-off {last} exceeds the number of eigenvalues {d}"
                )));
            }
        }
        let mut starts = vec![0];
        starts.extend(self.cutoffs.iter().map(|c| c - 1));
        starts.push(d);
        Ok(starts.windows(2).map(|w| w[0]..w[1]).collect())
    }
}

/// Replaces each eigenvalue by the mean of its block.
pub fn pooled_weights(lambda: &EigenSpectrum, scheme: &GroupingScheme) -> Result<EigenSpectrum> {
    let w = lambda.as_slice();
    let mut out = Vec::with_capacity(w.len());
    for block in scheme.blocks(w.len())? {
        let mean = w[block.clone()].iter().sum::<f64>() / block.len() as f64;
        out.extend(std::iter::repeat_n(mean, block.len()));
    }
    Ok(EigenSpectrum {
        weights: MixtureWeights::new(out)?,
        source: SpectrumSource::Pooled,
        imag_residual: lambda.imag_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Method {
    Ntml,
    Full,
    Half,
    Grouped(GroupingScheme),
    Sb,
    Ss,
    Oracle,
    BollenStine,
    Selected,
}

impl Method {
    /// Number of free pooling groups; orders candidates for tie-breaking.
    pub fn complexity(&self, d: usize) -> usize {
        match self {
            Method::Ntml => 0,
            Method::Sb | Method::Ss => 1,
            Method::Half => GroupingScheme::half(d).cutoffs.len() + 1,
            Method::Grouped(g) => g.cutoffs.len() + 1,
            Method::Full => d.max(1),
            Method::Oracle | Method::BollenStine | Method::Selected => usize::MAX,
        }
    }

    /// Whether the p-value follows from one eigen-spectrum and statistic.
    pub fn is_analytic(&self) -> bool {
        !matches!(
            self,
            Method::Oracle | Method::BollenStine | Method::Selected
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Ntml => f.write_str("ntml"),
            Method::Full => f.write_str("full"),
            Method::Half => f.write_str("half"),
            Method::Grouped(g) => {
                let cuts: Vec<String> = g.cutoffs.iter().map(|c| c.to_string()).collect();
                write!(f, "grouped:{}", cuts.join(","))
            }
            Method::Sb => f.write_str("sb"),
            Method::Ss => f.write_str("ss"),
            Method::Oracle => f.write_str("oracle"),
            Method::BollenStine => f.write_str("bollen_stine"),
            Method::Selected => f.write_str("selected"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("grouped") {
            let rest = rest.strip_prefix(':').unwrap_or(rest);
            let cutoffs = rest
                .split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(|x| {
                    x.parse::<usize>()
                        .map_err(|_| Error::InvalidInput(format!("bad cut-off '{x}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(Method::Grouped(GroupingScheme::new(cutoffs)?));
        }
        Ok(match s {
            "ntml" => Method::Ntml,
            "full" | "efull" => Method::Full,
            "half" | "ehalf" => Method::Half,
            "sb" => Method::Sb,
            "ss" => Method::Ss,
            "oracle" => Method::Oracle,
            "bollen_stine" | "bost" => Method::BollenStine,
            "selected" | "select" | "sel" => Method::Selected,
            other => return Err(Error::InvalidInput(format!("unknown method '{other}'"))),
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated method list; `grouped:` cut-offs are separated
/// by `/` or `;` inside such a list.
pub fn parse_method_list(list: &str) -> Result<Vec<Method>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.replace(['/', ';'], ",").parse())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueReport {
    pub method: Method,
    pub p: f64,
    pub weights_used: Option<Vec<f64>>,
    pub t_stat: f64,
    pub diagnostics: BTreeMap<String, Value>,
}

impl PValueReport {
    fn new(method: Method, p: f64, weights: Option<&MixtureWeights>, t: f64) -> Self {
        Self {
            method,
            p,
            weights_used: weights.map(|w| w.as_slice().to_vec()),
            t_stat: t,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: Value) -> Self {
        self.diagnostics.insert(key.to_string(), value);
        self
    }
}

pub fn p_full(lambda: &EigenSpectrum, t: f64) -> Result<PValueReport> {
    let p = survival(&lambda.weights, t)?;
    Ok(PValueReport::new(Method::Full, p, Some(&lambda.weights), t))
}

pub fn p_grouped(lambda: &EigenSpectrum, scheme: &GroupingScheme, t: f64) -> Result<PValueReport> {
    let pooled = pooled_weights(lambda, scheme)?;
    let p = survival(&pooled.weights, t)?;
    Ok(PValueReport::new(
        Method::Grouped(scheme.clone()),
        p,
        Some(&pooled.weights),
        t,
    ))
}

pub fn p_half(lambda: &EigenSpectrum, t: f64) -> Result<PValueReport> {
    let mut r = p_grouped(lambda, &GroupingScheme::half(lambda.len()), t)?;
    r.method = Method::Half;
    Ok(r)
}

/// Scaled statistic: all weights replaced by their mean `c`. The mixture
/// route and the chi-square route `P(chi2_d > t / c)` must agree.
pub fn p_sb(lambda: &EigenSpectrum, t: f64) -> Result<PValueReport> {
    let d = lambda.len();
    let c = lambda.weights.mean();
    let pooled = pooled_weights(lambda, &GroupingScheme::single())?;
    let p = survival(&pooled.weights, t)?;
    let p_chi = chi_square_survival(d as f64, t / c);
    if (p - p_chi).abs() > 1e-9 {
        return Err(Error::NumericalFailure(format!(
            "scaled p-value routes disagree: {p:e} vs {p_chi:e}"
        )));
    }
    Ok(PValueReport::new(Method::Sb, p, Some(&pooled.weights), t)
        .with("c_hat", json!(c))
        .with("t_scaled", json!(t / c))
        .with("p_chi_square", json!(p_chi)))
}

/// Scale and shift of the mean-and-variance adjusted statistic given
/// `tr(U Gamma)` and `tr((U Gamma)^2)`.
pub fn ss_coefficients(tr1: f64, tr2: f64, d: usize) -> Result<(f64, f64)> {
    if !(tr1 > 0.0 && tr2 > 0.0) {
        return Err(Error::NumericalFailure(format!(
            "traces must be positive, got {tr1:e} and {tr2:e}"
        )));
    }
    let d = d as f64;
    Ok(((d / tr2).sqrt(), d - (d * tr1 * tr1 / tr2).sqrt()))
}

pub fn p_ss_from_traces(tr1: f64, tr2: f64, t: f64, d: usize) -> Result<PValueReport> {
    let (scale, shift) = ss_coefficients(tr1, tr2, d)?;
    let t_ss = scale * t + shift;
    let p = chi_square_survival(d as f64, t_ss);
    Ok(PValueReport::new(Method::Ss, p, None, t)
        .with("scale", json!(scale))
        .with("shift", json!(shift))
        .with("t_ss", json!(t_ss))
        .with("trace_1", json!(tr1))
        .with("trace_2", json!(tr2)))
}

pub fn p_ss(u: &UMatrix, gamma: &GammaMatrix, t: f64, d: usize) -> Result<PValueReport> {
    let (tr1, tr2) = crate::asymcov::traces(u, gamma);
    p_ss_from_traces(tr1, tr2, t, d)
}

pub fn p_oracle(lambda: &MixtureWeights, t: f64) -> Result<PValueReport> {
    let p = survival(lambda, t)?;
    Ok(PValueReport::new(Method::Oracle, p, Some(lambda), t))
}

/// Reference chi-square(d) p-value of the unscaled statistic.
pub fn p_ntml(t: f64, d: usize) -> Result<PValueReport> {
    if d == 0 {
        return Err(Error::InvalidInput("zero degrees of freedom".into()));
    }
    Ok(PValueReport::new(
        Method::Ntml,
        chi_square_survival(d as f64, t),
        None,
        t,
    ))
}

/// Any method computable from the spectrum and the two traces of `U Gamma`.
pub fn analytic_pvalue(
    method: &Method,
    lambda: &EigenSpectrum,
    traces: (f64, f64),
    t: f64,
) -> Result<PValueReport> {
    match method {
        Method::Ntml => p_ntml(t, lambda.len()),
        Method::Full => p_full(lambda, t),
        Method::Half => p_half(lambda, t),
        Method::Grouped(g) => p_grouped(lambda, g, t),
        Method::Sb => p_sb(lambda, t),
        Method::Ss => p_ss_from_traces(traces.0, traces.1, t, lambda.len()),
        other => Err(Error::InvalidInput(format!(
            "method '{other}' needs more than an eigen-spectrum"
        ))),
    }
}

/// Difference test for nested models: the statistic `T_nested - T_parent`
/// is referred to the mixture with the `m` nonzero eigenvalues of
/// `U_d Gamma`.
pub fn diff_test(
    parent: &FitResult,
    nested: &FitResult,
    u_d: &UMatrix,
    gamma: &GammaMatrix,
    m: usize,
    method: &Method,
) -> Result<PValueReport> {
    if parent.n != nested.n {
        return Err(Error::Inconsistent(format!(
            "fits use different sample sizes {} and {}",
            parent.n, nested.n
        )));
    }
    let diff = nested.t_stat - parent.t_stat;
    if diff < -1e-8 * parent.n as f64 {
        return Err(Error::Inconsistent(format!(
            "nested statistic {} is below parent statistic {}",
            nested.t_stat, parent.t_stat
        )));
    }
    let diff = diff.max(0.0);
    if m == 0 {
        return Ok(PValueReport::new(method.clone(), 1.0, None, diff).with("m", json!(0)));
    }
    let alpha = lambda_hat(u_d, gamma, m)?;
    let traces = (alpha.weights.sum(), alpha.weights.sum_of_squares());
    Ok(analytic_pvalue(method, &alpha, traces, diff)?.with("m", json!(m)))
}
