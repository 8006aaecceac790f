//! Monte Carlo studies of rejection rates under the null hypothesis.
//!
//! Every replication draws its own sample from a seed derived from the study
//! seed, the cell index and the replication index, so results do not depend
//! on the number of worker threads.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, analyze_nested};
use crate::asymcov::{gamma_adf, lambda_hat, u_diff, u_matrix, v_ml};
use crate::datagen::{fleishman_coeffs, intermediate_matrix, vale_maurelli_sample};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::pvalue::{p_oracle, Method, PValueReport};
use crate::resample::{
    bollen_stine_draws, bollen_stine_report, bollen_stine_transform, canonical_order, check_b,
    check_candidates, nested_bollen_stine_draws, robustness_from_analysis, selection_report,
    ResampleDraw,
};
use crate::seeding::derive_seed;
use crate::wchisq::MixtureWeights;

const ORACLE_STREAM: u64 = 0x6f72_6163_6c65;
const BOOTSTRAP_STREAM: u64 = 0x626f_6f74;
const ROBUSTNESS_STREAM: u64 = 0x726f_6275;
const DEFAULT_ORACLE_DRAWS: usize = 200_000;

fn default_b() -> usize {
    300
}

fn default_alpha() -> f64 {
    0.05
}

/// Marginal shape of the generated data. Zero skewness and excess kurtosis
/// give multivariate normal data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Distribution {
    pub name: String,
    #[serde(default)]
    pub skew: f64,
    #[serde(default)]
    pub exkurt: f64,
    /// Population eigenvalues for the `oracle` method. Estimated from a large
    /// sample when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_weights: Option<Vec<f64>>,
}

impl Distribution {
    pub fn normal() -> Self {
        Self {
            name: "normal".into(),
            skew: 0.0,
            exkurt: 0.0,
            oracle_weights: None,
        }
    }

    pub fn nonnormal(name: &str, skew: f64, exkurt: f64) -> Self {
        Self {
            name: name.into(),
            skew,
            exkurt,
            oracle_weights: None,
        }
    }

    pub fn is_normal(&self) -> bool {
        self.skew == 0.0 && self.exkurt == 0.0
    }
}

/// Study definition. Data are generated from the population implied by the
/// start values of `nested_model` when present, otherwise of `model`.
/// With a nested model every method tests the difference statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Study {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nested_model: Option<String>,
    pub distributions: Vec<Distribution>,
    pub sample_sizes: Vec<usize>,
    pub methods: Vec<Method>,
    /// Candidates for the `selected` method.
    #[serde(default)]
    pub candidates: Vec<Method>,
    pub replications: usize,
    #[serde(rename = "B", default = "default_b")]
    pub b: usize,
    pub seed: u64,
    /// Also run both robustness tests on every replication.
    #[serde(default)]
    pub robustness: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_draws: Option<usize>,
}

impl Study {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Column identifiers, one per method, followed by the robustness tests.
    pub fn test_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.methods.iter().map(|m| m.to_string()).collect();
        if self.robustness {
            ids.push("ar_test".into());
            ids.push("sb_test".into());
        }
        ids
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.into()));
        if self.distributions.is_empty() || self.sample_sizes.is_empty() || self.methods.is_empty()
        {
            return bad("study needs at least one distribution, sample size and method");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.sample_sizes.iter().any(|&n| n < 2) {
            return bad("sample sizes must be at least 2");
        }
        let needs_b = self.robustness
            || self
                .methods
                .iter()
                .any(|m| matches!(m, Method::BollenStine | Method::Selected));
        if needs_b {
            check_b(self.b)?;
        }
        if self.methods.contains(&Method::Selected) {
            check_candidates(&self.candidates)?;
        }
        if self.robustness && self.nested_model.is_some() {
            return bad("robustness tests apply to a single model, not a nested pair");
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in self.test_ids() {
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidInput(format!("method '{id}' listed twice")));
            }
        }
        Ok(())
    }
}

/// One row of the replication table.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub cell: usize,
    pub distribution: String,
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub t_stat: Option<f64>,
    /// Aligned with [`Study::test_ids`].
    pub pvalues: Vec<Option<f64>>,
    pub selected: Option<Method>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rate {
    pub rate: f64,
    /// Binomial standard error `sqrt(rate (1 - rate) / count)`.
    pub se: f64,
    pub rejections: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: usize,
    pub distribution: String,
    pub n: usize,
    pub replications: usize,
    pub failed: usize,
    pub rates: BTreeMap<String, Rate>,
    /// Share of replications in which each candidate was selected.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub selection: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub config: Study,
    pub dof: usize,
    /// Population eigenvalues used by the `oracle` method, per distribution.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub oracle_weights: BTreeMap<String, Vec<f64>>,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub study: Study,
    pub rows: Vec<Replication>,
    pub summary: Summary,
}

struct Setup {
    model: ModelSpec,
    nested: Option<ModelSpec>,
    sigma: DMatrix<f64>,
    dof: usize,
    ids: Vec<String>,
    oracle: Vec<Option<MixtureWeights>>,
}

pub fn run_study(study: &Study) -> Result<StudyResult> {
    study.validate()?;
    let model = ModelSpec::load(&study.model)?;
    let nested = study
        .nested_model
        .as_deref()
        .map(ModelSpec::load)
        .transpose()?;
    let population = nested.as_ref().unwrap_or(&model);
    let sigma = population.implied_cov(&population.start_values())?;
    let dof = match &nested {
        Some(m0) => {
            let (d1, d0) = (model.dof()?, m0.dof()?);
            d0.checked_sub(d1).ok_or_else(|| {
                Error::Inconsistent(
                    "nested model has fewer degrees of freedom than the parent".into(),
                )
            })?
        }
        None => model.dof()?,
    };
    for dist in &study.distributions {
        let coeffs = fleishman_coeffs(dist.skew, dist.exkurt)?;
        intermediate_matrix(&sigma, &coeffs)?;
    }
    let oracle = if study.methods.contains(&Method::Oracle) {
        study
            .distributions
            .iter()
            .enumerate()
            .map(|(k, dist)| oracle_weights(study, k, dist, &model, nested.as_ref(), dof).map(Some))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; study.distributions.len()]
    };
    let setup = Setup {
        model,
        nested,
        sigma,
        dof,
        ids: study.test_ids(),
        oracle,
    };

    let mut jobs = Vec::new();
    for (k, dist) in study.distributions.iter().enumerate() {
        for (j, &n) in study.sample_sizes.iter().enumerate() {
            let cell = k * study.sample_sizes.len() + j;
            for r in 0..study.replications {
                jobs.push((cell, k, dist, n, r));
            }
        }
    }
    let rows: Vec<Replication> = jobs
        .into_par_iter()
        .map(|(cell, k, dist, n, r)| {
            let seed = derive_seed(derive_seed(study.seed, cell as u64), r as u64);
            let mut row = Replication {
                cell,
                distribution: dist.name.clone(),
                n,
                replication: r,
                seed,
                t_stat: None,
                pvalues: vec![None; setup.ids.len()],
                selected: None,
                error: None,
            };
            if let Err(e) = replicate(study, &setup, k, dist, n, seed, &mut row) {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect();

    let summary = summarize(study, &setup, &rows);
    Ok(StudyResult {
        study: study.clone(),
        rows,
        summary,
    })
}

/// Population eigenvalues of `U Gamma`: `U` at the population parameters
/// and `Gamma` from one large sample.
fn oracle_weights(
    study: &Study,
    k: usize,
    dist: &Distribution,
    model: &ModelSpec,
    nested: Option<&ModelSpec>,
    dof: usize,
) -> Result<MixtureWeights> {
    if let Some(w) = &dist.oracle_weights {
        if w.len() != dof {
            return Err(Error::InvalidInput(format!(
                "distribution '{}' lists {} oracle weights, expected {dof}",
                dist.name,
                w.len()
            )));
        }
        return MixtureWeights::new(w.clone());
    }
    if dist.is_normal() {
        return MixtureWeights::equal(dof, 1.0);
    }
    let population = nested.unwrap_or(model);
    let theta = population.start_values();
    let sigma = population.implied_cov(&theta)?;
    let draws = study.oracle_draws.unwrap_or(DEFAULT_ORACLE_DRAWS);
    let seed = derive_seed(derive_seed(study.seed, ORACLE_STREAM), k as u64);
    let x = vale_maurelli_sample(&sigma, dist.skew, dist.exkurt, draws, seed)?;
    let gamma = gamma_adf(&x)?;
    let v = v_ml(&sigma)?;
    let u = match nested {
        Some(m0) => {
            let embedded = m0.embed_params(&theta, model)?;
            let u0 = u_matrix(&v, &m0.jacobian(&theta)?)?;
            let u1 = u_matrix(&v, &model.jacobian(&embedded)?)?;
            u_diff(&u0, &u1)?
        }
        None => u_matrix(&v, &model.jacobian(&theta)?)?,
    };
    Ok(lambda_hat(&u, &gamma, dof)?.weights)
}

fn replicate(
    study: &Study,
    setup: &Setup,
    k: usize,
    dist: &Distribution,
    n: usize,
    seed: u64,
    row: &mut Replication,
) -> Result<()> {
    let data = canonical_order(&vale_maurelli_sample(
        &setup.sigma,
        dist.skew,
        dist.exkurt,
        n,
        seed,
    )?);
    let boot_seed = derive_seed(seed, BOOTSTRAP_STREAM);
    let needs_draws = study
        .methods
        .iter()
        .any(|m| matches!(m, Method::BollenStine | Method::Selected));
    let candidates: &[Method] = if study.methods.contains(&Method::Selected) {
        &study.candidates
    } else {
        &[]
    };

    match &setup.nested {
        Some(m0) => {
            let a = analyze_nested(&setup.model, m0, &data, &[])?;
            let t = a.statistic();
            row.t_stat = Some(t);
            let draws = if needs_draws {
                let target = m0.implied_cov(&a.nested.theta_hat)?;
                let transformed = bollen_stine_transform(&data, &target)?;
                nested_bollen_stine_draws(
                    &setup.model,
                    m0,
                    &a,
                    &transformed,
                    candidates,
                    study.b,
                    boot_seed,
                )
            } else {
                vec![]
            };
            let pvalue = |m: &Method| a.pvalue(m);
            fill_pvalues(study, setup, k, t, a.m, &draws, boot_seed, pvalue, row);
        }
        None => {
            let model = &setup.model;
            let a = analyze(model, &data, &[])?;
            let t = a.fit.t_stat;
            row.t_stat = Some(t);
            let draws = if needs_draws {
                let transformed = bollen_stine_transform(&data, &a.fit.implied.to_cov())?;
                bollen_stine_draws(model, &a, &transformed, candidates, study.b, boot_seed)
            } else {
                vec![]
            };
            let pvalue = |m: &Method| a.pvalue(m);
            fill_pvalues(study, setup, k, t, a.dof, &draws, boot_seed, pvalue, row);
            if study.robustness {
                let rob_seed = derive_seed(seed, ROBUSTNESS_STREAM);
                let r = robustness_from_analysis(model, &data, &a, study.b, rob_seed)?;
                let at = setup.ids.len() - 2;
                row.pvalues[at] = Some(r.p_ar);
                row.pvalues[at + 1] = Some(r.p_sb);
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fill_pvalues(
    study: &Study,
    setup: &Setup,
    k: usize,
    t: f64,
    dof: usize,
    draws: &[ResampleDraw],
    boot_seed: u64,
    pvalue: impl Fn(&Method) -> Result<PValueReport>,
    row: &mut Replication,
) {
    for (l, m) in study.methods.iter().enumerate() {
        let p = match m {
            Method::Oracle => setup.oracle[k]
                .as_ref()
                .and_then(|w| p_oracle(w, t).ok())
                .map(|r| r.p),
            Method::BollenStine => bollen_stine_report(t, draws, boot_seed).ok().map(|r| r.p),
            Method::Selected => {
                match selection_report(&study.candidates, draws, boot_seed, dof, &pvalue) {
                    Ok(s) => {
                        row.selected = Some(s.chosen);
                        s.p
                    }
                    Err(_) => None,
                }
            }
            _ => pvalue(m).ok().map(|r| r.p),
        };
        row.pvalues[l] = p;
    }
}

fn summarize(study: &Study, setup: &Setup, rows: &[Replication]) -> Summary {
    let mut cells = Vec::new();
    for (k, dist) in study.distributions.iter().enumerate() {
        for (j, &n) in study.sample_sizes.iter().enumerate() {
            let cell = k * study.sample_sizes.len() + j;
            let in_cell: Vec<&Replication> = rows.iter().filter(|r| r.cell == cell).collect();
            let mut rates = BTreeMap::new();
            for (l, id) in setup.ids.iter().enumerate() {
                let ps: Vec<f64> = in_cell.iter().filter_map(|r| r.pvalues[l]).collect();
                let rejections = ps.iter().filter(|&&p| p < study.alpha).count();
                let count = ps.len();
                let rate = if count == 0 {
                    f64::NAN
                } else {
                    rejections as f64 / count as f64
                };
                let se = (rate * (1.0 - rate) / count as f64).sqrt();
                rates.insert(
                    id.clone(),
                    Rate {
                        rate,
                        se,
                        rejections,
                        count,
                    },
                );
            }
            let mut selection = BTreeMap::new();
            if study.methods.contains(&Method::Selected) {
                let chosen: Vec<&Method> =
                    in_cell.iter().filter_map(|r| r.selected.as_ref()).collect();
                for c in &study.candidates {
                    let share = chosen.iter().filter(|&&m| m == c).count() as f64
                        / chosen.len().max(1) as f64;
                    selection.insert(c.to_string(), share);
                }
            }
            cells.push(CellSummary {
                cell,
                distribution: dist.name.clone(),
                n,
                replications: in_cell.len(),
                failed: in_cell.iter().filter(|r| r.error.is_some()).count(),
                rates,
                selection,
            });
        }
    }
    let oracle_weights = study
        .distributions
        .iter()
        .zip(&setup.oracle)
        .filter_map(|(d, w)| w.as_ref().map(|w| (d.name.clone(), w.as_slice().to_vec())))
        .collect();
    Summary {
        config: study.clone(),
        dof: setup.dof,
        oracle_weights,
        cells,
    }
}

impl StudyResult {
    /// Writes the replication table. Missing p-values are empty cells and
    /// `reject_*` columns hold 0 or 1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let ids = self.study.test_ids();
        let selected = self.study.methods.contains(&Method::Selected);
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["cell", "distribution", "n", "replication", "seed", "t_stat"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        header.extend(ids.iter().map(|id| format!("p_{id}")));
        header.extend(ids.iter().map(|id| format!("reject_{id}")));
        if selected {
            header.push("selected_method".into());
        }
        header.push("error".into());
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![
                r.cell.to_string(),
                r.distribution.clone(),
                r.n.to_string(),
                r.replication.to_string(),
                r.seed.to_string(),
                opt(r.t_stat),
            ];
            rec.extend(r.pvalues.iter().map(|&p| opt(p)));
            rec.extend(r.pvalues.iter().map(|p| match p {
                Some(p) => u8::from(*p < self.study.alpha).to_string(),
                None => String::new(),
            }));
            if selected {
                rec.push(
                    r.selected
                        .as_ref()
                        .map(|m| m.to_string())
                        .unwrap_or_default(),
                );
            }
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)? + "\n")
    }
}
