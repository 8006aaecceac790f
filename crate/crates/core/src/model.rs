//! Covariance structure models in RAM form.
//!
//! `Sigma(theta) = F (I - A)^-1 S (I - A)^-T F^T`, where `A` holds directed
//! paths (`A[i][j]` is the effect of variable `j` on variable `i`), `S` holds
//! (co)variances and `F` selects the observed variables. Matrix cells are
//! either fixed numbers or carry a parameter label; cells sharing a label are
//! equal. A model may carry extra equality / fixing constraints on labels,
//! which is how nested submodels are expressed.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, moment_count, vech, vech_pairs};

pub type CovMatrix = DMatrix<f64>;

/// Half-vectorized second moments (row-major lower triangle).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector(DVector<f64>);

impl MomentVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        linalg::dimension_of(values.len())?;
        Ok(Self(values))
    }

    pub fn from_cov(m: &CovMatrix) -> Self {
        Self(vech(m))
    }

    pub fn to_cov(&self) -> CovMatrix {
        linalg::devech(&self.0).expect("length validated on construction")
    }

    pub fn dim(&self) -> usize {
        linalg::dimension_of(self.0.len()).expect("length validated on construction")
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Free parameter values, ordered as [`ModelSpec::param_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub DVector<f64>);

impl ParamVector {
    pub fn from_slice(v: &[f64]) -> Self {
        Self(DVector::from_column_slice(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum VarRef {
    Name(String),
    Index(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum EntryValue {
    Fixed { fixed: f64 },
    Free { param: String, start: Option<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Entry {
    pub row: VarRef,
    pub col: VarRef,
    #[serde(flatten)]
    pub value: EntryValue,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Constraint {
    Equal { equal: [String; 2] },
    Fix { fix: String, value: f64 },
}

impl Constraint {
    pub fn equal(a: &str, b: &str) -> Self {
        Constraint::Equal {
            equal: [a.to_string(), b.to_string()],
        }
    }

    pub fn fix(label: &str, value: f64) -> Self {
        Constraint::Fix {
            fix: label.to_string(),
            value,
        }
    }
}

/// JSON representation of a model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelDocument {
    #[serde(default)]
    pub name: Option<String>,
    pub variables: Vec<String>,
    /// Observed subset of `variables`; all variables when absent.
    #[serde(default)]
    pub observed: Option<Vec<String>>,
    #[serde(rename = "A", default)]
    pub a: Vec<Entry>,
    #[serde(rename = "S", default)]
    pub s: Vec<Entry>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

// ---------------------------------------------------------------------------
// Validated model

#[derive(Debug, Clone, Copy, PartialEq)]
enum CellValue {
    Fixed(f64),
    Label(usize),
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    row: usize,
    col: usize,
    value: CellValue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binding {
    Free(usize),
    Fixed(f64),
}

/// Immutable, validated covariance structure model.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    document: ModelDocument,
    variables: Vec<String>,
    observed: Vec<usize>,
    a_cells: Vec<Cell>,
    s_cells: Vec<Cell>,
    labels: Vec<String>,
    label_starts: Vec<f64>,
    bindings: Vec<Binding>,
    param_names: Vec<String>,
    param_labels: Vec<Vec<usize>>,
}

const BOLLEN_M1: &str = include_str!("../fixtures/bollen_m1.json");
const BOLLEN_M0: &str = include_str!("../fixtures/bollen_m0.json");
const ONE_FACTOR_3: &str = include_str!("../fixtures/one_factor_3.json");
const ONE_FACTOR_5: &str = include_str!("../fixtures/one_factor_5.json");

/// Names of the bundled model fixtures.
pub const FIXTURES: [&str; 4] = ["bollen_m1", "bollen_m0", "one_factor_3", "one_factor_5"];

impl ModelSpec {
    pub fn from_document(document: ModelDocument) -> Result<Self> {
        let variables = document.variables.clone();
        if variables.is_empty() {
            return Err(Error::InvalidInput("model has no variables".into()));
        }
        let index: HashMap<&str, usize> = variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_str(), i))
            .collect();
        if index.len() != variables.len() {
            return Err(Error::InvalidInput("duplicate variable names".into()));
        }
        let resolve = |r: &VarRef| -> Result<usize> {
            match r {
                VarRef::Name(n) => index
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("unknown variable '{n}'"))),
                VarRef::Index(i) if *i < variables.len() => Ok(*i),
                VarRef::Index(i) => Err(Error::InvalidInput(format!(
                    "variable index {i} out of range"
                ))),
            }
        };
        let observed = match &document.observed {
            None => (0..variables.len()).collect(),
            Some(obs) => obs
                .iter()
                .map(|n| resolve(&VarRef::Name(n.clone())))
                .collect::<Result<Vec<_>>>()?,
        };
        if observed.is_empty() {
            return Err(Error::InvalidInput(
                "model has no observed variables".into(),
            ));
        }

        let mut labels: Vec<String> = Vec::new();
        let mut label_starts: Vec<f64> = Vec::new();
        let mut label_index: HashMap<String, usize> = HashMap::new();
        let mut cell_of = |e: &Entry, symmetric: bool| -> Result<Cell> {
            let mut row = resolve(&e.row)?;
            let mut col = resolve(&e.col)?;
            if symmetric && row < col {
                std::mem::swap(&mut row, &mut col);
            }
            let value = match &e.value {
                EntryValue::Fixed { fixed } => {
                    if !fixed.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "non-finite fixed value at ({row}, {col})"
                        )));
                    }
                    CellValue::Fixed(*fixed)
                }
                EntryValue::Free { param, start } => {
                    let k = match label_index.get(param) {
                        Some(&k) => k,
                        None => {
                            let k = labels.len();
                            labels.push(param.clone());
                            label_starts.push(start.unwrap_or(if symmetric && row == col {
                                1.0
                            } else {
                                0.0
                            }));
                            label_index.insert(param.clone(), k);
                            k
                        }
                    };
                    CellValue::Label(k)
                }
            };
            Ok(Cell { row, col, value })
        };
        let a_cells = document
            .a
            .iter()
            .map(|e| cell_of(e, false))
            .collect::<Result<Vec<_>>>()?;
        let s_cells = document
            .s
            .iter()
            .map(|e| cell_of(e, true))
            .collect::<Result<Vec<_>>>()?;

        for (set, what) in [(&a_cells, "A"), (&s_cells, "S")] {
            let mut seen = std::collections::HashSet::new();
            for c in set.iter() {
                if !seen.insert((c.row, c.col)) {
                    return Err(Error::InvalidInput(format!(
                        "duplicate {what} entry at ({}, {})",
                        variables[c.row], variables[c.col]
                    )));
                }
            }
        }
        if a_cells.iter().any(|c| c.row == c.col) {
            return Err(Error::InvalidInput("A must have a zero diagonal".into()));
        }

        let (bindings, param_names, param_labels) =
            resolve_constraints(&labels, &label_index, &document.constraints)?;

        Ok(Self {
            document,
            variables,
            observed,
            a_cells,
            s_cells,
            labels,
            label_starts,
            bindings,
            param_names,
            param_labels,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        Self::from_document(doc)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    /// One of the bundled models (see [`FIXTURES`]).
    pub fn fixture(name: &str) -> Result<Self> {
        let text = match name {
            "bollen_m1" => BOLLEN_M1,
            "bollen_m0" => BOLLEN_M0,
            "one_factor_3" => ONE_FACTOR_3,
            "one_factor_5" => ONE_FACTOR_5,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown model fixture '{other}'"
                )))
            }
        };
        Self::from_json(text)
    }

    /// Loads `spec` from a file, falling back to a bundled fixture name.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.exists() {
            Self::from_path(path)
        } else if FIXTURES.contains(&spec) {
            Self::fixture(spec)
        } else {
            Err(Error::InvalidInput(format!(
                "model '{spec}' is neither a file nor a bundled fixture"
            )))
        }
    }

    /// Model with every `S` entry free: `Sigma` is unrestricted.
    pub fn saturated(names: &[&str]) -> Self {
        let mut s = Vec::new();
        for i in 0..names.len() {
            for j in 0..=i {
                s.push(Entry {
                    row: VarRef::Name(names[i].to_string()),
                    col: VarRef::Name(names[j].to_string()),
                    value: EntryValue::Free {
                        param: format!("s_{}_{}", names[i], names[j]),
                        start: Some(if i == j { 1.0 } else { 0.0 }),
                    },
                });
            }
        }
        Self::from_document(ModelDocument {
            name: Some("saturated".into()),
            variables: names.iter().map(|s| s.to_string()).collect(),
            observed: None,
            a: vec![],
            s,
            constraints: vec![],
        })
        .expect("saturated model is valid")
    }

    pub fn document(&self) -> &ModelDocument {
        &self.document
    }

    pub fn name(&self) -> &str {
        self.document.name.as_deref().unwrap_or("model")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.document).expect("document serializes")
    }

    pub fn observed_names(&self) -> Vec<&str> {
        self.observed
            .iter()
            .map(|&i| self.variables[i].as_str())
            .collect()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn n_moments(&self) -> usize {
        moment_count(self.observed.len())
    }

    /// Number of free parameters after constraints.
    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.document.constraints
    }

    /// Start values from the model file.
    pub fn start_values(&self) -> ParamVector {
        ParamVector(DVector::from_iterator(
            self.n_params(),
            self.param_labels.iter().map(|ls| self.label_starts[ls[0]]),
        ))
    }

    /// Same structure with additional constraints.
    pub fn with_constraints(&self, extra: &[Constraint]) -> Result<Self> {
        let mut doc = self.document.clone();
        doc.constraints.extend(extra.iter().cloned());
        Self::from_document(doc)
    }

    /// Same structure with all constraints removed.
    pub fn without_constraints(&self) -> Self {
        let mut doc = self.document.clone();
        doc.constraints.clear();
        Self::from_document(doc).expect("unconstrained structure is valid")
    }

    /// Degrees of freedom `p* - q`.
    pub fn dof(&self) -> Result<usize> {
        let moments = self.n_moments();
        let params = self.n_params();
        if params > moments {
            return Err(Error::OverParametrized { moments, params });
        }
        Ok(moments - params)
    }

    fn check_params(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        if theta.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Inadmissible("non-finite parameter value".into()));
        }
        Ok(())
    }

    /// Value of every label at `theta`.
    pub fn label_values(&self, theta: &ParamVector) -> Vec<f64> {
        self.bindings
            .iter()
            .map(|b| match *b {
                Binding::Free(k) => theta.0[k],
                Binding::Fixed(v) => v,
            })
            .collect()
    }

    /// Parameter vector of `self` reproducing the given label values
    /// (takes the first label of each equality group).
    pub fn params_from_labels(&self, values: &[f64]) -> Result<ParamVector> {
        if values.len() != self.labels.len() {
            return Err(Error::InvalidInput("label count mismatch".into()));
        }
        Ok(ParamVector(DVector::from_iterator(
            self.n_params(),
            self.param_labels.iter().map(|ls| values[ls[0]]),
        )))
    }

    /// Expresses `theta` (parameters of `self`) as parameters of `other`,
    /// a model with the same labels and fewer constraints.
    pub fn embed_params(&self, theta: &ParamVector, other: &ModelSpec) -> Result<ParamVector> {
        if self.labels != other.labels {
            return Err(Error::Inconsistent(
                "models do not share the same parameter labels".into(),
            ));
        }
        other.params_from_labels(&self.label_values(theta))
    }

    fn ram_matrices(&self, theta: &ParamVector) -> (DMatrix<f64>, DMatrix<f64>) {
        let values = self.label_values(theta);
        let nt = self.variables.len();
        let mut a = DMatrix::zeros(nt, nt);
        let mut s = DMatrix::zeros(nt, nt);
        let val = |c: &Cell| match c.value {
            CellValue::Fixed(v) => v,
            CellValue::Label(k) => values[k],
        };
        for c in &self.a_cells {
            a[(c.row, c.col)] = val(c);
        }
        for c in &self.s_cells {
            let v = val(c);
            s[(c.row, c.col)] = v;
            s[(c.col, c.row)] = v;
        }
        (a, s)
    }

    /// `(I - A)^-1` and the total covariance `Omega`.
    fn ram_state(&self, theta: &ParamVector) -> Result<RamState> {
        self.check_params(theta)?;
        let (a, s) = self.ram_matrices(theta);
        let nt = a.nrows();
        let b = (DMatrix::identity(nt, nt) - a)
            .try_inverse()
            .ok_or_else(|| Error::Inadmissible("I - A is singular".into()))?;
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::Inadmissible("I - A is singular".into()));
        }
        let omega = &b * s * b.transpose();
        Ok(RamState { b, omega })
    }

    /// Implied covariance of the observed variables.
    pub fn implied_cov(&self, theta: &ParamVector) -> Result<CovMatrix> {
        let state = self.ram_state(theta)?;
        let p = self.observed.len();
        let mut sigma = DMatrix::zeros(p, p);
        for (r, &i) in self.observed.iter().enumerate() {
            for (c, &j) in self.observed.iter().enumerate() {
                sigma[(r, c)] = state.omega[(i, j)];
            }
        }
        linalg::symmetrize(&mut sigma);
        if !linalg::is_positive_definite(&sigma) {
            return Err(Error::Inadmissible(
                "implied covariance is not positive definite".into(),
            ));
        }
        Ok(sigma)
    }

    /// `sigma(theta)`, the half-vectorized implied covariance.
    pub fn implied_moments(&self, theta: &ParamVector) -> Result<MomentVector> {
        Ok(MomentVector::from_cov(&self.implied_cov(theta)?))
    }

    /// `d sigma / d theta'` by central differences with step
    /// `1e-6 * max(1, |theta_j|)`.
    pub fn jacobian(&self, theta: &ParamVector) -> Result<DMatrix<f64>> {
        self.implied_cov(theta)?;
        let q = self.n_params();
        let mut jac = DMatrix::zeros(self.n_moments(), q);
        for k in 0..q {
            let h = 1e-6 * theta.0[k].abs().max(1.0);
            let mut plus = theta.clone();
            plus.0[k] += h;
            let mut minus = theta.clone();
            minus.0[k] -= h;
            let up = self.implied_moments(&plus)?;
            let down = self.implied_moments(&minus)?;
            let col = (up.as_vector() - down.as_vector()) / (2.0 * h);
            jac.set_column(k, &col);
        }
        Ok(jac)
    }

    /// Closed-form RAM derivative of `sigma(theta)`.
    pub fn jacobian_analytic(&self, theta: &ParamVector) -> Result<DMatrix<f64>> {
        self.implied_cov(theta)?;
        let state = self.ram_state(theta)?;
        Ok(self.jacobian_from_state(&state))
    }

    fn jacobian_from_state(&self, state: &RamState) -> DMatrix<f64> {
        let pairs = vech_pairs(self.observed.len());
        let obs = &self.observed;
        let b = &state.b;
        let omega = &state.omega;
        let mut jac = DMatrix::zeros(pairs.len(), self.n_params());
        let free_index = |c: &Cell| match c.value {
            CellValue::Label(l) => match self.bindings[l] {
                Binding::Free(k) => Some(k),
                Binding::Fixed(_) => None,
            },
            CellValue::Fixed(_) => None,
        };
        for c in &self.a_cells {
            let Some(k) = free_index(c) else { continue };
            let (i, j) = (c.row, c.col);
            for (m, &(r, s)) in pairs.iter().enumerate() {
                let (r, s) = (obs[r], obs[s]);
                jac[(m, k)] += b[(r, i)] * omega[(j, s)] + b[(s, i)] * omega[(j, r)];
            }
        }
        for c in &self.s_cells {
            let Some(k) = free_index(c) else { continue };
            let (i, j) = (c.row, c.col);
            for (m, &(r, s)) in pairs.iter().enumerate() {
                let (r, s) = (obs[r], obs[s]);
                let mut v = b[(r, i)] * b[(s, j)];
                if i != j {
                    v += b[(r, j)] * b[(s, i)];
                }
                jac[(m, k)] += v;
            }
        }
        jac
    }
}

struct RamState {
    b: DMatrix<f64>,
    omega: DMatrix<f64>,
}

type Resolved = (Vec<Binding>, Vec<String>, Vec<Vec<usize>>);

fn resolve_constraints(
    labels: &[String],
    label_index: &HashMap<String, usize>,
    constraints: &[Constraint],
) -> Result<Resolved> {
    let n = labels.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let lookup = |l: &str| {
        label_index
            .get(l)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("constraint names unknown parameter '{l}'")))
    };
    for c in constraints {
        if let Constraint::Equal { equal: [a, b] } = c {
            let (a, b) = (lookup(a)?, lookup(b)?);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            // Keep the smallest label index as root so ordering is stable.
            if ra < rb {
                parent[rb] = ra;
            } else {
                parent[ra] = rb;
            }
        }
    }
    let mut fixed: HashMap<usize, f64> = HashMap::new();
    for c in constraints {
        if let Constraint::Fix { fix, value } = c {
            if !value.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite value fixing '{fix}'"
                )));
            }
            let root = find(&mut parent, lookup(fix)?);
            if let Some(prev) = fixed.insert(root, *value) {
                if prev != *value {
                    return Err(Error::InvalidInput(format!(
                        "conflicting fixed values for '{fix}'"
                    )));
                }
            }
        }
    }
    let mut bindings = vec![Binding::Fixed(0.0); n];
    let mut root_param: HashMap<usize, usize> = HashMap::new();
    let mut names = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for l in 0..n {
        let root = find(&mut parent, l);
        if let Some(&v) = fixed.get(&root) {
            bindings[l] = Binding::Fixed(v);
            continue;
        }
        let k = *root_param.entry(root).or_insert_with(|| {
            names.push(labels[root].clone());
            members.push(Vec::new());
            names.len() - 1
        });
        members[k].push(l);
        bindings[l] = Binding::Free(k);
    }
    Ok((bindings, names, members))
}
