//! The `eigenfit` command line.
//!
//! Reports are JSON documents that start with a `config` object echoing the
//! command's arguments. The thread count is not echoed since results never
//! depend on it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{analyze, analyze_nested};
use crate::datagen::vale_maurelli_sample;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::pvalue::{p_oracle, parse_method_list, Method, PValueReport};
use crate::resample::{
    bollen_stine_pvalue, nested_bollen_stine_pvalue, nested_select, robustness_tests, select,
};
use crate::study::{run_study, Study};
use crate::wchisq::MixtureWeights;

const DEFAULT_B: usize = 300;

#[derive(Debug, Parser)]
#[command(
    name = "eigenfit",
    version,
    about = "Eigenvalue-based tests for covariance structure models"
)]
pub struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and report estimates, the test statistic and eigenvalues.
    Fit {
        /// CSV file with a header row naming the observed variables.
        data: PathBuf,
        /// Model JSON file or bundled fixture name.
        model: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Goodness-of-fit p-value.
    Test {
        data: PathBuf,
        model: String,
        #[command(flatten)]
        opts: TestOpts,
    },
    /// P-value of the difference test between a model and a nested model.
    Difftest {
        data: PathBuf,
        parent: String,
        nested: String,
        #[command(flatten)]
        opts: TestOpts,
    },
    /// Bootstrap tests of asymptotic robustness and scaled-statistic consistency.
    Robustness {
        data: PathBuf,
        model: String,
        #[arg(long = "B", default_value_t = DEFAULT_B)]
        b: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo study; writes replications.csv and summary.json.
    Simulate {
        study: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the study seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the study's bootstrap size.
        #[arg(long = "B")]
        b: Option<usize>,
    },
    /// Generate data from the population implied by a model's start values.
    GenData {
        model: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        skew: f64,
        #[arg(long, default_value_t = 0.0)]
        exkurt: f64,
        /// CSV path; the configuration goes to `<out>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TestOpts {
    /// ntml, full, half, sb, ss, grouped:<cutoffs>, oracle, bollen_stine or select.
    #[arg(long, default_value = "full")]
    pub method: String,
    #[arg(long = "B", default_value_t = DEFAULT_B)]
    pub b: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated candidates for `select`.
    #[arg(long)]
    pub candidates: Option<String>,
    /// Eigenvalues for `oracle`: a JSON array or whitespace-separated numbers.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
/// Diagnostics go to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::InvalidInput("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start thread pool: {e}")))?
            .install(|| dispatch(cli.command))
    } else {
        dispatch(cli.command)
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fit { data, model, out } => cmd_fit(&data, &model, out.as_deref()),
        Command::Test { data, model, opts } => cmd_test(&data, &model, &opts),
        Command::Difftest {
            data,
            parent,
            nested,
            opts,
        } => cmd_difftest(&data, &parent, &nested, &opts),
        Command::Robustness {
            data,
            model,
            b,
            seed,
            out,
        } => cmd_robustness(&data, &model, b, seed, out.as_deref()),
        Command::Simulate {
            study,
            out,
            seed,
            b,
        } => cmd_simulate(&study, &out, seed, b),
        Command::GenData {
            model,
            n,
            seed,
            skew,
            exkurt,
            out,
        } => cmd_gen_data(&model, n, seed, skew, exkurt, out.as_deref()),
    }
}

/// Reads the columns named in `names` from a CSV file with a header row.
/// Extra columns are ignored.
pub fn read_data(path: &Path, names: &[&str]) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let header = reader.headers()?.clone();
    let mut columns = Vec::with_capacity(names.len());
    for name in names {
        let found: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.trim() == *name)
            .map(|(i, _)| i)
            .collect();
        match found[..] {
            [i] => columns.push(i),
            [] => {
                return Err(Error::InvalidInput(format!(
                    "missing column '{name}' in {}",
                    path.display()
                )))
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "column '{name}' appears more than once"
                )))
            }
        }
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        for (&c, name) in columns.iter().zip(names) {
            let cell = record.get(c).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| {
                Error::InvalidInput(format!(
                    "non-numeric value '{cell}' in column '{name}', data row {}",
                    r + 1
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, names.len(), &values))
}

pub fn write_data<W: Write>(out: W, names: &[&str], data: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(names)?;
    for i in 0..data.nrows() {
        w.write_record(data.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Oracle weights from a JSON array or whitespace/comma-separated numbers.
pub fn read_weights(path: &Path) -> Result<MixtureWeights> {
    let text = fs::read_to_string(path)?;
    let values: Vec<f64> = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(_) => text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| {
                    Error::InvalidInput(format!("invalid weight '{s}' in {}", path.display()))
                })
            })
            .collect::<Result<_>>()?,
    };
    MixtureWeights::new(values)
}

fn emit(out: Option<&Path>, config: Value, body: impl Serialize) -> Result<()> {
    let mut doc = json!({ "config": config });
    match serde_json::to_value(body)? {
        Value::Object(map) => doc.as_object_mut().expect("object").extend(map),
        other => {
            doc["result"] = other;
        }
    }
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::InvalidInput(format!("{what} needs --seed")))
}

fn load_with_data(data: &Path, model: &str) -> Result<(ModelSpec, DMatrix<f64>)> {
    let model = ModelSpec::load(model)?;
    let x = read_data(data, &model.observed_names())?;
    Ok((model, x))
}

#[derive(Serialize)]
struct Estimate<'a> {
    name: &'a str,
    estimate: f64,
}

fn cmd_fit(data: &Path, model: &str, out: Option<&Path>) -> Result<()> {
    let config = json!({ "command": "fit", "data": data, "model": model });
    let (spec, x) = load_with_data(data, model)?;
    let a = analyze(&spec, &x, &[])?;
    let parameters: Vec<Estimate> = spec
        .param_names()
        .iter()
        .zip(a.fit.theta_hat.as_slice())
        .map(|(name, &estimate)| Estimate { name, estimate })
        .collect();
    let body = json!({
        "model": spec.name(),
        "n": a.fit.n,
        "dof": a.dof,
        "t_stat": a.fit.t_stat,
        "discrepancy": a.fit.discrepancy,
        "parameters": parameters,
        "lambda": a.spectrum.as_ref().map(|s| s.as_slice().to_vec()),
        "traces": { "tr_ug": a.traces.0, "tr_ug_squared": a.traces.1 },
        "convergence": {
            "converged": a.fit.converged,
            "iterations": a.fit.iterations,
            "gradient_norm": a.fit.gradient_norm,
        },
        "imag_residual": a.decomposition.as_ref().map(|d| d.imag_residual),
        "warnings": a.warnings,
    });
    emit(out, config, body)
}

fn test_config(command: &str, opts: &TestOpts) -> Value {
    json!({
        "command": command,
        "method": opts.method,
        "B": opts.b,
        "seed": opts.seed,
        "candidates": opts.candidates,
        "weights": opts.weights,
    })
}

fn candidates(opts: &TestOpts) -> Result<Vec<Method>> {
    let list = opts
        .candidates
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("--method select needs --candidates".into()))?;
    parse_method_list(list)
}

fn oracle_weights(opts: &TestOpts, d: usize) -> Result<MixtureWeights> {
    let path = opts
        .weights
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("--method oracle needs --weights".into()))?;
    let w = read_weights(path)?;
    if w.len() != d {
        return Err(Error::InvalidInput(format!(
            "{} weights given for {d} degrees of freedom",
            w.len()
        )));
    }
    Ok(w)
}

fn cmd_test(data: &Path, model: &str, opts: &TestOpts) -> Result<()> {
    let mut config = test_config("test", opts);
    config["data"] = json!(data);
    config["model"] = json!(model);
    let method: Method = opts.method.parse()?;
    let (spec, x) = load_with_data(data, model)?;
    let out = opts.out.as_deref();
    match method {
        Method::Selected => {
            let cands = candidates(opts)?;
            let seed = require_seed(opts.seed, "select")?;
            emit(out, config, select(&x, &spec, &cands, opts.b, seed)?)
        }
        Method::BollenStine => {
            let seed = require_seed(opts.seed, "bollen_stine")?;
            emit(out, config, bollen_stine_pvalue(&x, &spec, opts.b, seed)?)
        }
        Method::Oracle => {
            let w = oracle_weights(opts, spec.dof()?)?;
            let a = analyze(&spec, &x, &[])?;
            emit(out, config, p_oracle(&w, a.fit.t_stat)?)
        }
        m => {
            let a = analyze(&spec, &x, &[])?;
            emit(out, config, a.pvalue(&m)?)
        }
    }
}

fn cmd_difftest(data: &Path, parent: &str, nested: &str, opts: &TestOpts) -> Result<()> {
    let mut config = test_config("difftest", opts);
    config["data"] = json!(data);
    config["parent"] = json!(parent);
    config["nested"] = json!(nested);
    let method: Method = opts.method.parse()?;
    let m1 = ModelSpec::load(parent)?;
    let m0 = ModelSpec::load(nested)?;
    let x = read_data(data, &m1.observed_names())?;
    if m0.observed_names() != m1.observed_names() {
        return Err(Error::InvalidInput(
            "parent and nested models must list the same observed variables in the same order"
                .into(),
        ));
    }
    let out = opts.out.as_deref();
    match method {
        Method::Selected => {
            let cands = candidates(opts)?;
            let seed = require_seed(opts.seed, "select")?;
            emit(
                out,
                config,
                nested_select(&x, &m1, &m0, &cands, opts.b, seed)?,
            )
        }
        Method::BollenStine => {
            let seed = require_seed(opts.seed, "bollen_stine")?;
            emit(
                out,
                config,
                nested_bollen_stine_pvalue(&x, &m1, &m0, opts.b, seed)?,
            )
        }
        Method::Oracle => {
            let a = analyze_nested(&m1, &m0, &x, &[])?;
            let w = oracle_weights(opts, a.m)?;
            let report = p_oracle(&w, a.statistic())?.with("m", json!(a.m));
            emit(out, config, report)
        }
        m => {
            let a = analyze_nested(&m1, &m0, &x, &[])?;
            let report: PValueReport = a.pvalue(&m)?;
            emit(out, config, report)
        }
    }
}

fn cmd_robustness(
    data: &Path,
    model: &str,
    b: usize,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let config =
        json!({ "command": "robustness", "data": data, "model": model, "B": b, "seed": seed });
    let seed = require_seed(seed, "robustness")?;
    let (spec, x) = load_with_data(data, model)?;
    emit(out, config, robustness_tests(&x, &spec, b, seed)?)
}

fn cmd_simulate(path: &Path, out: &Path, seed: Option<u64>, b: Option<usize>) -> Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let mut study: Study = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("invalid study file {}: {e}", path.display())))?;
    if let Some(s) = seed {
        study.seed = s;
    }
    if let Some(b) = b {
        study.b = b;
    }
    let result = run_study(&study)?;
    fs::create_dir_all(out)?;
    result.write_csv(fs::File::create(out.join("replications.csv"))?)?;
    fs::write(out.join("summary.json"), result.summary_json()?)?;
    Ok(())
}

fn cmd_gen_data(
    model: &str,
    n: usize,
    seed: Option<u64>,
    skew: f64,
    exkurt: f64,
    out: Option<&Path>,
) -> Result<()> {
    let seed = require_seed(seed, "gen-data")?;
    let spec = ModelSpec::load(model)?;
    let sigma = spec.implied_cov(&spec.start_values())?;
    let x = vale_maurelli_sample(&sigma, skew, exkurt, n, seed)?;
    let names = spec.observed_names();
    match out {
        Some(path) => {
            write_data(fs::File::create(path)?, &names, &x)?;
            let config = json!({
                "command": "gen-data", "model": model, "n": n, "seed": seed,
                "skew": skew, "exkurt": exkurt, "out": path,
            });
            let mut sidecar = path.as_os_str().to_owned();
            sidecar.push(".json");
            fs::write(
                sidecar,
                serde_json::to_string_pretty(&json!({ "config": config }))? + "\n",
            )?;
        }
        None => write_data(std::io::stdout().lock(), &names, &x)?,
    }
    Ok(())
}
