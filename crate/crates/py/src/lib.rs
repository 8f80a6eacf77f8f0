//! Python module `fret`: scenario registry, condition checks, sampling, exact
//! first-rare-event quantities and verification reports.
//!
//! Structured results (condition reports, verification reports) cross the
//! boundary as JSON and come back as plain dicts and lists.

use fret_core::analytic::{exact_laplace_xi, survival_nu_exact};
use fret_core::conditions::check_conditions;
use fret_core::io::to_json_pretty;
use fret_core::rng::workers_from_env;
use fret_core::scenario::{builtin_scenarios, load};
use fret_core::verify::verify as run_verify;
use fret_core::{stationary_distribution as stationary, ConditionId, Error, StochasticMatrix, Theorem};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::PreconditionFailed { .. } | Error::MaxStepsExceeded { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_value<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = to_json_pretty(value).map_err(to_py)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Stationary distribution of a row-stochastic matrix given as nested lists.
#[pyfunction]
fn stationary_distribution(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let p = StochasticMatrix::from_rows(rows).map_err(to_py)?;
    Ok(stationary(&p).map_err(to_py)?.as_slice().to_vec())
}

/// Names of the builtin scenarios.
#[pyfunction]
fn scenario_names() -> Vec<String> {
    builtin_scenarios().into_iter().map(|s| s.name).collect()
}

/// Condition reports for a scenario (builtin name or JSON file path).
#[pyfunction]
#[pyo3(signature = (scenario, conditions=None))]
fn check<'py>(py: Python<'py>, scenario: &str, conditions: Option<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
    let s = load(scenario).map_err(to_py)?;
    let which = match conditions {
        Some(names) => names
            .iter()
            .map(|n| n.parse::<ConditionId>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?,
        None => ConditionId::ALL.to_vec(),
    };
    let reports = py
        .detach(|| check_conditions(&s.family, &which, &s.spec.check_options()))
        .map_err(to_py)?;
    json_value(py, &reports)
}

/// `(ν, ξ)` samples at `eps`. `n` and `seed` default to the scenario's.
#[pyfunction]
#[pyo3(signature = (scenario, eps, n=None, seed=None))]
fn simulate(py: Python<'_>, scenario: &str, eps: f64, n: Option<usize>, seed: Option<u64>) -> PyResult<(Vec<u64>, Vec<f64>)> {
    let s = load(scenario).map_err(to_py)?;
    let n = n.unwrap_or(s.spec.n_samples);
    let seed = seed.unwrap_or(s.spec.seed);
    let samples = py
        .detach(|| s.sample(eps, n, seed, &[], workers_from_env()))
        .map_err(to_py)?;
    Ok(samples.iter().map(|x| (x.nu, x.xi)).unzip())
}

/// Exact `P{ν > n}` at `eps`.
#[pyfunction]
fn survival(scenario: &str, eps: f64, n: u64) -> PyResult<f64> {
    let s = load(scenario).map_err(to_py)?;
    let k = s.family.kernel(eps).map_err(to_py)?;
    let q = s.family.initial(k.m()).map_err(to_py)?;
    survival_nu_exact(&k, &q, n).map_err(to_py)
}

/// Exact `E exp(-s ξ)` at `eps`.
#[pyfunction]
fn laplace_xi(scenario: &str, eps: f64, s: f64) -> PyResult<f64> {
    let sc = load(scenario).map_err(to_py)?;
    let k = sc.family.kernel(eps).map_err(to_py)?;
    let q = sc.family.initial(k.m()).map_err(to_py)?;
    exact_laplace_xi(&k, &q, s).map_err(to_py)
}

/// Verification report for `theorem` on `scenario`, as a dict.
#[pyfunction]
#[pyo3(signature = (theorem, scenario, eps_grid=None, n=None, seed=None, force=false))]
fn verify<'py>(
    py: Python<'py>,
    theorem: &str,
    scenario: &str,
    eps_grid: Option<Vec<f64>>,
    n: Option<usize>,
    seed: Option<u64>,
    force: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let theorem: Theorem = theorem.parse().map_err(to_py)?;
    let s = load(scenario).map_err(to_py)?;
    let mut opts = s.spec.verify_options();
    if let Some(g) = eps_grid {
        opts.eps_grid = g;
    }
    if let Some(n) = n {
        opts.n_samples = n;
    }
    if let Some(seed) = seed {
        opts.seed = seed;
    }
    opts.force = force;
    opts.workers = workers_from_env();
    let report = py
        .detach(|| run_verify(theorem, &s.family, s.spec.target.as_ref(), &opts))
        .map_err(to_py)?;
    json_value(py, &report)
}

#[pymodule]
fn fret(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(stationary_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(survival, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_xi, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
