//! Python bindings. Configurations, reports and scores cross the boundary as
//! JSON strings with the same layout the command line tool reads and writes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cfinfluence::harness::{self, DatasetSource, ExperimentConfig, Strategy};
use cfinfluence::valuation::shapley_exact;
use cfinfluence::Error;

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_config(config_json: &str) -> PyResult<ExperimentConfig> {
    let cfg: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

#[pyfunction]
fn version() -> &'static str {
    cfinfluence::VERSION
}

/// Default experiment configuration as JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&ExperimentConfig::default()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Summary of a benchmark (`diabetes`, `credit`) or a CSV file, as JSON.
#[pyfunction]
#[pyo3(signature = (dataset, path=None, label_column="label", protected_column=None))]
fn validate_dataset(
    dataset: &str,
    path: Option<&str>,
    label_column: &str,
    protected_column: Option<&str>,
) -> PyResult<String> {
    let src = match (dataset, path) {
        ("diabetes", None) => DatasetSource::diabetes(),
        ("diabetes", Some(p)) => DatasetSource::Diabetes { path: p.into() },
        ("credit", None) => DatasetSource::credit(),
        ("credit", Some(p)) => DatasetSource::Credit { path: p.into() },
        ("csv", Some(p)) => DatasetSource::Csv {
            path: p.into(),
            label_column: label_column.into(),
            protected_column: protected_column.map(Into::into),
        },
        _ => return Err(PyValueError::new_err(format!("unknown dataset `{dataset}`"))),
    };
    let summary = src.load().and_then(|d| d.summary()).map_err(to_py)?;
    serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Influence scores of one fold as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, fold=0, strategy="ours"))]
fn score(py: Python<'_>, config_json: &str, fold: usize, strategy: &str) -> PyResult<String> {
    let cfg = parse_config(config_json)?;
    let strategy: Strategy = strategy.parse().map_err(to_py)?;
    py.detach(|| {
        let data = cfg.dataset.load()?;
        harness::score_fold(&data, &cfg, fold, strategy)?.to_json()
    })
    .map_err(to_py)
}

/// Full removal experiment; returns the report as JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = parse_config(config_json)?;
    py.detach(|| harness::run_experiment(&cfg)?.to_json()).map_err(to_py)
}

/// Exact Shapley values of a game on `n` players given as a table of
/// coalition values indexed by bitmask (bit `i` set when player `i` is in).
#[pyfunction]
fn shapley_from_table(values: Vec<f64>) -> PyResult<Vec<f64>> {
    let n = values.len().trailing_zeros() as usize;
    if values.is_empty() || values.len() != 1 << n {
        return Err(PyValueError::new_err("table length must be a power of two"));
    }
    let ids: Vec<u64> = (0..n as u64).collect();
    let phi = shapley_exact(&ids, |s| values[s.iter().map(|&i| 1usize << i).sum::<usize>()]).map_err(to_py)?;
    Ok(phi.into_values().collect())
}

#[pymodule]
fn cfinfluence_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(validate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(shapley_from_table, m)?)?;
    Ok(())
}
