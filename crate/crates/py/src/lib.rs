use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use nl2sql_core::model::{load_schemas, Backend, DatabaseSchema, RunConfig};
use nl2sql_core::sql::Database;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Hands a serializable value to Python through `json.loads`.
fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn schema(tables: &Path, db_id: &str) -> PyResult<DatabaseSchema> {
    load_schemas(tables)
        .map_err(err)?
        .into_iter()
        .find(|s| s.db_id == db_id)
        .ok_or_else(|| PyValueError::new_err(format!("no schema {db_id:?} in {}", tables.display())))
}

/// Whether the two queries return the same rows on the database file.
#[pyfunction]
fn execution_accuracy(gold: &str, predicted: &str, database: PathBuf) -> PyResult<bool> {
    let db = Database::open_readonly(&database).map_err(err)?;
    nl2sql_core::eval::execution_accuracy(gold, predicted, &db).map_err(err)
}

/// Clause-by-clause match flags as a dict.
#[pyfunction]
fn component_match(py: Python<'_>, gold: &str, predicted: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &nl2sql_core::eval::component_match(gold, predicted).map_err(err)?)
}

/// One of easy, medium, hard, extra.
#[pyfunction]
fn classify_difficulty(sql: &str) -> PyResult<&'static str> {
    Ok(nl2sql_core::sql::classify_difficulty(sql).map_err(err)?.as_str())
}

/// (category, subtype) of a wrong prediction.
#[pyfunction]
fn classify_error(gold: &str, predicted: &str, tables: PathBuf, db_id: &str) -> PyResult<(String, String)> {
    let s = schema(&tables, db_id)?;
    let (cat, sub) = nl2sql_core::eval::classify_error(gold, predicted, &s).map_err(err)?;
    Ok((cat.as_str().to_string(), sub))
}

/// The SQL query inside a free-form model reply, if any.
#[pyfunction]
fn extract_sql(reply: &str) -> Option<String> {
    nl2sql_core::prompt::extract_sql(reply)
}

/// CREATE TABLE rendering of one database in a Spider tables file.
#[pyfunction]
fn schema_ddl(tables: PathBuf, db_id: &str) -> PyResult<String> {
    Ok(nl2sql_core::prompt::schema_ddl(&schema(&tables, db_id)?))
}

fn load_config(config: &Path, backend: Option<&str>, limit: Option<usize>, out: Option<PathBuf>) -> PyResult<RunConfig> {
    let mut c = RunConfig::load(config).map_err(err)?;
    if let Some(b) = backend {
        c.backend = b.parse::<Backend>().map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    if limit.is_some() {
        c.limit = limit;
    }
    if let Some(o) = out {
        c.paths.output = o;
    }
    Ok(c)
}

/// Runs the pipeline and returns the report with run statistics.
#[pyfunction]
#[pyo3(signature = (config, backend=None, limit=None, out=None))]
fn run(py: Python<'_>, config: PathBuf, backend: Option<&str>, limit: Option<usize>, out: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let c = load_config(&config, backend, limit, out)?;
    let outcome = py.detach(|| nl2sql_core::pipeline::run(&c)).map_err(err)?;
    to_py(py, &outcome.summary)
}

/// Scores a predictions file (one query per line) against the configured instances.
#[pyfunction]
#[pyo3(signature = (config, predictions, limit=None))]
fn evaluate_predictions(py: Python<'_>, config: PathBuf, predictions: PathBuf, limit: Option<usize>) -> PyResult<Py<PyAny>> {
    let c = load_config(&config, None, limit, None)?;
    let preds = nl2sql_core::pipeline::read_predictions(&predictions).map_err(err)?;
    let (_, report) = nl2sql_core::pipeline::evaluate_predictions(&c, &preds).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn nl2sql(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(execution_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(component_match, m)?)?;
    m.add_function(wrap_pyfunction!(classify_difficulty, m)?)?;
    m.add_function(wrap_pyfunction!(classify_error, m)?)?;
    m.add_function(wrap_pyfunction!(extract_sql, m)?)?;
    m.add_function(wrap_pyfunction!(schema_ddl, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_predictions, m)?)?;
    Ok(())
}
