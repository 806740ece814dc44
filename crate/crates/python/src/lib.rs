//! Python bindings: every function takes and returns text (schemas, JSON
//! snapshots and stores), so no Rust types cross the boundary.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use wdw_core::analyzer::{analyze as analyze_catalog, resolve_methods, Verdict};
use wdw_core::archive::{apply_archive, Weighting};
use wdw_core::catalog::{validate_schema, Catalog};
use wdw_core::cli::render_inspect;
use wdw_core::dsl::{parse_schema, print_schema, schema_hash};
use wdw_core::io::{embedded_schema, parse_snapshot, parse_store, store_to_json};
use wdw_core::model::WarehouseStore;
use wdw_core::schema::WarehouseSchema;
use wdw_core::temporal::Instant;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn schema_of(text: &str) -> PyResult<WarehouseSchema> {
    parse_schema(text).map_err(value_err)
}

fn catalog_of(schema: &WarehouseSchema) -> PyResult<Catalog> {
    Catalog::resolve(schema).map_err(|ds| {
        PyValueError::new_err(ds.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))
    })
}

fn instant(at: &str) -> PyResult<Instant> {
    at.parse().map_err(|e| value_err(format!("bad instant `{at}`: {e}")))
}

fn open_store(text: &str) -> PyResult<(WarehouseSchema, Catalog, WarehouseStore)> {
    let schema = embedded_schema(text)
        .map_err(value_err)?
        .ok_or_else(|| PyValueError::new_err("store has no embedded schema"))?;
    let catalog = catalog_of(&schema)?;
    let store = parse_store(text, Some(&schema_hash(&schema))).map_err(value_err)?;
    Ok((schema, catalog, store))
}

/// Parse a schema and return its canonical text.
#[pyfunction]
fn parse(text: &str) -> PyResult<String> {
    Ok(print_schema(&schema_of(text)?))
}

/// Diagnostics for a schema; empty when it is valid.
#[pyfunction]
fn validate(text: &str) -> PyResult<Vec<String>> {
    Ok(validate_schema(&schema_of(text)?).iter().map(ToString::to_string).collect())
}

/// Method label -> ("derivable" | "missing" | "cycle", names).
#[pyfunction]
#[pyo3(signature = (text, assume=None))]
fn analyze(text: &str, assume: Option<Vec<String>>) -> PyResult<Vec<(String, String, Vec<String>)>> {
    let schema = schema_of(text)?;
    let catalog = catalog_of(&schema)?;
    let assume = resolve_methods(&schema, &assume.unwrap_or_default()).map_err(PyValueError::new_err)?;
    let report = analyze_catalog(&catalog, &assume).map_err(value_err)?;
    Ok(report
        .verdicts
        .iter()
        .map(|(m, v)| {
            let (kind, names) = match v {
                Verdict::Derivable => ("derivable", Vec::new()),
                Verdict::Missing(s) => ("missing", s.iter().cloned().collect()),
                Verdict::Cycle(s) => ("cycle", s.iter().cloned().collect()),
            };
            (report.label(m).to_string(), kind.to_string(), names)
        })
        .collect())
}

/// Populate a store; returns the store JSON with the schema embedded.
#[pyfunction]
fn build(schema: &str, snapshot: &str, at: &str) -> PyResult<String> {
    let schema = schema_of(schema)?;
    let catalog = catalog_of(&schema)?;
    let snap = parse_snapshot(&schema, snapshot).map_err(value_err)?;
    let store = wdw_core::refresh::initial_build(&catalog, &snap, instant(at)?, &schema_hash(&schema))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(store_to_json(&store, Some(&schema)))
}

/// Refresh a store; returns (new store JSON, report text).
#[pyfunction]
#[pyo3(signature = (store, snapshot, at, env=None))]
fn refresh(store: &str, snapshot: &str, at: &str, env: Option<&str>) -> PyResult<(String, String)> {
    let (schema, catalog, mut st) = open_store(store)?;
    let snap = parse_snapshot(&schema, snapshot).map_err(value_err)?;
    let report = wdw_core::refresh::refresh(&catalog, &mut st, &snap, instant(at)?, env)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((store_to_json(&st, Some(&schema)), report.to_string()))
}

/// Archive a store; returns (new store JSON, report text).
#[pyfunction]
#[pyo3(signature = (store, env=None, duration_weighted=false))]
fn archive(store: &str, env: Option<&str>, duration_weighted: bool) -> PyResult<(String, String)> {
    let (schema, catalog, mut st) = open_store(store)?;
    let weighting = if duration_weighted { Weighting::Duration } else { Weighting::PerState };
    let report = apply_archive(&catalog, &mut st, env, weighting).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((store_to_json(&st, Some(&schema)), report.to_string()))
}

/// Same listing as `wdw inspect`.
#[pyfunction]
#[pyo3(signature = (store, class_name, oid=None, prop=None))]
fn inspect(store: &str, class_name: &str, oid: Option<&str>, prop: Option<&str>) -> PyResult<String> {
    let (_, catalog, st) = open_store(store)?;
    render_inspect(&catalog, &st, class_name, oid, prop).map_err(PyValueError::new_err)
}

#[pymodule]
fn wdw(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(build, m)?)?;
    m.add_function(wrap_pyfunction!(refresh, m)?)?;
    m.add_function(wrap_pyfunction!(archive, m)?)?;
    m.add_function(wrap_pyfunction!(inspect, m)?)?;
    Ok(())
}
