//! Python bindings. Structured values cross the boundary as plain Python
//! objects (dicts, lists, strings) through their JSON shape.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use dw_core::codegen::{emit_refresh, emit_structure, Definition, Target};
use dw_core::expr::{parse_formula, parse_selection, AttributeNaming, EvaluationContext, MapBinding};
use dw_core::mart::MartOp;
use dw_core::project::Project;
use dw_core::schema::load_schema;
use dw_core::warehouse::WarehouseOp;
use dw_core::{Error, Value};
use dwctl::engine::{self, Workspace as Inner};

create_exception!(dwpy, EngineError, PyException, "Engine failure; args are (kind, message).");

fn raise(e: Error) -> PyErr {
    EngineError::new_err((e.kind(), e.to_string()))
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).expect("value serializes");
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| {
        raise(Error::Parse {
            what: what.into(),
            message: e.to_string(),
        })
    })
}

/// Validate a schema document; returns its class names.
#[pyfunction]
fn validate_schema(document: &str) -> PyResult<Vec<String>> {
    let s = load_schema(document).map_err(raise)?;
    Ok(s.classes.into_iter().map(|c| c.name).collect())
}

/// Canonical text of a formula, or of a predicate with `selection=True`.
#[pyfunction]
#[pyo3(signature = (text, selection = false))]
fn canonical_formula(text: &str, selection: bool) -> PyResult<String> {
    let tree = if selection { parse_selection(text) } else { parse_formula(text) };
    Ok(tree.map_err(raise)?.to_string())
}

/// A project file and its temporal store.
#[pyclass(module = "dwpy")]
struct Workspace {
    inner: Inner,
}

#[pymethods]
impl Workspace {
    #[new]
    fn open(path: PathBuf) -> PyResult<Self> {
        Ok(Workspace {
            inner: Inner::open(&path).map_err(raise)?,
        })
    }

    /// Create a project file at `path` over `source`, a path relative to
    /// the project's directory.
    #[staticmethod]
    fn create(path: PathBuf, source: &str) -> PyResult<Self> {
        let project = Project::create(&path, source).map_err(raise)?;
        let store = project.open_store().map_err(raise)?;
        Ok(Workspace {
            inner: Inner { project, store },
        })
    }

    #[getter]
    fn version(&self) -> u64 {
        self.inner.project.version()
    }

    #[getter]
    fn warehouse(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.project.resolved.warehouse)
    }

    #[getter]
    fn marts(&self) -> Vec<String> {
        self.inner.project.resolved.marts.keys().cloned().collect()
    }

    fn mart(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.project.mart(name).map_err(raise)?)
    }

    /// Append a warehouse operation such as `{"op": "project_class",
    /// "class": "Actes"}`.
    #[pyo3(signature = (op, version = None))]
    fn apply_warehouse(&mut self, py: Python<'_>, op: &Bound<'_, PyAny>, version: Option<u64>) -> PyResult<Py<PyAny>> {
        let op: WarehouseOp = from_py(op, "warehouse operation")?;
        let outcome = self.inner.project.apply_warehouse(op, version).map_err(raise)?;
        to_py(py, &outcome)
    }

    #[pyo3(signature = (mart, op, version = None))]
    fn apply_mart(
        &mut self,
        py: Python<'_>,
        mart: &str,
        op: &Bound<'_, PyAny>,
        version: Option<u64>,
    ) -> PyResult<Py<PyAny>> {
        let op: MartOp = from_py(op, "mart operation")?;
        let outcome = self.inner.project.apply_mart(mart, op, version).map_err(raise)?;
        to_py(py, &outcome)
    }

    /// Load an instance document (JSON text) as the run of `date`.
    fn refresh(&mut self, py: Python<'_>, document: &str, date: &str) -> PyResult<Py<PyAny>> {
        let date = engine::parse_date(date).map_err(raise)?;
        let run = self.inner.refresh(document, date, |_, _| {}).map_err(raise)?;
        to_py(py, &run)
    }

    fn runs(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.store.runs())
    }

    fn detect_representatives(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.detection())
    }

    /// Classes dependent on `class` in the warehouse, with witness chains.
    fn dependencies(&self, py: Python<'_>, class: &str) -> PyResult<Py<PyAny>> {
        let w = self.inner.project.resolved.warehouse.schema();
        to_py(py, &engine::dependencies(&w, class).map_err(raise)?)
    }

    fn infer_hierarchy(&self, mart: &str, dimension: &str) -> PyResult<Vec<(String, String)>> {
        self.inner.infer_edges(mart, dimension).map_err(raise)
    }

    /// States of every generic object, one JSON line each.
    fn history_jsonl(&self) -> String {
        self.inner.store.history_jsonl()
    }

    /// Current fact rows of a mart, one JSON line each.
    fn facts_jsonl(&self, mart: &str) -> PyResult<String> {
        Ok(self.inner.mart_data(mart).map_err(raise)?.fact_jsonl())
    }

    /// `what` is "structure" or "refresh"; `target` is "neutral-plan" or
    /// "sql".
    #[pyo3(signature = (what, target = "neutral-plan", mart = None))]
    fn emit(&self, what: &str, target: &str, mart: Option<&str>) -> PyResult<String> {
        let target: Target = target.parse().map_err(raise)?;
        let p = &self.inner.project;
        let w = &p.resolved.warehouse;
        let plan = match (what, mart) {
            ("structure", Some(m)) => emit_structure(Definition::Mart(p.mart(m).map_err(raise)?), target),
            ("structure", None) => emit_structure(Definition::Warehouse { def: w, source: &p.source }, target),
            ("refresh", None) => emit_refresh(w, &p.source, target),
            _ => {
                return Err(raise(Error::Parse {
                    what: "emission".into(),
                    message: format!("cannot emit '{what}' here"),
                }))
            }
        };
        Ok(plan.map_err(raise)?.render())
    }

    /// Evaluate a formula over the source schema, anchored at `anchor`.
    /// `values` maps `Class.attribute` to a value (a list for
    /// many-valued references).
    fn evaluate(&self, py: Python<'_>, formula: &str, anchor: &str, values: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let source = &self.inner.project.source;
        let values: serde_json::Map<String, serde_json::Value> = from_py(values, "values")?;
        let mut binding = MapBinding::new();
        for (qualified, json) in &values {
            let (class, attribute) = qualified.split_once('.').unwrap_or((qualified, ""));
            let ty = source
                .class(class)
                .and_then(|c| c.attribute(attribute))
                .map(|a| a.ty.clone())
                .ok_or_else(|| {
                    raise(Error::UnknownAttribute {
                        class: class.into(),
                        attribute: attribute.into(),
                    })
                })?;
            let convert = |j: &serde_json::Value| {
                Value::from_json(j, &ty).map_err(|message| {
                    raise(Error::Parse {
                        what: qualified.clone(),
                        message,
                    })
                })
            };
            match json {
                serde_json::Value::Array(items) => {
                    let items = items.iter().map(|j| convert(j).map(Some)).collect::<PyResult<Vec<_>>>()?;
                    binding.set_many(qualified, items);
                }
                j => {
                    binding.set(qualified, convert(j)?);
                }
            }
        }
        let tree = parse_formula(formula).map_err(raise)?;
        let compiled = EvaluationContext::navigating(source, anchor, AttributeNaming::Exact)
            .compile(&tree)
            .map_err(raise)?;
        let v = compiled.evaluate(&binding).map_err(raise)?;
        to_py(py, &v.to_json())
    }
}

#[pymodule]
fn dwpy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EngineError", m.py().get_type::<EngineError>())?;
    m.add_function(wrap_pyfunction!(validate_schema, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_formula, m)?)?;
    m.add_class::<Workspace>()?;
    Ok(())
}
