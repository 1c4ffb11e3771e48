//! Loading a mart from current warehouse objects.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Derivation, DimensionClass, DimensionOrigin, MartAttribute, MartDef, Sample};
use crate::error::{Error, Result};
use crate::expr::{AttributeNaming, CompiledExpr, EvaluationContext, ExpressionTree, Step};
use crate::objects::{ObjectIndex, ObjectRecord};
use crate::schema::SchemaGraph;
use crate::value::Value;
use crate::warehouse::{source_value, WarehouseDef};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactRow {
    pub id: String,
    pub measures: BTreeMap<String, Value>,
    /// Dimension name to the key of the referenced row, `None` when the
    /// chain reaches nothing or a filtered-out row.
    pub dimensions: BTreeMap<String, Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionRow {
    pub key: String,
    pub parameters: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MartData {
    pub facts: Vec<FactRow>,
    /// Rows per dimension, sorted by key.
    pub dimensions: BTreeMap<String, Vec<DimensionRow>>,
}

fn values_json(values: &BTreeMap<String, Value>) -> serde_json::Value {
    serde_json::Value::Object(values.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
}

impl FactRow {
    /// Export rendering: plain JSON values, decimals as strings.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.id,
            "measures": values_json(&self.measures),
            "dimensions": self.dimensions,
        })
    }
}

impl DimensionRow {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "key": self.key, "parameters": values_json(&self.parameters) })
    }
}

fn jsonl<T>(rows: &[T], render: impl Fn(&T) -> serde_json::Value) -> String {
    rows.iter().map(|r| render(r).to_string() + "\n").collect()
}

impl MartData {
    pub fn fact_jsonl(&self) -> String {
        jsonl(&self.facts, FactRow::to_json)
    }

    pub fn dimension_jsonl(&self, dimension: &str) -> Result<String> {
        self.dimensions
            .get(dimension)
            .map(|rows| jsonl(rows, DimensionRow::to_json))
            .ok_or_else(|| Error::UnknownClass(dimension.to_string()))
    }

    /// Write `facts.jsonl` and one `dim_<name>.jsonl` per dimension.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut written = vec!["facts.jsonl".to_string()];
        fs::write(dir.join("facts.jsonl"), self.fact_jsonl())?;
        for (name, rows) in &self.dimensions {
            let file = format!("dim_{name}.jsonl");
            fs::write(dir.join(&file), jsonl(rows, DimensionRow::to_json))?;
            written.push(file);
        }
        Ok(written)
    }

    /// The simple-typed parameter columns of a loaded dimension, for
    /// hierarchy inference.
    pub fn sample(&self, mart: &MartDef, dimension: &str) -> Result<Sample> {
        let d = mart.require_dimension(dimension)?;
        let rows = self
            .dimensions
            .get(dimension)
            .ok_or_else(|| Error::UnknownClass(dimension.to_string()))?;
        let columns = d.hierarchy.nodes.clone();
        Ok(Sample {
            rows: rows
                .iter()
                .map(|r| columns.iter().map(|c| r.parameters.get(c).cloned()).collect())
                .collect(),
            columns,
        })
    }
}

enum Getter {
    Stored { attribute: String, path: Vec<String> },
    Calculated(CompiledExpr),
}

impl Getter {
    fn new(ws: &SchemaGraph, anchor: &str, a: &MartAttribute) -> Result<Self> {
        Ok(match &a.source {
            Derivation::Stored { attribute, path } => Getter::Stored {
                attribute: attribute.clone(),
                path: path.clone(),
            },
            Derivation::Calculated { formula } => Getter::Calculated(compile(ws, anchor, formula)?),
        })
    }

    fn get(&self, index: &ObjectIndex, at: usize) -> Result<Option<Value>> {
        match self {
            Getter::Stored { attribute, path } => {
                let mut full = vec![attribute.clone()];
                full.extend(path.iter().cloned());
                Ok(source_value(&index.record(at).values, &full))
            }
            Getter::Calculated(c) => c.evaluate_optional(&index.binding(at)),
        }
    }
}

fn compile(ws: &SchemaGraph, anchor: &str, tree: &ExpressionTree) -> Result<CompiledExpr> {
    EvaluationContext::navigating(ws, anchor, AttributeNaming::Prefixed).compile(tree)
}

fn passes(index: &ObjectIndex, at: usize, filter: &Option<CompiledExpr>) -> Result<bool> {
    match filter {
        Some(c) => c.test(&index.binding(at)),
        None => Ok(true),
    }
}

fn parameters(
    index: &ObjectIndex,
    at: usize,
    getters: &[(String, Getter)],
) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for (name, g) in getters {
        if let Some(v) = g.get(index, at)? {
            out.insert(name.clone(), v);
        }
    }
    Ok(out)
}

/// Per-dimension state while loading: rows by key and the object each
/// class-dimension key stands for.
struct DimLoad<'d> {
    dim: &'d DimensionClass,
    steps: Vec<Step>,
    getters: Vec<(String, Getter)>,
    selection: Option<CompiledExpr>,
    rows: BTreeMap<String, DimensionRow>,
}

/// Build fact and dimension rows from the current warehouse objects.
pub fn load_mart(mart: &MartDef, warehouse: &WarehouseDef, records: Vec<ObjectRecord>) -> Result<MartData> {
    mart.validate()?;
    let fact = mart.require_fact()?;
    let ws = warehouse.schema();
    let index = ObjectIndex::new(&ws, records);

    let measures: Vec<(String, Getter)> = fact
        .measures
        .iter()
        .map(|m| Ok((m.name.clone(), Getter::new(&ws, &fact.class, m)?)))
        .collect::<Result<_>>()?;
    let fact_filter = fact.selection.as_ref().map(|s| compile(&ws, &fact.class, s)).transpose()?;

    let mut loads = Vec::new();
    for d in mart.dimensions.iter().filter(|d| d.parent.is_none()) {
        let dep = d.dependency.as_ref().ok_or_else(|| {
            Error::Unvalidated(format!("dimension '{}' has no dependency", d.name))
        })?;
        let mut load = DimLoad {
            dim: d,
            steps: dep.chain.iter().map(|h| h.step()).collect(),
            getters: d
                .parameters
                .iter()
                .map(|p| Ok((p.name.clone(), Getter::new(&ws, &d.class, p)?)))
                .collect::<Result<_>>()?,
            selection: d.selection.as_ref().map(|s| compile(&ws, &d.class, s)).transpose()?,
            rows: BTreeMap::new(),
        };
        if d.origin == DimensionOrigin::Class {
            for at in index.extent(&d.class) {
                if passes(&index, at, &load.selection)? {
                    let id = index.record(at).id.clone();
                    let row = DimensionRow {
                        key: id.clone(),
                        parameters: parameters(&index, at, &load.getters)?,
                    };
                    load.rows.insert(id, row);
                }
            }
        }
        loads.push(load);
    }

    let mut facts = Vec::new();
    for at in index.extent(&fact.class) {
        if !passes(&index, at, &fact_filter)? {
            continue;
        }
        let rec = index.record(at);
        let mut row = FactRow {
            id: rec.id.clone(),
            measures: parameters(&index, at, &measures)?,
            dimensions: BTreeMap::new(),
        };
        for load in &mut loads {
            let reached = index.navigate(at, &load.steps);
            let holder = match reached.as_slice() {
                [] => None,
                [h] => Some(*h),
                _ => {
                    return Err(Error::AmbiguousLinkage(format!(
                        "fact '{}' reaches {} objects of '{}' for dimension '{}'",
                        rec.id,
                        reached.len(),
                        load.dim.class,
                        load.dim.name
                    )))
                }
            };
            let key = match (holder, &load.dim.origin) {
                (None, _) => None,
                (Some(h), DimensionOrigin::Class) => {
                    let id = &index.record(h).id;
                    load.rows.contains_key(id).then(|| id.clone())
                }
                (Some(h), DimensionOrigin::Date { attribute })
                | (Some(h), DimensionOrigin::Address { attribute }) => {
                    match index.record(h).values.get(attribute) {
                        None => None,
                        Some(v) => {
                            let key = v.to_string();
                            if load.rows.contains_key(&key) {
                                Some(key)
                            } else if !passes(&index, h, &load.selection)? {
                                None
                            } else {
                                let row = DimensionRow {
                                    key: key.clone(),
                                    parameters: parameters(&index, h, &load.getters)?,
                                };
                                load.rows.insert(key.clone(), row);
                                Some(key)
                            }
                        }
                    }
                }
                (Some(_), DimensionOrigin::Specialization) => None,
            };
            row.dimensions.insert(load.dim.name.clone(), key);
        }
        facts.push(row);
    }

    let mut dimensions: BTreeMap<String, Vec<DimensionRow>> = BTreeMap::new();
    for load in &loads {
        dimensions.insert(load.dim.name.clone(), load.rows.values().cloned().collect());
    }
    // Specializations, parents before children.
    let mut pending: Vec<&DimensionClass> =
        mart.dimensions.iter().filter(|d| d.parent.is_some()).collect();
    while !pending.is_empty() {
        let before = pending.len();
        let mut rest = Vec::new();
        for d in pending {
            let parent = d.parent.as_deref().unwrap();
            let Some(parent_rows) = dimensions.get(parent).cloned() else {
                rest.push(d);
                continue;
            };
            let getters: Vec<(String, Getter)> = d
                .parameters
                .iter()
                .map(|p| Ok((p.name.clone(), Getter::new(&ws, &d.class, p)?)))
                .collect::<Result<_>>()?;
            let membership = d.membership.as_ref().map(|s| compile(&ws, &d.class, s)).transpose()?;
            let selection = d.selection.as_ref().map(|s| compile(&ws, &d.class, s)).transpose()?;
            let mut rows = Vec::new();
            for r in parent_rows {
                let Some(at) = index.find(&d.class, &r.key) else {
                    continue;
                };
                if !passes(&index, at, &membership)? || !passes(&index, at, &selection)? {
                    continue;
                }
                let mut params = r.parameters.clone();
                params.extend(parameters(&index, at, &getters)?);
                rows.push(DimensionRow {
                    key: r.key,
                    parameters: params,
                });
            }
            dimensions.insert(d.name.clone(), rows);
        }
        if rest.len() == before {
            return Err(Error::Unvalidated("specializations without a loadable parent".into()));
        }
        pending = rest;
    }

    Ok(MartData { facts, dimensions })
}
