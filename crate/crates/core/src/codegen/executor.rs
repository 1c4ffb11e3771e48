//! Reference executor for neutral refresh plans.
//!
//! Interprets the plan steps against source snapshots and keeps its own
//! object store, so its history can be compared with the temporal store's.
//! A run is atomic: on the first failing step the executor state is left
//! as it was before the run.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value as Json};

use super::{EmissionPlan, Target};
use crate::error::{Error, Result};
use crate::expr::{
    parse_formula, parse_selection, AttributeNaming, Binding, CompiledExpr, EvaluationContext,
};
use crate::objects::ObjectIndex;
use crate::schema::{check_snapshots, AttributeType, KnownObjects, ObjectSnapshot, SchemaGraph};
use crate::temporal::TimeModel;
use crate::value::{Timestamp, Value};
use crate::warehouse::source_value;

#[derive(Debug, Clone, Default)]
struct Program {
    filters: Vec<(String, String)>,
    /// (attribute, anchor, derivation)
    attributes: Vec<(String, String, Json)>,
    links: Vec<String>,
    state: bool,
    historized: Vec<String>,
    defaults: Vec<(String, Value)>,
}

#[derive(Debug, Clone)]
struct Version {
    values: BTreeMap<String, Value>,
    start: Timestamp,
    end: Option<Timestamp>,
    run: u64,
}

#[derive(Debug, Clone, Default)]
struct Entry {
    values: BTreeMap<String, Value>,
    links: BTreeMap<String, Vec<String>>,
    deleted: bool,
    states: Option<Vec<Version>>,
    attributes: BTreeMap<String, Vec<(Option<Value>, Timestamp, u64)>>,
}

#[derive(Debug, Clone, Default)]
struct Stored {
    entries: BTreeMap<String, BTreeMap<String, Entry>>,
    known: KnownObjects,
    last: Option<(u64, Timestamp)>,
}

#[derive(Debug, Clone)]
pub struct ReferenceExecutor {
    time_model: TimeModel,
    routes: BTreeMap<String, String>,
    programs: Vec<(String, Program)>,
    stored: Stored,
}

fn bad_step(id: &str, message: impl Into<String>) -> Error {
    Error::Evaluation(format!("plan step {id}: {}", message.into()))
}

fn text<'a>(params: &'a Json, key: &str, id: &str) -> Result<&'a str> {
    params[key]
        .as_str()
        .ok_or_else(|| bad_step(id, format!("missing '{key}'")))
}

enum Derivation {
    Source(Vec<String>),
    Formula(CompiledExpr),
    Group(Vec<(String, Derivation)>),
}

impl Derivation {
    fn compile(source: &SchemaGraph, anchor: &str, d: &Json) -> Result<Self> {
        Ok(match d["from"].as_str() {
            Some("source") => Derivation::Source(
                serde_json::from_value(d["path"].clone()).map_err(|e| Error::parse("plan", e))?,
            ),
            Some("formula") => {
                let tree = parse_formula(d["formula"].as_str().unwrap_or_default())?;
                let ctx = EvaluationContext::navigating(source, anchor, AttributeNaming::Exact);
                Derivation::Formula(ctx.compile(&tree)?)
            }
            Some("group") => Derivation::Group(
                d["members"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|m| {
                        Ok((
                            m["name"].as_str().unwrap_or_default().to_string(),
                            Derivation::compile(source, anchor, &m["derivation"])?,
                        ))
                    })
                    .collect::<Result<_>>()?,
            ),
            other => return Err(Error::parse("plan", format!("unknown derivation {other:?}"))),
        })
    }

    fn value(&self, s: &ObjectSnapshot, b: &dyn Binding) -> Result<Option<Value>> {
        Ok(match self {
            Derivation::Source(path) => source_value(&s.values, path),
            Derivation::Formula(c) => c.evaluate_optional(b)?,
            Derivation::Group(parts) => {
                let mut out = Vec::new();
                for (n, d) in parts {
                    if let Some(v) = d.value(s, b)? {
                        out.push((n.clone(), v));
                    }
                }
                (!out.is_empty()).then_some(Value::Tuple(out))
            }
        })
    }
}

fn state_of(values: &BTreeMap<String, Value>, links: &BTreeMap<String, Vec<String>>) -> BTreeMap<String, Value> {
    let mut out = values.clone();
    for (l, ts) in links {
        out.insert(l.clone(), Value::List(ts.iter().map(|t| Value::Str(t.clone())).collect()));
    }
    out
}

impl ReferenceExecutor {
    /// Load a neutral refresh plan.
    pub fn new(plan: &EmissionPlan) -> Result<Self> {
        if plan.target != Target::NeutralPlan {
            return Err(Error::parse("plan", "the executor runs neutral plans only"));
        }
        let mut time_model = None;
        let mut routes = BTreeMap::new();
        let mut programs: Vec<(String, Program)> = Vec::new();
        for step in &plan.steps {
            let p = &step.params;
            let id = step.id.as_str();
            if step.kind == "begin_run" {
                let tm: TimeModel = serde_json::from_value(p.clone()).map_err(|e| Error::parse("plan", e))?;
                tm.check()?;
                time_model = Some(tm);
                continue;
            }
            if step.kind == "route" {
                routes.insert(
                    text(p, "source_class", id)?.to_string(),
                    text(p, "class", id)?.to_string(),
                );
                continue;
            }
            if step.kind == "end_run" {
                continue;
            }
            let class = text(p, "class", id)?;
            if programs.last().is_none_or(|(c, _)| c != class) {
                if programs.iter().any(|(c, _)| c == class) {
                    return Err(bad_step(id, format!("steps for '{class}' are not contiguous")));
                }
                programs.push((class.to_string(), Program::default()));
            }
            let prog = &mut programs.last_mut().unwrap().1;
            match step.kind.as_str() {
                "filter" => prog
                    .filters
                    .push((text(p, "anchor", id)?.to_string(), text(p, "predicate", id)?.to_string())),
                "copy" | "compute" => prog.attributes.push((
                    text(p, "attribute", id)?.to_string(),
                    text(p, "anchor", id)?.to_string(),
                    p["derivation"].clone(),
                )),
                "copy_link" => prog.links.push(text(p, "link", id)?.to_string()),
                "append_state" => prog.state = true,
                "append_attribute" => prog.historized.push(text(p, "attribute", id)?.to_string()),
                "insert_new" => {
                    for d in p["defaults"].as_array().into_iter().flatten() {
                        let ty: AttributeType =
                            serde_json::from_value(d["type"].clone()).map_err(|e| Error::parse("plan", e))?;
                        let v = Value::from_json(&d["value"], &ty).map_err(|m| bad_step(id, m))?;
                        prog.defaults.push((text(d, "attribute", id)?.to_string(), v));
                    }
                }
                "extract" | "overwrite" | "tombstone" => {}
                other => return Err(bad_step(id, format!("unknown step kind '{other}'"))),
            }
        }
        Ok(ReferenceExecutor {
            time_model: time_model.ok_or_else(|| Error::parse("plan", "no begin_run step"))?,
            routes,
            programs,
            stored: Stored::default(),
        })
    }

    /// Execute the plan over one batch of snapshots.
    pub fn run(&mut self, source: &SchemaGraph, snapshots: &[ObjectSnapshot], date: Timestamp) -> Result<()> {
        let mut next = self.stored.clone();
        self.run_into(&mut next, source, snapshots, date)?;
        self.stored = next;
        Ok(())
    }

    fn run_into(&self, st: &mut Stored, source: &SchemaGraph, snapshots: &[ObjectSnapshot], date: Timestamp) -> Result<()> {
        let date = self.time_model.quantize(date);
        if let Some((_, last)) = st.last {
            if date <= last {
                return Err(Error::OutOfOrderRun {
                    previous: last.to_string(),
                    requested: date.to_string(),
                });
            }
        }
        let run = st.last.map_or(1, |(n, _)| n + 1);
        check_snapshots(source, snapshots, &st.known)?;

        struct Compiled<'p> {
            program: &'p Program,
            filters: Vec<CompiledExpr>,
            attributes: Vec<(String, Derivation)>,
        }
        let mut compiled: BTreeMap<&str, Compiled> = BTreeMap::new();
        for (class, p) in &self.programs {
            let filters = p
                .filters
                .iter()
                .map(|(anchor, pred)| {
                    EvaluationContext::local(source, anchor, AttributeNaming::Exact).compile(&parse_selection(pred)?)
                })
                .collect::<Result<_>>()?;
            let attributes = p
                .attributes
                .iter()
                .map(|(n, anchor, d)| Ok((n.clone(), Derivation::compile(source, anchor, d)?)))
                .collect::<Result<_>>()?;
            compiled.insert(class, Compiled { program: p, filters, attributes });
        }

        let index = ObjectIndex::from_snapshots(source, snapshots);
        let mut seen = BTreeSet::new();
        'snapshots: for (i, s) in snapshots.iter().enumerate() {
            let Some(class) = self.routes.get(&s.class) else { continue };
            let Some(c) = compiled.get(class.as_str()) else { continue };
            let binding = index.binding(i);
            for f in &c.filters {
                if !f.test(&binding)? {
                    continue 'snapshots;
                }
            }
            let mut values = BTreeMap::new();
            for (n, d) in &c.attributes {
                if let Some(v) = d.value(s, &binding)? {
                    values.insert(n.clone(), v);
                }
            }
            let links: BTreeMap<String, Vec<String>> = c
                .program
                .links
                .iter()
                .filter_map(|l| s.links.get(l).map(|t| (l.clone(), t.clone())))
                .collect();
            seen.insert((class.clone(), s.id.clone()));
            let state = state_of(&values, &links);
            let entry = st
                .entries
                .entry(class.clone())
                .or_default()
                .entry(s.id.clone())
                .or_insert_with(|| Entry {
                    values: c.program.defaults.iter().cloned().collect(),
                    ..Entry::default()
                });
            entry.values.retain(|k, _| k.starts_with("S_"));
            entry.values.extend(values.clone());
            entry.links = links;
            entry.deleted = false;
            if c.program.state {
                let states = entry.states.get_or_insert_with(Vec::new);
                if states.last().is_none_or(|v| v.values != state) {
                    if let Some(last) = states.last_mut() {
                        last.end = Some(date);
                    }
                    states.push(Version {
                        values: state,
                        start: date,
                        end: None,
                        run,
                    });
                }
            }
            for a in &c.program.historized {
                let v = values.get(a).cloned();
                let h = entry.attributes.entry(a.clone()).or_default();
                if h.last().is_none_or(|(x, _, _)| *x != v) {
                    h.push((v, date, run));
                }
            }
        }
        for (class, m) in &mut st.entries {
            for (id, e) in m.iter_mut() {
                if !seen.contains(&(class.clone(), id.clone())) {
                    e.deleted = true;
                }
            }
        }
        st.known.extend(snapshots.iter().map(|s| (s.class.clone(), s.id.clone())));
        st.last = Some((run, date));
        Ok(())
    }

    /// Current values of live objects, as `(class, id, values)`.
    pub fn current(&self) -> Vec<(String, String, BTreeMap<String, Value>)> {
        self.stored
            .entries
            .iter()
            .flat_map(|(c, m)| {
                m.iter()
                    .filter(|(_, e)| !e.deleted)
                    .map(move |(id, e)| (c.clone(), id.clone(), e.values.clone()))
            })
            .collect()
    }

    /// History in the temporal store's export format.
    pub fn history_jsonl(&self) -> String {
        let to_json = |m: &BTreeMap<String, Value>| -> Json {
            Json::Object(m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
        };
        let mut out = String::new();
        for (class, m) in &self.stored.entries {
            for (id, e) in m {
                for (i, v) in e.states.iter().flatten().enumerate() {
                    let line = json!({
                        "class": class,
                        "object_id": id,
                        "state_id": i + 1,
                        "values": to_json(&v.values),
                        "interval": {"start": v.start, "end": v.end},
                        "run": v.run,
                    });
                    out.push_str(&line.to_string());
                    out.push('\n');
                }
                for (attr, h) in &e.attributes {
                    for (i, (v, start, run)) in h.iter().enumerate() {
                        let line = json!({
                            "class": class,
                            "object_id": id,
                            "attribute": attr,
                            "state_id": i + 1,
                            "values": {attr.as_str(): v.as_ref().map(Value::to_json)},
                            "interval": {"start": start, "end": h.get(i + 1).map(|n| n.1)},
                            "run": run,
                        });
                        out.push_str(&line.to_string());
                        out.push('\n');
                    }
                }
            }
        }
        out
    }
}
