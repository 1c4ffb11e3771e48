//! Structure and refresh script generation.
//!
//! Every emission first builds a neutral plan: an ordered list of steps,
//! each with a kind, JSON parameters and the definition element it comes
//! from. The SQL target renders those same steps as statements.

mod executor;
mod sql;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

pub use executor::ReferenceExecutor;
pub use sql::sql_identifier;

use crate::error::{Error, Result};
use crate::mart::{DimensionClass, MartDef};
use crate::schema::{AttributeType, LinkKind, SchemaGraph};
use crate::warehouse::{AttributeKind, ValueSource, WarehouseAttribute, WarehouseDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    NeutralPlan,
    GenericSql,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::NeutralPlan => "neutral-plan",
            Target::GenericSql => "generic-sql",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neutral-plan" | "plan" => Ok(Target::NeutralPlan),
            "generic-sql" | "sql" => Ok(Target::GenericSql),
            other => Err(Error::Parse {
                what: "target".into(),
                message: format!("unknown target '{other}'"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub id: String,
    pub kind: String,
    pub params: Json,
    /// Definition element the step comes from, e.g. `class:Actes`.
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionPlan {
    pub target: Target,
    pub steps: Vec<PlanStep>,
}

impl EmissionPlan {
    /// The emitted document: JSON for the neutral plan, `;\n`-separated
    /// statements for SQL.
    pub fn render(&self) -> String {
        match self.target {
            Target::NeutralPlan => {
                let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
                s.push('\n');
                s
            }
            Target::GenericSql => self
                .steps
                .iter()
                .map(|s| {
                    let mut stmt = s.params["statement"].as_str().unwrap_or_default().to_string();
                    stmt.push_str(";\n");
                    stmt
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("plan", e))
    }

    /// Step id to provenance.
    pub fn provenance(&self) -> Vec<(&str, &str)> {
        self.steps
            .iter()
            .map(|s| (s.id.as_str(), s.provenance.as_str()))
            .collect()
    }

    pub fn steps_of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a PlanStep> + 'a {
        self.steps.iter().filter(move |s| s.kind == kind)
    }
}

/// What `emit_structure` works from.
#[derive(Debug, Clone, Copy)]
pub enum Definition<'a> {
    Warehouse {
        def: &'a WarehouseDef,
        source: &'a SchemaGraph,
    },
    Mart(&'a MartDef),
}

#[derive(Default)]
struct Builder {
    steps: Vec<PlanStep>,
}

impl Builder {
    fn push(&mut self, kind: &str, params: Json, provenance: String) {
        let id = format!("s{:04}", self.steps.len() + 1);
        self.steps.push(PlanStep {
            id,
            kind: kind.to_string(),
            params,
            provenance,
        });
    }

    fn finish(self, target: Target, render: impl Fn(&PlanStep) -> Result<Vec<String>>) -> Result<EmissionPlan> {
        match target {
            Target::NeutralPlan => Ok(EmissionPlan {
                target,
                steps: self.steps,
            }),
            Target::GenericSql => {
                let mut out = Builder::default();
                for s in &self.steps {
                    for stmt in render(s)? {
                        out.push(&s.kind, json!({ "statement": stmt }), s.provenance.clone());
                    }
                }
                Ok(EmissionPlan {
                    target,
                    steps: out.steps,
                })
            }
        }
    }
}

fn unvalidated(e: Error) -> Error {
    match e {
        Error::Unvalidated(_) => e,
        other => Error::Unvalidated(other.to_string()),
    }
}

/// A column of a table descriptor.
fn column(name: &str, ty: &str) -> Json {
    json!({ "name": name, "type": ty })
}

fn scalar_type(ty: &AttributeType) -> &'static str {
    match ty {
        AttributeType::String => "string",
        AttributeType::Integer => "integer",
        AttributeType::Decimal => "decimal",
        AttributeType::Boolean => "boolean",
        AttributeType::Date => "date",
        _ => unreachable!("complex types are flattened"),
    }
}

/// Flatten an attribute into columns; collections become child tables.
/// `key` holds the key columns a child table inherits from its parent.
fn flatten(
    table: &str,
    prefix: &str,
    ty: &AttributeType,
    key: &[Json],
    columns: &mut Vec<Json>,
    children: &mut Vec<Json>,
) {
    match ty {
        AttributeType::Tuple(cs) => {
            for c in cs {
                flatten(table, &format!("{prefix}_{}", c.name), &c.ty, key, columns, children);
            }
        }
        AttributeType::Set(e) | AttributeType::List(e) => {
            let child = format!("{table}_{prefix}");
            let mut child_key = key.to_vec();
            child_key.push(column(&format!("{prefix}_element_id"), "integer"));
            let mut cols = child_key.clone();
            let mut grand = Vec::new();
            flatten(&child, "value", e, &child_key, &mut cols, &mut grand);
            children.push(json!({
                "table": child,
                "parent": table,
                "attribute": prefix,
                "ordered": matches!(ty, AttributeType::List(_)),
                "key": child_key.iter().map(|k| k["name"].clone()).collect::<Vec<_>>(),
                "columns": cols,
            }));
            children.extend(grand);
        }
        simple => columns.push(column(prefix, scalar_type(simple))),
    }
}

fn table_steps(
    b: &mut Builder,
    table: &str,
    key: Vec<Json>,
    attributes: &[(String, AttributeType)],
    extra: Vec<Json>,
    references: Json,
    provenance: &str,
) {
    let mut columns = key.clone();
    let mut children = Vec::new();
    for (name, ty) in attributes {
        flatten(table, name, ty, &key, &mut columns, &mut children);
    }
    columns.extend(extra);
    b.push(
        "create_table",
        json!({
            "table": table,
            "key": key.iter().map(|k| k["name"].clone()).collect::<Vec<_>>(),
            "columns": columns,
            "references": references,
        }),
        provenance.to_string(),
    );
    for c in children {
        b.push("create_child_table", c, provenance.to_string());
    }
}

/// Warehouse classes ordered super-classes first, then definition order.
fn class_order(def: &WarehouseDef) -> Vec<&str> {
    let schema = def.schema();
    let mut out: Vec<&str> = Vec::new();
    let mut remaining: Vec<&str> = def.classes.iter().map(|c| c.name.as_str()).collect();
    while !remaining.is_empty() {
        let (ready, rest): (Vec<&str>, Vec<&str>) = remaining.iter().partition(|c| {
            schema
                .direct_superclasses(c)
                .all(|s| out.contains(&s) || !def.classes.iter().any(|d| d.name == s))
        });
        if ready.is_empty() {
            out.extend(rest);
            break;
        }
        out.extend(ready);
        remaining = rest;
    }
    out
}

/// Attributes held by a class table (inherited ones first).
fn stored_attributes<'a>(def: &'a WarehouseDef, class: &str) -> Vec<&'a WarehouseAttribute> {
    let schema = def.schema();
    let mut lineage: Vec<String> = schema.ancestors(class);
    lineage.reverse();
    lineage.push(class.to_string());
    lineage
        .iter()
        .filter_map(|c| def.class(c))
        .flat_map(|c| c.attributes.iter())
        .collect()
}

fn warehouse_structure(def: &WarehouseDef) -> Builder {
    let mut b = Builder::default();
    let object_key = || vec![column("object_id", "string")];
    for class in class_order(def) {
        let attrs = stored_attributes(def, class);
        let prov = format!("class:{class}");
        let all: Vec<(String, AttributeType)> =
            attrs.iter().map(|a| (a.name.clone(), a.ty.clone())).collect();
        table_steps(
            &mut b,
            class,
            object_key(),
            &all,
            vec![column("deleted", "boolean")],
            json!([]),
            &prov,
        );
        let extracted: Vec<(String, AttributeType)> = all
            .iter()
            .filter(|(n, _)| AttributeKind::of_name(n) != Some(AttributeKind::Specific))
            .cloned()
            .collect();
        table_steps(
            &mut b,
            &format!("wrk_{class}"),
            object_key(),
            &extracted,
            Vec::new(),
            json!([]),
            &prov,
        );
        if def.is_class_historized(class) {
            let mut key = object_key();
            key.push(column("state_id", "integer"));
            table_steps(
                &mut b,
                &format!("{class}_history"),
                key,
                &extracted,
                vec![column("start", "timestamp"), column("end", "timestamp")],
                json!([{ "columns": ["object_id"], "table": class, "target": ["object_id"] }]),
                &historization_provenance(def, class),
            );
            let links: Vec<&str> = lineage_links(def, class);
            if !links.is_empty() {
                b.push(
                    "create_table",
                    json!({
                        "table": format!("{class}_history_links"),
                        "key": ["object_id", "state_id", "link", "position"],
                        "columns": [
                            column("object_id", "string"),
                            column("state_id", "integer"),
                            column("link", "string"),
                            column("position", "integer"),
                            column("target_id", "string"),
                        ],
                        "references": [{
                            "columns": ["object_id", "state_id"],
                            "table": format!("{class}_history"),
                            "target": ["object_id", "state_id"],
                        }],
                    }),
                    historization_provenance(def, class),
                );
            }
        }
        for (hc, a) in &def.historization.attributes {
            if hc != class && !def.schema().is_a(class, hc) {
                continue;
            }
            let Some(attr) = attrs.iter().find(|x| &x.name == a) else {
                continue;
            };
            let mut key = object_key();
            key.push(column("entry_id", "integer"));
            table_steps(
                &mut b,
                &format!("{class}_{a}_history"),
                key,
                &[(a.clone(), attr.ty.clone())],
                vec![column("start", "timestamp"), column("end", "timestamp")],
                json!([{ "columns": ["object_id"], "table": class, "target": ["object_id"] }]),
                &format!("historization:{hc}.{a}"),
            );
        }
    }
    for l in def.links.iter().filter(|l| l.kind != LinkKind::Inheritance) {
        b.push(
            "create_table",
            json!({
                "table": l.name,
                "key": ["source_id", "position"],
                "columns": [
                    column("source_id", "string"),
                    column("position", "integer"),
                    column("target_id", "string"),
                ],
                "references": [],
            }),
            format!("link:{}", l.name),
        );
    }
    b
}

fn historization_provenance(def: &WarehouseDef, class: &str) -> String {
    let schema = def.schema();
    let lineage = std::iter::once(class.to_string()).chain(schema.ancestors(class));
    for c in lineage {
        if def.historization.classes.contains(&c) {
            return format!("historization:{c}");
        }
        if let Some(e) = def.historization.environment_of(&c) {
            return format!("environment:{}", e.name);
        }
    }
    format!("historization:{class}")
}

/// Non-inheritance links leaving `class` or one of its super-classes.
fn lineage_links<'a>(def: &'a WarehouseDef, class: &str) -> Vec<&'a str> {
    let schema = def.schema();
    let mut lineage = vec![class.to_string()];
    lineage.extend(schema.ancestors(class));
    def.links
        .iter()
        .filter(|l| l.kind != LinkKind::Inheritance && lineage.contains(&l.source))
        .map(|l| l.name.as_str())
        .collect()
}

fn dimension_order(mart: &MartDef) -> Vec<&DimensionClass> {
    let mut out: Vec<&DimensionClass> = Vec::new();
    let mut remaining: Vec<&DimensionClass> = mart.dimensions.iter().collect();
    while !remaining.is_empty() {
        let (ready, rest): (Vec<_>, Vec<_>) = remaining.into_iter().partition(|d| {
            d.parent
                .as_ref()
                .is_none_or(|p| out.iter().any(|o| &o.name == p))
        });
        if ready.is_empty() {
            out.extend(rest);
            break;
        }
        out.extend(ready);
        remaining = rest;
    }
    out
}

fn mart_structure(mart: &MartDef) -> Result<Builder> {
    let fact = mart.require_fact()?;
    let mut b = Builder::default();
    let key = || vec![column("key", "string")];
    for d in dimension_order(mart) {
        let attrs: Vec<(String, AttributeType)> =
            d.parameters.iter().map(|p| (p.name.clone(), p.ty.clone())).collect();
        let references = match &d.parent {
            Some(p) => json!([{ "columns": ["key"], "table": p, "target": ["key"] }]),
            None => json!([]),
        };
        table_steps(&mut b, &d.name, key(), &attrs, Vec::new(), references, &format!("dimension:{}", d.name));
    }
    let roots: Vec<&DimensionClass> = mart.dimensions.iter().filter(|d| d.parent.is_none()).collect();
    let measures: Vec<(String, AttributeType)> =
        fact.measures.iter().map(|m| (m.name.clone(), m.ty.clone())).collect();
    let fks: Vec<Json> = roots.iter().map(|d| column(&format!("{}_key", d.name), "string")).collect();
    let references: Vec<Json> = roots
        .iter()
        .map(|d| json!({ "columns": [format!("{}_key", d.name)], "table": d.name, "target": ["key"] }))
        .collect();
    table_steps(
        &mut b,
        &fact.name,
        vec![column("id", "string")],
        &measures,
        fks,
        Json::Array(references),
        &format!("fact:{}", fact.name),
    );
    Ok(b)
}

/// Structure-creation plan for a warehouse or mart.
pub fn emit_structure(definition: Definition<'_>, target: Target) -> Result<EmissionPlan> {
    match definition {
        Definition::Warehouse { def, source } => {
            def.validate(source).map_err(unvalidated)?;
            warehouse_structure(def).finish(target, sql::render_structure)
        }
        Definition::Mart(mart) => {
            mart.validate().map_err(unvalidated)?;
            mart_structure(mart)?.finish(target, sql::render_structure)
        }
    }
}

fn derivation(a: &WarehouseAttribute) -> Option<Json> {
    Some(match &a.source {
        ValueSource::Source { path } => json!({ "from": "source", "path": path }),
        ValueSource::Formula { formula } => json!({ "from": "formula", "formula": formula.to_string() }),
        ValueSource::UserOwned { .. } => return None,
        ValueSource::Group { members } => json!({
            "from": "group",
            "members": members
                .iter()
                .filter_map(|m| derivation(m).map(|d| json!({ "name": m.base_name(), "derivation": d })))
                .collect::<Vec<_>>(),
        }),
    })
}

fn refresh_plan(def: &WarehouseDef, source: &SchemaGraph) -> Builder {
    let schema = def.schema();
    let mut b = Builder::default();
    b.push(
        "begin_run",
        json!({
            "granularity": def.time_model.granularity,
            "refresh_period": def.time_model.refresh_period,
        }),
        "time_model".into(),
    );
    for sc in &source.classes {
        if let Some(class) = route(def, source, &sc.name) {
            b.push(
                "route",
                json!({ "source_class": sc.name, "class": class }),
                format!("class:{class}"),
            );
        }
    }
    for class in class_order(def) {
        let c = def.class(class).expect("ordered from the definition");
        let mut lineage = vec![class.to_string()];
        lineage.extend(schema.ancestors(class));
        for w in lineage.iter().filter_map(|w| def.class(w)) {
            if let Some(p) = &w.selection {
                b.push(
                    "filter",
                    json!({ "class": class, "anchor": w.source_class, "predicate": p.to_string() }),
                    format!("selection:{}", w.name),
                );
            }
        }
        for w in lineage.iter().filter_map(|w| def.class(w)) {
            for a in &w.attributes {
                let Some(d) = derivation(a) else { continue };
                let kind = match &a.source {
                    ValueSource::Formula { .. } => "compute",
                    _ => "copy",
                };
                b.push(
                    kind,
                    json!({ "class": class, "attribute": a.name, "anchor": w.source_class, "derivation": d }),
                    format!("attribute:{}.{}", w.name, a.name),
                );
            }
        }
        b.push("extract", json!({ "class": class }), format!("class:{class}"));
        for l in lineage_links(def, class) {
            b.push("copy_link", json!({ "class": class, "link": l }), format!("link:{l}"));
        }
        if def.is_class_historized(class) {
            b.push(
                "append_state",
                json!({ "class": class, "links": lineage_links(def, class) }),
                historization_provenance(def, class),
            );
        }
        for (hc, a) in &def.historization.attributes {
            if hc == class || schema.is_a(class, hc) {
                b.push(
                    "append_attribute",
                    json!({ "class": class, "attribute": a }),
                    format!("historization:{hc}.{a}"),
                );
            }
        }
        let defaults: Vec<Json> = lineage
            .iter()
            .filter_map(|w| def.class(w))
            .flat_map(|w| &w.attributes)
            .filter(|a| a.kind == AttributeKind::Specific)
            .filter_map(|a| {
                a.default_value()
                    .map(|v| json!({ "attribute": a.name, "type": a.ty, "value": v.to_json() }))
            })
            .collect();
        b.push(
            "insert_new",
            json!({ "class": class, "defaults": defaults }),
            format!("class:{}", c.name),
        );
        b.push(
            "overwrite",
            json!({ "class": class, "preserve_prefix": AttributeKind::Specific.prefix() }),
            format!("class:{}", c.name),
        );
        b.push("tombstone", json!({ "class": class }), format!("class:{}", c.name));
    }
    b.push("end_run", json!({}), "time_model".into());
    b
}

/// The warehouse class a source class's objects are stored under: its own
/// projection, or the nearest projected super-class.
fn route<'a>(def: &'a WarehouseDef, source: &SchemaGraph, class: &str) -> Option<&'a str> {
    let mut queue = std::collections::VecDeque::from([class.to_string()]);
    let mut seen = std::collections::BTreeSet::new();
    while let Some(c) = queue.pop_front() {
        if let Some(w) = def.projection_of(&c) {
            return Some(&w.name);
        }
        if seen.insert(c.clone()) {
            queue.extend(source.direct_superclasses(&c).map(str::to_string));
        }
    }
    None
}

/// Refresh procedure: filter by selections, compute values, detect
/// changes, append history, insert and overwrite extracted values (never
/// specific ones), and tombstone objects missing from the batch.
pub fn emit_refresh(def: &WarehouseDef, source: &SchemaGraph, target: Target) -> Result<EmissionPlan> {
    def.validate(source).map_err(unvalidated)?;
    let plan = refresh_plan(def, source);
    let renderer = sql::RefreshRenderer::new(def, source);
    plan.finish(target, |s| renderer.render(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ClassDef, Component};
    use crate::warehouse::WarehouseOp;

    fn setup() -> (SchemaGraph, WarehouseDef) {
        let source = SchemaGraph::new(
            vec![ClassDef::new("Actes")
                .with_attribute("Code", AttributeType::String)
                .with_attribute("Quantite", AttributeType::Integer)
                .with_attribute(
                    "Lieu",
                    AttributeType::Tuple(vec![
                        Component::new("Ville", AttributeType::String),
                        Component::new("Codes", AttributeType::Set(Box::new(AttributeType::Integer))),
                    ]),
                )],
            vec![],
        )
        .unwrap();
        let mut def = WarehouseDef::new();
        def.apply(&source, &WarehouseOp::ProjectClass { class: "Actes".into() })
            .unwrap();
        (source, def)
    }

    #[test]
    fn tuples_flatten_and_sets_get_child_tables() {
        let (source, def) = setup();
        let plan = emit_structure(Definition::Warehouse { def: &def, source: &source }, Target::NeutralPlan).unwrap();
        let tables: Vec<&str> = plan
            .steps
            .iter()
            .map(|s| s.params["table"].as_str().unwrap())
            .collect();
        assert_eq!(tables, ["Actes", "Actes_D_Lieu_Codes", "wrk_Actes", "wrk_Actes_D_Lieu_Codes"]);
        let cols: Vec<&str> = plan.steps[0].params["columns"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["name"].as_str().unwrap())
            .collect();
        assert_eq!(cols, ["object_id", "D_Code", "D_Quantite", "D_Lieu_Ville", "deleted"]);
    }

    #[test]
    fn no_marks_means_no_append_steps() {
        let (source, def) = setup();
        let plan = emit_refresh(&def, &source, Target::NeutralPlan).unwrap();
        assert_eq!(plan.steps_of_kind("append_state").count(), 0);
        assert_eq!(plan.steps_of_kind("append_attribute").count(), 0);
        assert_eq!(plan.steps_of_kind("overwrite").count(), 1);
    }

    #[test]
    fn historized_attribute_gets_compare_and_append() {
        let (source, mut def) = setup();
        def.apply(
            &source,
            &WarehouseOp::MarkAttributeHistorized {
                class: "Actes".into(),
                attribute: "D_Quantite".into(),
            },
        )
        .unwrap();
        let plan = emit_refresh(&def, &source, Target::NeutralPlan).unwrap();
        let steps: Vec<_> = plan.steps_of_kind("append_attribute").collect();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].params["attribute"], "D_Quantite");
        assert_eq!(steps[0].provenance, "historization:Actes.D_Quantite");
    }

    #[test]
    fn emission_is_deterministic_and_fully_attributed() {
        let (source, def) = setup();
        for target in [Target::NeutralPlan, Target::GenericSql] {
            let a = emit_refresh(&def, &source, target).unwrap().render();
            let b = emit_refresh(&def, &source, target).unwrap().render();
            assert_eq!(a, b);
            let plan = emit_structure(Definition::Warehouse { def: &def, source: &source }, target).unwrap();
            assert!(plan.steps.iter().all(|s| !s.provenance.is_empty()));
        }
    }

    #[test]
    fn unvalidated_definitions_are_refused() {
        let (source, mut def) = setup();
        def.classes[0].source_class = "Ghost".into();
        let err = emit_refresh(&def, &source, Target::NeutralPlan).unwrap_err();
        assert_eq!(err.kind(), "unvalidated-definition");
    }
}
