//! Generic SQL rendering of plan steps.
//!
//! Refresh statements read from staging tables the loader fills before
//! each run:
//!
//! - `stg_<S>` for each source class `S`: `object_id`, `class` (the most
//!   specific source class) and every attribute of `S`, inherited ones
//!   included, flattened like warehouse tables. Instances of sub-classes
//!   appear in their super-classes' staging tables too.
//! - `stg_<S>_<attribute>` child tables for collection attributes.
//! - `stg_<L>` for each source link: `source_id`, `position`, `target_id`.
//!
//! `:run_date` is bound to the quantized run date. Day labels call a
//! `day_label(date)` function the target database has to provide.

use std::cell::Cell;
use std::collections::BTreeMap;

use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use super::{stored_attributes, PlanStep};
use crate::error::{Error, Result};
use crate::expr::{
    AttrRef, AttributeNaming, CompiledExpr, EvaluationContext, Expr, ExpressionTree, Op, OpClass,
    ResolvedRef, Step, StepKind,
};
use crate::schema::{AttributeType, SchemaGraph};
use crate::value::Value;
use crate::warehouse::{AttributeKind, ValueSource, WarehouseAttribute, WarehouseDef};

const MAX_IDENTIFIER: usize = 63;
const DECIMAL: &str = "DECIMAL(28,10)";

/// Double-quoted identifier; names over 63 bytes are cut and suffixed
/// with a hash of the full name so that distinct names stay distinct.
pub fn sql_identifier(name: &str) -> String {
    let mut n = name.to_string();
    if n.len() > MAX_IDENTIFIER {
        let digest = hex::encode(Sha256::digest(name.as_bytes()));
        let mut cut = MAX_IDENTIFIER - 9;
        while !n.is_char_boundary(cut) {
            cut -= 1;
        }
        n = format!("{}_{}", &n[..cut], &digest[..8]);
    }
    format!("\"{}\"", n.replace('"', "\"\""))
}

fn q(name: &str) -> String {
    sql_identifier(name)
}

fn sql_type(ty: &str) -> &'static str {
    match ty {
        "string" => "VARCHAR(255)",
        "integer" => "BIGINT",
        "decimal" => DECIMAL,
        "boolean" => "BOOLEAN",
        "date" => "DATE",
        "timestamp" => "TIMESTAMP",
        _ => "VARCHAR(255)",
    }
}

fn names(list: &Json) -> Vec<String> {
    list.as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

fn quoted_list(names: &[String]) -> String {
    names.iter().map(|n| q(n)).collect::<Vec<_>>().join(", ")
}

fn create_table(p: &Json, references: Vec<(Vec<String>, String, Vec<String>)>) -> String {
    let table = p["table"].as_str().unwrap_or_default();
    let key = names(&p["key"]);
    let mut lines: Vec<String> = p["columns"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|c| {
            let n = c["name"].as_str().unwrap_or_default();
            let null = if key.iter().any(|k| k == n) { " NOT NULL" } else { "" };
            format!("  {} {}{null}", q(n), sql_type(c["type"].as_str().unwrap_or_default()))
        })
        .collect();
    if !key.is_empty() {
        lines.push(format!("  PRIMARY KEY ({})", quoted_list(&key)));
    }
    for (cols, target, target_cols) in references {
        lines.push(format!(
            "  FOREIGN KEY ({}) REFERENCES {} ({})",
            quoted_list(&cols),
            q(&target),
            quoted_list(&target_cols)
        ));
    }
    format!("CREATE TABLE {} (\n{}\n)", q(table), lines.join(",\n"))
}

pub(super) fn render_structure(step: &PlanStep) -> Result<Vec<String>> {
    let p = &step.params;
    Ok(match step.kind.as_str() {
        "create_table" => {
            let refs = p["references"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|r| {
                    (
                        names(&r["columns"]),
                        r["table"].as_str().unwrap_or_default().to_string(),
                        names(&r["target"]),
                    )
                })
                .collect();
            vec![create_table(p, refs)]
        }
        "create_child_table" => {
            let key = names(&p["key"]);
            let parent_key = key[..key.len() - 1].to_vec();
            let parent = p["parent"].as_str().unwrap_or_default().to_string();
            vec![create_table(p, vec![(parent_key.clone(), parent, parent_key)])]
        }
        other => {
            return Err(Error::Unvalidated(format!("no SQL rendering for step kind '{other}'")))
        }
    })
}

fn literal(v: &Value) -> String {
    match v {
        Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
        Value::Int(i) => i.to_string(),
        Value::Dec(d) => d.normalize().to_string(),
        Value::Bool(true) => "TRUE".into(),
        Value::Bool(false) => "FALSE".into(),
        Value::Date(d) => format!("DATE '{}'", d.format("%Y-%m-%d")),
        Value::Tuple(_) | Value::List(_) => "NULL".into(),
    }
}

/// Simple leaf columns of a type, as name suffixes (`""` for a simple
/// type, `_Ville` for a tuple component); collections are skipped.
fn leaves(ty: &AttributeType) -> Vec<String> {
    match ty {
        AttributeType::Tuple(cs) => cs
            .iter()
            .flat_map(|c| leaves(&c.ty).into_iter().map(move |s| format!("_{}{s}", c.name)))
            .collect(),
        AttributeType::Set(_) | AttributeType::List(_) => Vec::new(),
        _ => vec![String::new()],
    }
}

/// Collection-typed leaves, as name suffixes.
fn collections(ty: &AttributeType) -> Vec<String> {
    match ty {
        AttributeType::Tuple(cs) => cs
            .iter()
            .flat_map(|c| collections(&c.ty).into_iter().map(move |s| format!("_{}{s}", c.name)))
            .collect(),
        AttributeType::Set(_) | AttributeType::List(_) => vec![String::new()],
        _ => Vec::new(),
    }
}

/// Translates compiled expressions into SQL over staging tables.
struct Translator<'c> {
    compiled: &'c CompiledExpr,
    aliases: &'c Cell<usize>,
}

impl Translator<'_> {
    fn fresh(&self, prefix: &str) -> String {
        let n = self.aliases.get() + 1;
        self.aliases.set(n);
        format!("{prefix}{n}")
    }

    /// FROM items and join conditions following `path` from `start`.
    fn join(&self, path: &[Step], start: &str) -> (Vec<String>, Vec<String>, String) {
        let mut from = Vec::new();
        let mut on = Vec::new();
        let mut cur = start.to_string();
        for s in path {
            match s.kind {
                StepKind::Up => {}
                StepKind::Down => {
                    let t = self.fresh("t");
                    from.push(format!("{} {t}", q(&format!("stg_{}", s.to))));
                    on.push(format!("{t}.\"object_id\" = {cur}.\"object_id\""));
                    cur = t;
                }
                StepKind::Forward | StepKind::Backward => {
                    let (near, far) = if s.kind == StepKind::Forward {
                        ("source_id", "target_id")
                    } else {
                        ("target_id", "source_id")
                    };
                    let l = self.fresh("l");
                    let t = self.fresh("t");
                    from.push(format!("{} {l}", q(&format!("stg_{}", s.link))));
                    from.push(format!("{} {t}", q(&format!("stg_{}", s.to))));
                    on.push(format!("{l}.\"{near}\" = {cur}.\"object_id\""));
                    on.push(format!("{t}.\"object_id\" = {l}.\"{far}\""));
                    cur = t;
                }
            }
        }
        (from, on, cur)
    }

    fn resolved(&self, r: &AttrRef) -> &ResolvedRef {
        &self.compiled.refs[r]
    }

    fn expr(&self, e: &Expr, outer: &str, agg: Option<(&[Step], &str)>) -> String {
        match e {
            Expr::Lit(v) => literal(v),
            Expr::Ref(r) => {
                let rr = self.resolved(r);
                let col = q(&rr.attribute);
                if let Some((path, alias)) = agg {
                    if rr.path == path {
                        return format!("{alias}.{col}");
                    }
                }
                let (from, on, end) = self.join(&rr.path, outer);
                if from.is_empty() {
                    format!("{end}.{col}")
                } else {
                    format!("(SELECT {end}.{col} FROM {} WHERE {})", from.join(", "), on.join(" AND "))
                }
            }
            Expr::Apply { op, args } => self.apply(*op, args, outer, agg),
        }
    }

    fn apply(&self, op: Op, args: &[Expr], outer: &str, agg: Option<(&[Step], &str)>) -> String {
        let a = |i: usize| self.expr(&args[i], outer, agg);
        let infix = |sym: &str| {
            let parts: Vec<String> = (0..args.len()).map(a).collect();
            format!("({})", parts.join(&format!(" {sym} ")))
        };
        match op.class() {
            OpClass::Aggregation => {
                let multi = args[0]
                    .references()
                    .into_iter()
                    .map(|r| self.resolved(r))
                    .find(|r| r.is_multi() && agg.is_none_or(|(p, _)| p != r.path.as_slice()));
                let Some(m) = multi else {
                    let x = a(0);
                    return match op {
                        Op::Count => format!("(CASE WHEN {x} IS NULL THEN 0 ELSE 1 END)"),
                        _ => x,
                    };
                };
                let (from, on, end) = self.join(&m.path, outer);
                let x = self.expr(&args[0], outer, Some((&m.path, &end)));
                let f = match op {
                    Op::Sum => format!("COALESCE(SUM({x}), 0)"),
                    Op::Average => format!("AVG(CAST({x} AS {DECIMAL}))"),
                    Op::Count => format!("COUNT({x})"),
                    Op::Min => format!("MIN({x})"),
                    _ => format!("MAX({x})"),
                };
                format!("(SELECT {f} FROM {} WHERE {})", from.join(", "), on.join(" AND "))
            }
            OpClass::DatePart => {
                let x = a(0);
                match op {
                    Op::Month => format!("EXTRACT(MONTH FROM {x})"),
                    Op::Year => format!("EXTRACT(YEAR FROM {x})"),
                    Op::Quarter => format!("CAST(FLOOR((EXTRACT(MONTH FROM {x}) + 2) / 3) AS BIGINT)"),
                    _ => format!("day_label({x})"),
                }
            }
            _ => match op {
                Op::Divide => format!("(CAST({} AS {DECIMAL}) / {})", a(0), a(1)),
                Op::Not => format!("(NOT {})", a(0)),
                Op::And => infix("AND"),
                Op::Or => infix("OR"),
                other => infix(other.symbol().expect("binary operators have symbols")),
            },
        }
    }
}

/// Renders refresh steps against a warehouse and its source schema.
pub(super) struct RefreshRenderer<'a> {
    def: &'a WarehouseDef,
    source: &'a SchemaGraph,
    aliases: Cell<usize>,
}

impl<'a> RefreshRenderer<'a> {
    pub(super) fn new(def: &'a WarehouseDef, source: &'a SchemaGraph) -> Self {
        RefreshRenderer {
            def,
            source,
            aliases: Cell::new(0),
        }
    }

    fn translate(&self, tree: &ExpressionTree, anchor: &str, local: bool) -> Result<String> {
        let ctx = if local {
            EvaluationContext::local(self.source, anchor, AttributeNaming::Exact)
        } else {
            EvaluationContext::navigating(self.source, anchor, AttributeNaming::Exact)
        };
        let compiled = ctx.compile(tree)?;
        let t = Translator {
            compiled: &compiled,
            aliases: &self.aliases,
        };
        Ok(t.expr(&compiled.tree.root, "s", None))
    }

    /// Column assignments of one attribute into `prefix`-named columns.
    fn assignments(
        &self,
        prefix: &str,
        a: &WarehouseAttribute,
        anchor: &str,
        out: &mut Vec<(String, String)>,
        children: &mut Vec<(String, String)>,
    ) -> Result<()> {
        match &a.source {
            ValueSource::Source { path } => {
                let from = path.join("_");
                for sfx in leaves(&a.ty) {
                    out.push((format!("{prefix}{sfx}"), format!("s.{}", q(&format!("{from}{sfx}")))));
                }
                for sfx in collections(&a.ty) {
                    children.push((format!("{prefix}{sfx}"), format!("{from}{sfx}")));
                }
            }
            ValueSource::Formula { formula } => {
                if a.ty.is_simple() {
                    out.push((prefix.to_string(), self.translate(formula, anchor, false)?));
                }
            }
            ValueSource::UserOwned { .. } => {}
            ValueSource::Group { members } => {
                for m in members {
                    self.assignments(&format!("{prefix}_{}", m.base_name()), m, anchor, out, children)?;
                }
            }
        }
        Ok(())
    }

    fn routed(&self, class: &str) -> Vec<String> {
        self.source
            .classes
            .iter()
            .filter(|sc| super::route(self.def, self.source, &sc.name) == Some(class))
            .map(|sc| literal(&Value::Str(sc.name.clone())))
            .collect()
    }

    fn extracted(&self, class: &str) -> Vec<&'a WarehouseAttribute> {
        stored_attributes(self.def, class)
            .into_iter()
            .filter(|a| a.kind != AttributeKind::Specific)
            .collect()
    }

    fn extracted_columns(&self, class: &str) -> Vec<String> {
        self.extracted(class)
            .iter()
            .flat_map(|a| leaves(&a.ty).into_iter().map(move |s| format!("{}{s}", a.name)))
            .collect()
    }

    fn extract(&self, class: &str) -> Result<Vec<String>> {
        let c = self.def.require_class(class)?;
        let schema = self.def.schema();
        let wrk = format!("wrk_{class}");
        let mut cols = Vec::new();
        let mut children = Vec::new();
        for a in self.extracted(class) {
            let owner = self
                .def
                .classes
                .iter()
                .find(|w| w.attributes.iter().any(|x| std::ptr::eq(x, a)))
                .map_or(c.source_class.as_str(), |w| w.source_class.as_str());
            self.assignments(&a.name, a, owner, &mut cols, &mut children)?;
        }
        let mut lineage = vec![class.to_string()];
        lineage.extend(schema.ancestors(class));
        let mut conditions = vec![format!("s.\"class\" IN ({})", self.routed(class).join(", "))];
        for w in lineage.iter().filter_map(|w| self.def.class(w)) {
            if let Some(p) = &w.selection {
                conditions.push(self.translate(p, &w.source_class, true)?);
            }
        }
        let mut out = Vec::new();
        for (wc, _) in children.iter().rev() {
            out.push(format!("DELETE FROM {}", q(&format!("{wrk}_{wc}"))));
        }
        out.push(format!("DELETE FROM {}", q(&wrk)));
        let mut names = vec![q("object_id")];
        names.extend(cols.iter().map(|(n, _)| q(n)));
        let mut exprs = vec!["s.\"object_id\"".to_string()];
        exprs.extend(cols.iter().map(|(_, e)| e.clone()));
        out.push(format!(
            "INSERT INTO {} ({})\nSELECT {}\nFROM {} s\nWHERE {}",
            q(&wrk),
            names.join(", "),
            exprs.join(",\n       "),
            q(&format!("stg_{}", c.source_class)),
            conditions.join("\n  AND ")
        ));
        for (wc, sc) in &children {
            out.push(format!(
                "INSERT INTO {}\nSELECT x.* FROM {} x\nWHERE x.\"object_id\" IN (SELECT \"object_id\" FROM {})",
                q(&format!("{wrk}_{wc}")),
                q(&format!("stg_{}_{sc}", c.source_class)),
                q(&wrk)
            ));
        }
        Ok(out)
    }

    /// `h` differs from `w` on the extracted columns.
    fn differs(cols: &[String], h: &str, w: &str) -> String {
        if cols.is_empty() {
            return "FALSE".into();
        }
        let same: Vec<String> = cols
            .iter()
            .map(|c| format!("{h}.{0} IS NOT DISTINCT FROM {w}.{0}", q(c)))
            .collect();
        format!("NOT ({})", same.join(" AND "))
    }

    fn link_rows(&self, links: &[String], w: &str) -> String {
        links
            .iter()
            .map(|l| {
                format!(
                    "SELECT {}, l.\"position\", l.\"target_id\" FROM {} l WHERE l.\"source_id\" = {w}.\"object_id\"",
                    literal(&Value::Str(l.clone())),
                    q(&format!("stg_{l}"))
                )
            })
            .collect::<Vec<_>>()
            .join(" UNION ALL ")
    }

    fn append_state(&self, class: &str, links: &[String]) -> Vec<String> {
        let hist = q(&format!("{class}_history"));
        let wrk = q(&format!("wrk_{class}"));
        let cols = self.extracted_columns(class);
        let mut changed = Self::differs(&cols, "h", "w");
        if !links.is_empty() {
            let stored = format!(
                "SELECT hl.\"link\", hl.\"position\", hl.\"target_id\" FROM {} hl WHERE hl.\"object_id\" = h.\"object_id\" AND hl.\"state_id\" = h.\"state_id\"",
                q(&format!("{class}_history_links"))
            );
            let fresh = self.link_rows(links, "w");
            changed = format!(
                "({changed} OR EXISTS ({stored} EXCEPT {fresh}) OR EXISTS ({fresh} EXCEPT {stored}))"
            );
        }
        let mut out = vec![format!(
            "UPDATE {hist} SET \"end\" = :run_date\nWHERE \"end\" IS NULL AND \"object_id\" IN (\n  SELECT w.\"object_id\" FROM {wrk} w, {hist} h\n  WHERE h.\"object_id\" = w.\"object_id\" AND h.\"end\" IS NULL AND {changed})"
        )];
        let mut names = vec![q("object_id"), q("state_id")];
        names.extend(cols.iter().map(|c| q(c)));
        names.extend([q("start"), q("end")]);
        let mut exprs = vec![
            "w.\"object_id\"".to_string(),
            format!("COALESCE((SELECT MAX(p.\"state_id\") FROM {hist} p WHERE p.\"object_id\" = w.\"object_id\"), 0) + 1"),
        ];
        exprs.extend(cols.iter().map(|c| format!("w.{}", q(c))));
        exprs.extend([":run_date".to_string(), "NULL".to_string()]);
        out.push(format!(
            "INSERT INTO {hist} ({})\nSELECT {}\nFROM {wrk} w\nWHERE NOT EXISTS (SELECT 1 FROM {hist} h WHERE h.\"object_id\" = w.\"object_id\" AND h.\"end\" IS NULL)",
            names.join(", "),
            exprs.join(", ")
        ));
        for l in links {
            out.push(format!(
                "INSERT INTO {} (\"object_id\", \"state_id\", \"link\", \"position\", \"target_id\")\nSELECT h.\"object_id\", h.\"state_id\", {}, l.\"position\", l.\"target_id\"\nFROM {hist} h, {} l\nWHERE l.\"source_id\" = h.\"object_id\" AND h.\"start\" = :run_date AND h.\"end\" IS NULL\n  AND h.\"object_id\" IN (SELECT \"object_id\" FROM {wrk})",
                q(&format!("{class}_history_links")),
                literal(&Value::Str(l.clone())),
                q(&format!("stg_{l}"))
            ));
        }
        out
    }

    fn append_attribute(&self, class: &str, attribute: &str) -> Result<Vec<String>> {
        let attr = self
            .extracted(class)
            .into_iter()
            .find(|a| a.name == attribute)
            .ok_or_else(|| Error::UnknownAttribute {
                class: class.to_string(),
                attribute: attribute.to_string(),
            })?;
        let hist = q(&format!("{class}_{attribute}_history"));
        let wrk = q(&format!("wrk_{class}"));
        let cols: Vec<String> = leaves(&attr.ty).into_iter().map(|s| format!("{attribute}{s}")).collect();
        let changed = Self::differs(&cols, "h", "w");
        let mut names = vec![q("object_id"), q("entry_id")];
        names.extend(cols.iter().map(|c| q(c)));
        names.extend([q("start"), q("end")]);
        let mut exprs = vec![
            "w.\"object_id\"".to_string(),
            format!("COALESCE((SELECT MAX(p.\"entry_id\") FROM {hist} p WHERE p.\"object_id\" = w.\"object_id\"), 0) + 1"),
        ];
        exprs.extend(cols.iter().map(|c| format!("w.{}", q(c))));
        exprs.extend([":run_date".to_string(), "NULL".to_string()]);
        Ok(vec![
            format!(
                "UPDATE {hist} SET \"end\" = :run_date\nWHERE \"end\" IS NULL AND \"object_id\" IN (\n  SELECT w.\"object_id\" FROM {wrk} w, {hist} h\n  WHERE h.\"object_id\" = w.\"object_id\" AND h.\"end\" IS NULL AND {changed})"
            ),
            format!(
                "INSERT INTO {hist} ({})\nSELECT {}\nFROM {wrk} w\nWHERE NOT EXISTS (SELECT 1 FROM {hist} h WHERE h.\"object_id\" = w.\"object_id\" AND h.\"end\" IS NULL)",
                names.join(", "),
                exprs.join(", ")
            ),
        ])
    }

    fn insert_new(&self, class: &str, defaults: &Json) -> Result<Vec<String>> {
        let table = q(class);
        let wrk = q(&format!("wrk_{class}"));
        let cols = self.extracted_columns(class);
        let mut names = vec![q("object_id")];
        names.extend(cols.iter().map(|c| q(c)));
        let mut exprs = vec!["w.\"object_id\"".to_string()];
        exprs.extend(cols.iter().map(|c| format!("w.{}", q(c))));
        let specific: BTreeMap<&str, &WarehouseAttribute> = stored_attributes(self.def, class)
            .into_iter()
            .filter(|a| a.kind == AttributeKind::Specific)
            .map(|a| (a.name.as_str(), a))
            .collect();
        for d in defaults.as_array().into_iter().flatten() {
            let name = d["attribute"].as_str().unwrap_or_default();
            let Some(a) = specific.get(name) else { continue };
            let v = Value::from_json(&d["value"], &a.ty).map_err(|m| Error::parse("default value", m))?;
            for (sfx, leaf) in leaf_values(&v, &a.ty) {
                names.push(q(&format!("{name}{sfx}")));
                exprs.push(leaf.map_or("NULL".into(), |l| literal(&l)));
            }
        }
        names.push(q("deleted"));
        exprs.push("FALSE".into());
        Ok(vec![format!(
            "INSERT INTO {table} ({})\nSELECT {}\nFROM {wrk} w\nWHERE NOT EXISTS (SELECT 1 FROM {table} c WHERE c.\"object_id\" = w.\"object_id\")",
            names.join(", "),
            exprs.join(", ")
        )])
    }

    fn overwrite(&self, class: &str) -> Vec<String> {
        let table = q(class);
        let wrk = q(&format!("wrk_{class}"));
        let mut sets: Vec<String> = self
            .extracted_columns(class)
            .iter()
            .map(|c| {
                format!(
                    "{0} = (SELECT w.{0} FROM {wrk} w WHERE w.\"object_id\" = {table}.\"object_id\")",
                    q(c)
                )
            })
            .collect();
        sets.push("\"deleted\" = FALSE".into());
        let mut out = vec![format!(
            "UPDATE {table} SET\n  {}\nWHERE \"object_id\" IN (SELECT \"object_id\" FROM {wrk})",
            sets.join(",\n  ")
        )];
        for a in self.extracted(class) {
            for sfx in collections(&a.ty) {
                let child = format!("{}{sfx}", a.name);
                out.push(format!(
                    "DELETE FROM {} WHERE \"object_id\" IN (SELECT \"object_id\" FROM {wrk})",
                    q(&format!("{class}_{child}"))
                ));
                out.push(format!(
                    "INSERT INTO {} SELECT * FROM {}",
                    q(&format!("{class}_{child}")),
                    q(&format!("wrk_{class}_{child}"))
                ));
            }
        }
        out
    }

    fn copy_link(&self, class: &str, link: &str) -> Vec<String> {
        let wrk = q(&format!("wrk_{class}"));
        vec![
            format!(
                "DELETE FROM {} WHERE \"source_id\" IN (SELECT \"object_id\" FROM {wrk})",
                q(link)
            ),
            format!(
                "INSERT INTO {} (\"source_id\", \"position\", \"target_id\")\nSELECT l.\"source_id\", l.\"position\", l.\"target_id\" FROM {} l\nWHERE l.\"source_id\" IN (SELECT \"object_id\" FROM {wrk})",
                q(link),
                q(&format!("stg_{link}"))
            ),
        ]
    }

    pub(super) fn render(&self, step: &PlanStep) -> Result<Vec<String>> {
        let p = &step.params;
        let class = p["class"].as_str().unwrap_or_default();
        Ok(match step.kind.as_str() {
            "extract" => self.extract(class)?,
            "copy_link" => self.copy_link(class, p["link"].as_str().unwrap_or_default()),
            "append_state" => self.append_state(class, &names(&p["links"])),
            "append_attribute" => self.append_attribute(class, p["attribute"].as_str().unwrap_or_default())?,
            "insert_new" => self.insert_new(class, &p["defaults"])?,
            "overwrite" => self.overwrite(class),
            "tombstone" => vec![format!(
                "UPDATE {} SET \"deleted\" = TRUE\nWHERE \"deleted\" = FALSE AND \"object_id\" NOT IN (SELECT \"object_id\" FROM {})",
                q(class),
                q(&format!("wrk_{class}"))
            )],
            // Folded into `extract` or without a statement of their own.
            _ => Vec::new(),
        })
    }
}

/// Leaf values of a value shaped like `ty`, by name suffix.
fn leaf_values(v: &Value, ty: &AttributeType) -> Vec<(String, Option<Value>)> {
    match ty {
        AttributeType::Tuple(cs) => cs
            .iter()
            .flat_map(|c| {
                let part = match v {
                    Value::Tuple(parts) => parts.iter().find(|(n, _)| n == &c.name).map(|(_, x)| x.clone()),
                    _ => None,
                };
                match part {
                    Some(p) => leaf_values(&p, &c.ty),
                    None => leaves(&c.ty).into_iter().map(|s| (s, None)).collect(),
                }
                .into_iter()
                .map(move |(s, x)| (format!("_{}{s}", c.name), x))
                .collect::<Vec<_>>()
            })
            .collect(),
        AttributeType::Set(_) | AttributeType::List(_) => Vec::new(),
        _ => vec![(String::new(), Some(v.clone()))],
    }
}
