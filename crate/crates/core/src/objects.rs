//! In-memory object extents with link navigation.
//!
//! A record carries every value of its object, inherited attributes
//! included, so moving up or down an inheritance link stays on the same
//! record. Each object appears once, under its most specific class.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Binding, Column, ResolvedRef, Step, StepKind};
use crate::schema::{ObjectSnapshot, SchemaGraph};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    pub class: String,
    #[serde(default)]
    pub values: BTreeMap<String, Value>,
    #[serde(default)]
    pub links: BTreeMap<String, Vec<String>>,
}

impl From<&ObjectSnapshot> for ObjectRecord {
    fn from(s: &ObjectSnapshot) -> Self {
        ObjectRecord {
            id: s.id.clone(),
            class: s.class.clone(),
            values: s.values.clone(),
            links: s.links.clone(),
        }
    }
}

pub struct ObjectIndex<'a> {
    schema: &'a SchemaGraph,
    records: Vec<ObjectRecord>,
    by_id: HashMap<String, Vec<usize>>,
    /// (link, target id) to the records pointing at it.
    reverse: HashMap<(String, String), Vec<usize>>,
    /// (class, ancestor) memo for `is_a`.
    lineage: HashMap<String, Vec<String>>,
}

impl<'a> ObjectIndex<'a> {
    pub fn new(schema: &'a SchemaGraph, records: Vec<ObjectRecord>) -> Self {
        let mut by_id: HashMap<String, Vec<usize>> = HashMap::new();
        let mut reverse: HashMap<(String, String), Vec<usize>> = HashMap::new();
        let mut lineage = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            by_id.entry(r.id.clone()).or_default().push(i);
            for (link, targets) in &r.links {
                for t in targets {
                    reverse.entry((link.clone(), t.clone())).or_default().push(i);
                }
            }
            lineage.entry(r.class.clone()).or_insert_with(|| {
                let mut l = vec![r.class.clone()];
                l.extend(schema.ancestors(&r.class));
                l
            });
        }
        ObjectIndex {
            schema,
            records,
            by_id,
            reverse,
            lineage,
        }
    }

    pub fn from_snapshots(schema: &'a SchemaGraph, snapshots: &[ObjectSnapshot]) -> Self {
        Self::new(schema, snapshots.iter().map(ObjectRecord::from).collect())
    }

    pub fn schema(&self) -> &SchemaGraph {
        self.schema
    }

    pub fn records(&self) -> &[ObjectRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &ObjectRecord {
        &self.records[i]
    }

    fn is_a(&self, i: usize, class: &str) -> bool {
        self.lineage[&self.records[i].class]
            .iter()
            .any(|c| c == class)
    }

    /// Position of object `id` as an instance of `class` (deep).
    pub fn find(&self, class: &str, id: &str) -> Option<usize> {
        self.by_id
            .get(id)?
            .iter()
            .copied()
            .find(|&i| self.is_a(i, class))
    }

    /// Deep extent of `class`, in record order.
    pub fn extent(&self, class: &str) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.is_a(i, class))
            .collect()
    }

    fn step(&self, from: usize, step: &Step) -> Vec<usize> {
        let r = &self.records[from];
        match step.kind {
            StepKind::Up => vec![from],
            StepKind::Down => {
                if self.is_a(from, &step.to) {
                    vec![from]
                } else {
                    Vec::new()
                }
            }
            StepKind::Forward => r
                .links
                .get(&step.link)
                .map(|ids| {
                    ids.iter()
                        .filter_map(|id| self.find(&step.to, id))
                        .collect()
                })
                .unwrap_or_default(),
            StepKind::Backward => self
                .reverse
                .get(&(step.link.clone(), r.id.clone()))
                .map(|v| {
                    v.iter()
                        .copied()
                        .filter(|&i| self.is_a(i, &step.to))
                        .collect()
                })
                .unwrap_or_default(),
        }
    }

    /// Records reached from `from` along `path`, with duplicates kept in
    /// traversal order.
    pub fn navigate(&self, from: usize, path: &[Step]) -> Vec<usize> {
        let mut current = vec![from];
        for s in path {
            current = current.iter().flat_map(|&i| self.step(i, s)).collect();
        }
        current
    }

    pub fn binding(&self, at: usize) -> ObjectBinding<'_, 'a> {
        ObjectBinding { index: self, at }
    }
}

/// Binds references to the values reachable from one record.
pub struct ObjectBinding<'i, 'a> {
    index: &'i ObjectIndex<'a>,
    at: usize,
}

impl Binding for ObjectBinding<'_, '_> {
    fn lookup(&self, r: &ResolvedRef) -> Result<Column> {
        let reached = self.index.navigate(self.at, &r.path);
        let value = |i: usize| self.index.records[i].values.get(&r.attribute).cloned();
        if r.is_multi() {
            return Ok(Column::Many(reached.into_iter().map(value).collect()));
        }
        match reached.as_slice() {
            [] => Ok(Column::One(None)),
            [i] => Ok(Column::One(value(*i))),
            _ => Err(Error::Evaluation(format!(
                "reference \"{}\" reaches {} objects along a single-valued path",
                r.reference,
                reached.len()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{evaluate, parse_formula, AttributeNaming, EvaluationContext};
    use crate::schema::{AttributeType, Cardinality, ClassDef, Link, Multiplicity};

    fn schema() -> SchemaGraph {
        SchemaGraph::new(
            vec![
                ClassDef::new("Personnes").with_attribute("nom", AttributeType::String),
                ClassDef::new("Praticiens").with_attribute("specialite", AttributeType::String),
                ClassDef::new("Actes").with_attribute("Prix", AttributeType::Integer),
            ],
            vec![
                Link::inheritance("isa", "Praticiens", "Personnes"),
                Link::association(
                    "Prescrit_par",
                    "Actes",
                    "Praticiens",
                    Cardinality {
                        source: Multiplicity::MANY,
                        target: Multiplicity::ONE,
                    },
                ),
            ],
        )
        .unwrap()
    }

    fn rec(id: &str, class: &str, values: &[(&str, Value)], links: &[(&str, &str)]) -> ObjectRecord {
        ObjectRecord {
            id: id.into(),
            class: class.into(),
            values: values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            links: links
                .iter()
                .map(|(k, v)| (k.to_string(), vec![v.to_string()]))
                .collect(),
        }
    }

    fn index(s: &SchemaGraph) -> ObjectIndex<'_> {
        ObjectIndex::new(
            s,
            vec![
                rec(
                    "p1",
                    "Praticiens",
                    &[("nom", Value::Str("Durand".into())), ("specialite", Value::Str("ORL".into()))],
                    &[],
                ),
                rec("a1", "Actes", &[("Prix", Value::Int(20))], &[("Prescrit_par", "p1")]),
                rec("a2", "Actes", &[("Prix", Value::Int(30))], &[("Prescrit_par", "p1")]),
            ],
        )
    }

    #[test]
    fn deep_extent_and_lookup() {
        let s = schema();
        let ix = index(&s);
        assert_eq!(ix.extent("Personnes"), vec![0]);
        assert_eq!(ix.find("Personnes", "p1"), Some(0));
        assert_eq!(ix.find("Actes", "p1"), None);
    }

    #[test]
    fn forward_navigation_through_inheritance() {
        let s = schema();
        let ix = index(&s);
        let ctx = EvaluationContext::navigating(&s, "Actes", AttributeNaming::Exact);
        let v = evaluate(
            &parse_formula(r#""Personnes.nom" = 'Durand'"#).unwrap(),
            &ctx,
            &ix.binding(1),
        )
        .unwrap();
        assert_eq!(v, Value::Bool(true));
    }

    #[test]
    fn backward_navigation_is_multi_valued() {
        let s = schema();
        let ix = index(&s);
        let ctx = EvaluationContext::navigating(&s, "Praticiens", AttributeNaming::Exact);
        let v = evaluate(&parse_formula(r#"sum("Actes.Prix")"#).unwrap(), &ctx, &ix.binding(0)).unwrap();
        assert_eq!(v, Value::Int(50));
    }
}
