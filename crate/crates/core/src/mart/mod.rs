//! Star-shaped data marts derived from the warehouse.

mod deps;
mod hierarchy;
mod load;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use deps::{direct_dependencies, transitive_dependencies, ClassDependency, Hop, Rule, WitnessKind};
pub use hierarchy::{infer_hierarchy, HierarchyGraph, Sample};
pub use load::{load_mart, DimensionRow, FactRow, MartData};

use crate::error::{Error, Result};
use crate::expr::{
    derive_date_parameters, parse_formula, parse_selection, AttrRef, AttributeNaming,
    EvaluationContext, ExpressionTree, TreeKind,
};
use crate::schema::{
    AttributeDef, AttributeType, Cardinality, ClassDef, Link, LinkKind, Multiplicity, SchemaGraph,
};
use crate::temporal::ExtractionRun;
use crate::warehouse::{AttributeKind, WarehouseDef};

/// How a measure or parameter gets its value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum Derivation {
    /// A warehouse attribute, then tuple components.
    Stored {
        attribute: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        path: Vec<String>,
    },
    Calculated { formula: ExpressionTree },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MartAttribute {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: AttributeType,
    pub source: Derivation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactClass {
    pub name: String,
    /// The representative warehouse class.
    pub class: String,
    pub measures: Vec<MartAttribute>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<ExpressionTree>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimensionOrigin {
    /// Objects of a dependent class.
    Class,
    /// Distinct values of a date attribute.
    Date { attribute: String },
    /// Distinct values of an address attribute.
    Address { attribute: String },
    /// Members of the parent dimension selected by class and predicate.
    Specialization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionClass {
    pub name: String,
    pub origin: DimensionOrigin,
    /// Warehouse class the dimension's values come from.
    pub class: String,
    /// Dependency of `class` on the representative class; absent for
    /// specializations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependency: Option<ClassDependency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Own parameters; a specialization also has its parent's.
    pub parameters: Vec<MartAttribute>,
    pub hierarchy: HierarchyGraph,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membership: Option<ExpressionTree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<ExpressionTree>,
}

/// Where a mart class or attribute comes from in the warehouse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub warehouse_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    /// How link cardinalities were read when deriving dependencies.
    pub cardinality_reading: String,
}

const CARDINALITY_READING: &str = "max 1 at the target end";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MartDef {
    pub name: String,
    /// Classes the administrator flagged as representative.
    #[serde(default)]
    pub representatives: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact: Option<FactClass>,
    #[serde(default)]
    pub dimensions: Vec<DimensionClass>,
    /// Fact to dimension associations, (1,1) at the dimension end.
    #[serde(default)]
    pub links: Vec<Link>,
    #[serde(default)]
    pub provenance: BTreeMap<String, Provenance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum DimensionSource {
    Class { class: String },
    Attribute { class: String, attribute: String },
    /// Every dependent class not yet projected.
    AllDependent,
}

/// One entry of a mart operation log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MartOp {
    FlagRepresentative {
        class: String,
    },
    ProjectFact {
        class: String,
        name: String,
    },
    ProjectDimension {
        source: DimensionSource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    SetHierarchy {
        dimension: String,
        edges: Vec<(String, String)>,
    },
    AddHierarchyEdge {
        dimension: String,
        from: String,
        to: String,
    },
    RemoveHierarchyEdge {
        dimension: String,
        from: String,
        to: String,
    },
    SpecializeDimension {
        parent: String,
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class: Option<String>,
        #[serde(default)]
        parameters: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        membership: Option<String>,
    },
    AddMeasure {
        name: String,
        formula: String,
    },
    AddParameter {
        dimension: String,
        name: String,
        formula: String,
    },
    SelectObjects {
        target: String,
        predicate: String,
    },
}

/// Result of a mart operation besides the new definition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MartOutcome {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub added: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// A representative-class candidate and its mean insertion rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub ranking: Vec<ClassScore>,
    /// Classes with a positive score, best first.
    pub recommended: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Rank warehouse classes by mean number of inserted objects per run,
/// ignoring the first run (which inserts everything).
pub fn detect_representative_classes(classes: &[String], runs: &[ExtractionRun]) -> Detection {
    if runs.len() < 2 {
        return Detection {
            diagnostic: Some(format!(
                "insufficient run history: {} run(s), at least 2 needed",
                runs.len()
            )),
            ..Detection::default()
        };
    }
    let later = &runs[1..];
    let mut ranking: Vec<ClassScore> = classes
        .iter()
        .map(|c| {
            let total: u64 = later
                .iter()
                .map(|r| r.counters.get(c).map_or(0, |k| k.inserted))
                .sum();
            ClassScore {
                class: c.clone(),
                score: total as f64 / later.len() as f64,
            }
        })
        .collect();
    ranking.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.class.cmp(&b.class))
    });
    let recommended = ranking
        .iter()
        .filter(|s| s.score > 0.0)
        .map(|s| s.class.clone())
        .collect();
    Detection {
        ranking,
        recommended,
        diagnostic: None,
    }
}

fn base_name(name: &str) -> &str {
    AttributeKind::of_name(name).map_or(name, |k| &name[k.prefix().len()..])
}

/// Attribute names with kind prefixes dropped where that stays unique.
fn display_names<'a>(attrs: &[&'a AttributeDef]) -> Vec<(String, &'a AttributeDef)> {
    attrs
        .iter()
        .map(|a| {
            let base = base_name(&a.name);
            let clash = attrs
                .iter()
                .filter(|o| base_name(&o.name) == base)
                .count()
                > 1;
            let n = if clash { a.name.clone() } else { base.to_string() };
            (n, *a)
        })
        .collect()
}

impl MartDef {
    pub fn new(name: impl Into<String>) -> Self {
        MartDef {
            name: name.into(),
            representatives: Vec::new(),
            fact: None,
            dimensions: Vec::new(),
            links: Vec::new(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn dimension(&self, name: &str) -> Option<&DimensionClass> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    pub fn require_dimension(&self, name: &str) -> Result<&DimensionClass> {
        self.dimension(name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    fn dimension_mut(&mut self, name: &str) -> Result<&mut DimensionClass> {
        self.dimensions
            .iter_mut()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn require_fact(&self) -> Result<&FactClass> {
        self.fact.as_ref().ok_or(Error::NoFact)
    }

    /// Parameters of `dimension`, inherited ones first.
    pub fn all_parameters(&self, dimension: &str) -> Result<Vec<&MartAttribute>> {
        let d = self.require_dimension(dimension)?;
        let mut out = match &d.parent {
            Some(p) => self.all_parameters(p)?,
            None => Vec::new(),
        };
        out.extend(d.parameters.iter());
        Ok(out)
    }

    /// The star schema: fact, dimensions, fact links and specialization
    /// links.
    pub fn schema(&self) -> SchemaGraph {
        let mut classes = Vec::new();
        if let Some(f) = &self.fact {
            classes.push(ClassDef {
                name: f.name.clone(),
                attributes: f
                    .measures
                    .iter()
                    .map(|m| AttributeDef::new(m.name.clone(), m.ty.clone()))
                    .collect(),
                operations: Vec::new(),
            });
        }
        let mut links = self.links.clone();
        for d in &self.dimensions {
            classes.push(ClassDef {
                name: d.name.clone(),
                attributes: d
                    .parameters
                    .iter()
                    .map(|p| AttributeDef::new(p.name.clone(), p.ty.clone()))
                    .collect(),
                operations: Vec::new(),
            });
            if let Some(p) = &d.parent {
                links.push(Link::inheritance(&format!("{}_isa_{p}", d.name), &d.name, p));
            }
        }
        SchemaGraph { classes, links }
    }

    /// Star-shape findings; empty when every dimension hangs off the fact
    /// by exactly one (1,1) link or specializes another dimension.
    pub fn star_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let Some(f) = &self.fact else {
            if !self.dimensions.is_empty() {
                out.push("dimensions without a fact class".into());
            }
            return out;
        };
        for d in &self.dimensions {
            let fact_links: Vec<&Link> = self
                .links
                .iter()
                .filter(|l| l.source == f.name && l.target == d.name)
                .collect();
            match &d.parent {
                Some(p) => {
                    if self.dimension(p).is_none() {
                        out.push(format!("'{}' specializes unknown '{p}'", d.name));
                    }
                    if !fact_links.is_empty() {
                        out.push(format!("specialization '{}' has its own fact link", d.name));
                    }
                }
                None => match fact_links.as_slice() {
                    [l] if l.kind == LinkKind::Association
                        && l.target_multiplicity() == Multiplicity::ONE => {}
                    [_] => out.push(format!("fact link to '{}' is not (1,1)", d.name)),
                    _ => out.push(format!(
                        "'{}' has {} fact links",
                        d.name,
                        fact_links.len()
                    )),
                },
            }
        }
        for m in &f.measures {
            if m.ty.is_complex() {
                out.push(format!("measure '{}' is complex-typed", m.name));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = self.star_violations();
        for d in &self.dimensions {
            if let Some(path) = d.hierarchy.find_cycle() {
                problems.push(format!("hierarchy of '{}' cycles: {}", d.name, path.join(" => ")));
            }
        }
        self.schema().validate()?;
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Unvalidated(problems.join("; ")))
        }
    }

    /// Apply one logged operation; the definition is untouched on error.
    pub fn apply(&mut self, warehouse: &WarehouseDef, op: &MartOp) -> Result<MartOutcome> {
        let mut next = self.clone();
        let outcome = next.apply_in_place(warehouse, op)?;
        next.validate()?;
        *self = next;
        Ok(outcome)
    }

    fn apply_in_place(&mut self, w: &WarehouseDef, op: &MartOp) -> Result<MartOutcome> {
        let ws = w.schema();
        match op {
            MartOp::FlagRepresentative { class } => {
                w.require_class(class)?;
                if !self.representatives.contains(class) {
                    self.representatives.push(class.clone());
                }
                Ok(MartOutcome::default())
            }
            MartOp::ProjectFact { class, name } => self.project_fact(&ws, class, name),
            MartOp::ProjectDimension { source, name } => {
                self.project_dimension(&ws, source, name.as_deref())
            }
            MartOp::SetHierarchy { dimension, edges } => {
                let d = self.dimension_mut(dimension)?;
                d.hierarchy.edges.clear();
                for (a, b) in edges {
                    d.hierarchy.add_edge(a, b)?;
                }
                Ok(MartOutcome::default())
            }
            MartOp::AddHierarchyEdge {
                dimension,
                from,
                to,
            } => {
                self.dimension_mut(dimension)?.hierarchy.add_edge(from, to)?;
                Ok(MartOutcome::default())
            }
            MartOp::RemoveHierarchyEdge {
                dimension,
                from,
                to,
            } => {
                self.dimension_mut(dimension)?
                    .hierarchy
                    .remove_edge(from, to)?;
                Ok(MartOutcome::default())
            }
            MartOp::SpecializeDimension {
                parent,
                name,
                class,
                parameters,
                membership,
            } => {
                let membership = membership.as_deref().map(parse_selection).transpose()?;
                self.specialize_dimension(&ws, parent, name, class.as_deref(), parameters, membership)
            }
            MartOp::AddMeasure { name, formula } => {
                self.add_measure(&ws, name, parse_formula(formula)?)
            }
            MartOp::AddParameter {
                dimension,
                name,
                formula,
            } => self.add_parameter(&ws, dimension, name, parse_formula(formula)?),
            MartOp::SelectObjects { target, predicate } => {
                self.select_objects(&ws, target, parse_selection(predicate)?)
            }
        }
    }

    fn ensure_free_class_name(&self, name: &str) -> Result<()> {
        let taken = self.fact.as_ref().is_some_and(|f| f.name == name)
            || self.dimension(name).is_some();
        if taken || name.is_empty() {
            return Err(Error::NameCollision(name.to_string()));
        }
        Ok(())
    }

    fn project_fact(&mut self, ws: &SchemaGraph, class: &str, name: &str) -> Result<MartOutcome> {
        ws.require_class(class)?;
        if let Some(f) = &self.fact {
            return Err(Error::FactExists(f.name.clone()));
        }
        if !self.representatives.iter().any(|r| r == class) {
            return Err(Error::NotRepresentative(class.to_string()));
        }
        self.ensure_free_class_name(name)?;
        let mut outcome = MartOutcome::default();
        let mut measures = Vec::new();
        for (n, a) in display_names(&ws.all_attributes(class)) {
            if a.ty.is_complex() {
                outcome.diagnostics.push(format!(
                    "attribute '{}' of '{class}' is {} and cannot be a measure",
                    a.name, a.ty
                ));
                continue;
            }
            measures.push(MartAttribute {
                name: n,
                ty: a.ty.clone(),
                source: Derivation::Stored {
                    attribute: a.name.clone(),
                    path: Vec::new(),
                },
            });
        }
        self.fact = Some(FactClass {
            name: name.to_string(),
            class: class.to_string(),
            measures,
            selection: None,
        });
        self.provenance.insert(
            name.to_string(),
            Provenance {
                warehouse_class: class.to_string(),
                attribute: None,
                cardinality_reading: CARDINALITY_READING.into(),
            },
        );
        outcome.added.push(name.to_string());
        Ok(outcome)
    }

    fn dependency(&self, ws: &SchemaGraph, class: &str) -> Result<ClassDependency> {
        let f = self.require_fact()?;
        ws.require_class(class)?;
        transitive_dependencies(ws, &f.class)?
            .into_iter()
            .find(|d| d.to == class)
            .ok_or_else(|| Error::NotDependent {
                class: class.to_string(),
                representative: f.class.clone(),
            })
    }

    fn attach(&mut self, dim: DimensionClass, attribute: Option<String>) -> Result<String> {
        self.ensure_free_class_name(&dim.name)?;
        let fact = self.require_fact()?.name.clone();
        let name = dim.name.clone();
        if dim.parent.is_none() {
            self.links.push(Link::association(
                &format!("{fact}_{name}"),
                &fact,
                &name,
                Cardinality {
                    source: Multiplicity::MANY,
                    target: Multiplicity::ONE,
                },
            ));
        }
        self.provenance.insert(
            name.clone(),
            Provenance {
                warehouse_class: dim.class.clone(),
                attribute,
                cardinality_reading: CARDINALITY_READING.into(),
            },
        );
        self.dimensions.push(dim);
        Ok(name)
    }

    fn class_dimension(&self, ws: &SchemaGraph, class: &str, name: &str) -> Result<DimensionClass> {
        let dependency = self.dependency(ws, class)?;
        let parameters: Vec<MartAttribute> = display_names(&ws.all_attributes(class))
            .into_iter()
            .map(|(n, a)| MartAttribute {
                name: n,
                ty: a.ty.clone(),
                source: Derivation::Stored {
                    attribute: a.name.clone(),
                    path: Vec::new(),
                },
            })
            .collect();
        Ok(DimensionClass {
            name: name.to_string(),
            origin: DimensionOrigin::Class,
            class: class.to_string(),
            dependency: Some(dependency),
            parent: None,
            hierarchy: HierarchyGraph::new(hierarchy_nodes(&parameters)),
            parameters,
            membership: None,
            selection: None,
        })
    }

    fn project_dimension(
        &mut self,
        ws: &SchemaGraph,
        source: &DimensionSource,
        name: Option<&str>,
    ) -> Result<MartOutcome> {
        let mut outcome = MartOutcome::default();
        match source {
            DimensionSource::Class { class } => {
                let dim = self.class_dimension(ws, class, name.unwrap_or(class))?;
                outcome.added.push(self.attach(dim, None)?);
            }
            DimensionSource::AllDependent => {
                let f = self.require_fact()?.class.clone();
                for dep in transitive_dependencies(ws, &f)? {
                    let taken = dep.to == f
                        || self.dimensions.iter().any(|d| {
                            d.class == dep.to && d.origin == DimensionOrigin::Class
                        });
                    if taken || self.dimension(&dep.to).is_some() {
                        continue;
                    }
                    let dim = self.class_dimension(ws, &dep.to, &dep.to)?;
                    outcome.added.push(self.attach(dim, None)?);
                }
            }
            DimensionSource::Attribute { class, attribute } => {
                let dependency = self.dependency(ws, class)?;
                let attr = ws
                    .all_attributes(class)
                    .into_iter()
                    .find(|a| &a.name == attribute || base_name(&a.name) == attribute)
                    .ok_or_else(|| Error::UnknownAttribute {
                        class: class.clone(),
                        attribute: attribute.clone(),
                    })?
                    .clone();
                let base = base_name(&attr.name).to_string();
                let key = MartAttribute {
                    name: base.clone(),
                    ty: attr.ty.clone(),
                    source: Derivation::Stored {
                        attribute: attr.name.clone(),
                        path: Vec::new(),
                    },
                };
                let (origin, parameters) = if attr.ty == AttributeType::Date {
                    let mut ps = vec![key];
                    for (n, f) in derive_date_parameters(ws, &AttrRef::new(class, &attr.name))? {
                        ps.push(MartAttribute {
                            name: n,
                            ty: if f.to_string().starts_with("day_label") {
                                AttributeType::String
                            } else {
                                AttributeType::Integer
                            },
                            source: Derivation::Calculated { formula: f },
                        });
                    }
                    (DimensionOrigin::Date { attribute: attr.name.clone() }, ps)
                } else if attr.is_address() {
                    let ps = match &attr.ty {
                        AttributeType::Tuple(cs) => cs
                            .iter()
                            .map(|c| MartAttribute {
                                name: c.name.clone(),
                                ty: c.ty.clone(),
                                source: Derivation::Stored {
                                    attribute: attr.name.clone(),
                                    path: vec![c.name.clone()],
                                },
                            })
                            .collect(),
                        _ => vec![key],
                    };
                    (DimensionOrigin::Address { attribute: attr.name.clone() }, ps)
                } else {
                    return Err(Error::NotDateOrAddress {
                        class: class.clone(),
                        attribute: attribute.clone(),
                    });
                };
                let dim = DimensionClass {
                    name: name.unwrap_or(&base).to_string(),
                    origin,
                    class: class.clone(),
                    dependency: Some(dependency),
                    parent: None,
                    hierarchy: HierarchyGraph::new(hierarchy_nodes(&parameters)),
                    parameters,
                    membership: None,
                    selection: None,
                };
                outcome.added.push(self.attach(dim, Some(attr.name.clone()))?);
            }
        }
        Ok(outcome)
    }

    fn specialize_dimension(
        &mut self,
        ws: &SchemaGraph,
        parent: &str,
        name: &str,
        class: Option<&str>,
        extra: &[String],
        membership: Option<ExpressionTree>,
    ) -> Result<MartOutcome> {
        let p = self.require_dimension(parent)?.clone();
        if !matches!(p.origin, DimensionOrigin::Class | DimensionOrigin::Specialization) {
            return Err(Error::InvalidRestructure(format!(
                "'{parent}' is built from attribute values and cannot be specialized"
            )));
        }
        let class = class.unwrap_or(&p.class).to_string();
        ws.require_class(&class)?;
        if !ws.is_a(&class, &p.class) {
            return Err(Error::NotDependent {
                class,
                representative: p.class.clone(),
            });
        }
        let inherited: Vec<String> = self
            .all_parameters(parent)?
            .iter()
            .map(|a| a.name.clone())
            .collect();
        let attrs = ws.all_attributes(&class);
        let mut parameters: Vec<MartAttribute> = Vec::new();
        for e in extra {
            let a = attrs
                .iter()
                .find(|a| &a.name == e || base_name(&a.name) == e)
                .ok_or_else(|| Error::UnknownAttribute {
                    class: class.clone(),
                    attribute: e.clone(),
                })?;
            let n = base_name(&a.name).to_string();
            if inherited.contains(&n) || parameters.iter().any(|x| x.name == n) {
                return Err(Error::NameCollision(n));
            }
            parameters.push(MartAttribute {
                name: n,
                ty: a.ty.clone(),
                source: Derivation::Stored {
                    attribute: a.name.clone(),
                    path: Vec::new(),
                },
            });
        }
        if let Some(m) = &membership {
            check_tree(ws, &class, m, TreeKind::Selection)?;
        }
        let mut hierarchy = p.hierarchy.clone();
        hierarchy.nodes.extend(hierarchy_nodes(&parameters));
        let dim = DimensionClass {
            name: name.to_string(),
            origin: DimensionOrigin::Specialization,
            class,
            dependency: None,
            parent: Some(parent.to_string()),
            parameters,
            hierarchy,
            membership,
            selection: None,
        };
        Ok(MartOutcome {
            added: vec![self.attach(dim, None)?],
            diagnostics: Vec::new(),
        })
    }

    fn add_measure(&mut self, ws: &SchemaGraph, name: &str, formula: ExpressionTree) -> Result<MartOutcome> {
        let f = self.require_fact()?;
        let ty = check_tree(ws, &f.class, &formula, TreeKind::Calculation)?;
        if ty.is_complex() {
            return Err(Error::ComplexType(format!("measure '{name}' would be {ty}")));
        }
        if f.measures.iter().any(|m| m.name == name) {
            return Err(Error::NameCollision(name.to_string()));
        }
        self.fact.as_mut().unwrap().measures.push(MartAttribute {
            name: name.to_string(),
            ty,
            source: Derivation::Calculated { formula },
        });
        Ok(MartOutcome::default())
    }

    fn add_parameter(
        &mut self,
        ws: &SchemaGraph,
        dimension: &str,
        name: &str,
        formula: ExpressionTree,
    ) -> Result<MartOutcome> {
        let d = self.require_dimension(dimension)?;
        let ty = check_tree(ws, &d.class, &formula, TreeKind::Calculation)?;
        if self.all_parameters(dimension)?.iter().any(|p| p.name == name) {
            return Err(Error::NameCollision(name.to_string()));
        }
        let d = self.dimension_mut(dimension)?;
        if ty.is_simple() {
            d.hierarchy.nodes.push(name.to_string());
        }
        d.parameters.push(MartAttribute {
            name: name.to_string(),
            ty,
            source: Derivation::Calculated { formula },
        });
        Ok(MartOutcome::default())
    }

    fn select_objects(
        &mut self,
        ws: &SchemaGraph,
        target: &str,
        predicate: ExpressionTree,
    ) -> Result<MartOutcome> {
        if let Some(f) = self.fact.as_mut().filter(|f| f.name == target) {
            check_tree(ws, &f.class, &predicate, TreeKind::Selection)?;
            f.selection = Some(predicate);
            return Ok(MartOutcome::default());
        }
        let d = self.dimension_mut(target)?;
        check_tree(ws, &d.class, &predicate, TreeKind::Selection)?;
        d.selection = Some(predicate);
        Ok(MartOutcome::default())
    }
}

fn hierarchy_nodes(parameters: &[MartAttribute]) -> Vec<String> {
    parameters
        .iter()
        .filter(|p| p.ty.is_simple())
        .map(|p| p.name.clone())
        .collect()
}

/// Compile `tree` against the warehouse with navigation from `anchor`.
fn check_tree(ws: &SchemaGraph, anchor: &str, tree: &ExpressionTree, kind: TreeKind) -> Result<AttributeType> {
    if kind == TreeKind::Selection && tree.kind != TreeKind::Selection {
        return Err(Error::Validation {
            diagnostics: vec![crate::expr::Diagnostic {
                code: "not-boolean".into(),
                message: "a selection must be a boolean tree".into(),
                node: "root".into(),
            }],
        });
    }
    let ctx = EvaluationContext::navigating(ws, anchor, AttributeNaming::Prefixed);
    Ok(ctx.compile(tree)?.result_type)
}
