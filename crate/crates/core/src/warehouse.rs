//! Warehouse definition: a materialized view over the source schema.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{
    parse_formula, parse_selection, AttributeNaming, CompiledExpr, EvaluationContext,
    ExpressionTree, TreeKind,
};
use crate::objects::{ObjectIndex, ObjectRecord};
use crate::schema::{
    AttributeDef, AttributeType, ClassDef, Component, Link, LinkKind, ObjectSnapshot,
    SchemaGraph, Semantic,
};
use crate::temporal::{Environment, Historization, TimeModel};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Derived,
    Calculated,
    Specific,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 3] = [
        AttributeKind::Derived,
        AttributeKind::Calculated,
        AttributeKind::Specific,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            AttributeKind::Derived => "D_",
            AttributeKind::Calculated => "C_",
            AttributeKind::Specific => "S_",
        }
    }

    pub fn of_name(name: &str) -> Option<AttributeKind> {
        Self::ALL.into_iter().find(|k| name.starts_with(k.prefix()))
    }

    /// `name` with this kind's prefix, added unless already there.
    pub fn prefixed(self, name: &str) -> String {
        if name.starts_with(self.prefix()) {
            name.to_string()
        } else {
            format!("{}{name}", self.prefix())
        }
    }
}

fn strip_prefix(name: &str) -> &str {
    AttributeKind::of_name(name).map_or(name, |k| &name[k.prefix().len()..])
}

/// Where an attribute's value comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum ValueSource {
    /// A source attribute, then tuple components.
    Source { path: Vec<String> },
    Formula { formula: ExpressionTree },
    UserOwned {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<Value>,
    },
    /// Attributes grouped into one tuple; kept whole so that splitting
    /// restores them.
    Group { members: Vec<WarehouseAttribute> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarehouseAttribute {
    pub name: String,
    pub kind: AttributeKind,
    #[serde(rename = "type")]
    pub ty: AttributeType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<Semantic>,
    pub source: ValueSource,
}

impl WarehouseAttribute {
    /// The name without its kind prefix.
    pub fn base_name(&self) -> &str {
        strip_prefix(&self.name)
    }

    pub fn default_value(&self) -> Option<Value> {
        match &self.source {
            ValueSource::UserOwned { default } => default.clone(),
            ValueSource::Group { members } => {
                let parts: Vec<(String, Value)> = members
                    .iter()
                    .filter_map(|m| m.default_value().map(|v| (m.base_name().to_string(), v)))
                    .collect();
                (!parts.is_empty()).then_some(Value::Tuple(parts))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    /// Projected on request.
    Explicit,
    /// Pulled in by type closure.
    Closure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedClass {
    pub name: String,
    pub source_class: String,
    pub origin: Origin,
    pub attributes: Vec<WarehouseAttribute>,
    #[serde(default)]
    pub operations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<ExpressionTree>,
}

impl DerivedClass {
    pub fn attribute(&self, name: &str) -> Option<&WarehouseAttribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute {
                class: self.name.clone(),
                attribute: name.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Restructure {
    RenameClass {
        class: String,
        new_name: String,
    },
    RenameAttribute {
        class: String,
        attribute: String,
        new_name: String,
    },
    DeleteAttribute {
        class: String,
        attribute: String,
    },
    Group {
        class: String,
        attributes: Vec<String>,
        name: String,
    },
    Split {
        class: String,
        attribute: String,
    },
    DeleteClass {
        class: String,
    },
}

/// One entry of the warehouse operation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WarehouseOp {
    ProjectClass {
        class: String,
    },
    SetSelection {
        class: String,
        predicate: String,
    },
    AddSpecificAttribute {
        class: String,
        name: String,
        #[serde(rename = "type")]
        ty: AttributeType,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<serde_json::Value>,
    },
    AddCalculatedAttribute {
        class: String,
        name: String,
        formula: String,
    },
    Restructure {
        restructure: Restructure,
    },
    MarkAttributeHistorized {
        class: String,
        attribute: String,
    },
    MarkClassHistorized {
        class: String,
    },
    CreateEnvironment {
        name: String,
        classes: Vec<String>,
        #[serde(default)]
        links: Vec<String>,
    },
    DeleteEnvironment {
        name: String,
    },
    SetTimeModel {
        time_model: TimeModel,
    },
}

/// What an operation did besides changing the definition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    /// Classes added, the requested one first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub added: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarehouseDef {
    pub classes: Vec<DerivedClass>,
    pub links: Vec<Link>,
    #[serde(default)]
    pub time_model: TimeModel,
    #[serde(default)]
    pub historization: Historization,
}

impl WarehouseDef {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn class(&self, name: &str) -> Option<&DerivedClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn require_class(&self, name: &str) -> Result<&DerivedClass> {
        self.class(name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    fn class_mut(&mut self, name: &str) -> Result<&mut DerivedClass> {
        self.classes
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    /// The warehouse class projected from `source_class`.
    pub fn projection_of(&self, source_class: &str) -> Option<&DerivedClass> {
        self.classes.iter().find(|c| c.source_class == source_class)
    }

    /// The warehouse schema graph (derived classes and projected links).
    pub fn schema(&self) -> SchemaGraph {
        SchemaGraph {
            classes: self
                .classes
                .iter()
                .map(|c| ClassDef {
                    name: c.name.clone(),
                    attributes: c
                        .attributes
                        .iter()
                        .map(|a| AttributeDef {
                            name: a.name.clone(),
                            ty: a.ty.clone(),
                            semantic: a.semantic,
                        })
                        .collect(),
                    operations: c.operations.clone(),
                })
                .collect(),
            links: self.links.clone(),
        }
    }

    /// Apply one logged operation. The definition is left untouched on error.
    pub fn apply(&mut self, source: &SchemaGraph, op: &WarehouseOp) -> Result<Outcome> {
        let mut next = self.clone();
        let outcome = next.apply_in_place(source, op)?;
        next.schema().validate()?;
        *self = next;
        Ok(outcome)
    }

    fn apply_in_place(&mut self, source: &SchemaGraph, op: &WarehouseOp) -> Result<Outcome> {
        match op {
            WarehouseOp::ProjectClass { class } => self.project_class(source, class),
            WarehouseOp::SetSelection { class, predicate } => {
                self.set_selection(source, class, parse_selection(predicate)?)?;
                Ok(Outcome::default())
            }
            WarehouseOp::AddSpecificAttribute {
                class,
                name,
                ty,
                default,
            } => {
                let default = default
                    .as_ref()
                    .filter(|d| !d.is_null())
                    .map(|d| {
                        Value::from_json(d, ty).map_err(|expected| {
                            Error::InvalidType(format!("default for '{name}' must be {expected}"))
                        })
                    })
                    .transpose()?;
                self.add_specific_attribute(class, name, ty.clone(), default)?;
                Ok(Outcome::default())
            }
            WarehouseOp::AddCalculatedAttribute {
                class,
                name,
                formula,
            } => {
                self.add_calculated_attribute(source, class, name, parse_formula(formula)?)?;
                Ok(Outcome::default())
            }
            WarehouseOp::Restructure { restructure } => {
                self.restructure(restructure)?;
                Ok(Outcome::default())
            }
            WarehouseOp::MarkAttributeHistorized { class, attribute } => {
                let warnings = self.mark_attribute_historized(class, attribute)?;
                Ok(Outcome {
                    warnings,
                    ..Outcome::default()
                })
            }
            WarehouseOp::MarkClassHistorized { class } => {
                let warnings = self.mark_class_historized(class)?;
                Ok(Outcome {
                    warnings,
                    ..Outcome::default()
                })
            }
            WarehouseOp::CreateEnvironment {
                name,
                classes,
                links,
            } => {
                self.create_environment(name, classes, links)?;
                Ok(Outcome::default())
            }
            WarehouseOp::DeleteEnvironment { name } => {
                self.historization.delete_environment(name)?;
                Ok(Outcome::default())
            }
            WarehouseOp::SetTimeModel { time_model } => {
                time_model.check()?;
                self.time_model = *time_model;
                Ok(Outcome::default())
            }
        }
    }

    /// Project `class` and its type closure (super-classes and components,
    /// transitively), then every source link whose endpoints are both
    /// projected. Projecting an already projected class changes nothing.
    pub fn project_class(&mut self, source: &SchemaGraph, class: &str) -> Result<Outcome> {
        source.require_class(class)?;
        let mut outcome = Outcome::default();
        let mut queue = VecDeque::from([(class.to_string(), Origin::Explicit)]);
        let mut seen = BTreeSet::new();
        while let Some((c, origin)) = queue.pop_front() {
            if !seen.insert(c.clone()) {
                continue;
            }
            if self.projection_of(&c).is_none() {
                if self.class(&c).is_some() {
                    return Err(Error::NameCollision(c));
                }
                let def = source.require_class(&c)?;
                self.classes.push(DerivedClass {
                    name: c.clone(),
                    source_class: c.clone(),
                    origin,
                    attributes: def
                        .attributes
                        .iter()
                        .map(|a| WarehouseAttribute {
                            name: AttributeKind::Derived.prefixed(&a.name),
                            kind: AttributeKind::Derived,
                            ty: a.ty.clone(),
                            semantic: a.semantic,
                            source: ValueSource::Source {
                                path: vec![a.name.clone()],
                            },
                        })
                        .collect(),
                    operations: def.operations.clone(),
                    selection: None,
                });
                outcome.added.push(c.clone());
            }
            for l in &source.links {
                let pulls = matches!(l.kind, LinkKind::Inheritance | LinkKind::Composition);
                if pulls && l.source == c {
                    queue.push_back((l.target.clone(), Origin::Closure));
                }
            }
        }
        self.project_links(source);
        Ok(outcome)
    }

    fn project_links(&mut self, source: &SchemaGraph) {
        for l in &source.links {
            if self.links.iter().any(|w| w.name == l.name) {
                continue;
            }
            let (Some(s), Some(t)) = (self.projection_of(&l.source), self.projection_of(&l.target))
            else {
                continue;
            };
            let mut link = l.clone();
            link.source = s.name.clone();
            link.target = t.name.clone();
            self.links.push(link);
        }
    }

    /// Closure and well-formedness findings; empty when the definition is
    /// a closed view of `source`.
    pub fn closure_violations(&self, source: &SchemaGraph) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.classes {
            for l in &source.links {
                if l.source != c.source_class {
                    continue;
                }
                let what = match l.kind {
                    LinkKind::Inheritance => "super-class",
                    LinkKind::Composition => "component",
                    LinkKind::Association => continue,
                };
                if self.projection_of(&l.target).is_none() {
                    out.push(format!(
                        "{what} '{}' of '{}' is not projected",
                        l.target, c.name
                    ));
                }
            }
        }
        for l in &self.links {
            for end in [&l.source, &l.target] {
                if self.class(end).is_none() {
                    out.push(format!("link '{}' endpoint '{end}' is not a warehouse class", l.name));
                }
            }
        }
        for l in &source.links {
            let both = self.projection_of(&l.source).is_some() && self.projection_of(&l.target).is_some();
            if both && !self.links.iter().any(|w| w.name == l.name) {
                out.push(format!("link '{}' between projected classes is missing", l.name));
            }
        }
        out
    }

    /// Full definition check: schema validity, closure, attribute prefixes.
    pub fn validate(&self, source: &SchemaGraph) -> Result<()> {
        self.schema().validate()?;
        let mut problems = self.closure_violations(source);
        for c in &self.classes {
            if source.class(&c.source_class).is_none() {
                problems.push(format!("source class '{}' of '{}' is missing", c.source_class, c.name));
            }
            for a in &c.attributes {
                if AttributeKind::of_name(&a.name) != Some(a.kind) {
                    problems.push(format!("attribute '{}' does not carry the {:?} prefix", a.name, a.kind));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ClosureViolation(problems.join("; ")))
        }
    }

    pub fn set_selection(
        &mut self,
        source: &SchemaGraph,
        class: &str,
        predicate: ExpressionTree,
    ) -> Result<()> {
        let source_class = self.require_class(class)?.source_class.clone();
        check_selection(source, &source_class, &predicate)?;
        self.class_mut(class)?.selection = Some(predicate);
        Ok(())
    }

    fn ensure_free(&self, class: &str, name: &str) -> Result<()> {
        let schema = self.schema();
        if schema.find_attribute(class, name).is_some() {
            return Err(Error::DuplicateName {
                scope: format!("attribute of class {class}"),
                name: name.to_string(),
            });
        }
        Ok(())
    }

    pub fn add_specific_attribute(
        &mut self,
        class: &str,
        name: &str,
        ty: AttributeType,
        default: Option<Value>,
    ) -> Result<String> {
        self.require_class(class)?;
        ty.check()?;
        let name = AttributeKind::Specific.prefixed(name);
        self.ensure_free(class, &name)?;
        let default = default.map(Value::normalized);
        if let Some(d) = &default {
            if !d.conforms_to(&ty) {
                return Err(Error::InvalidType(format!(
                    "default {d} of '{name}' does not conform to {ty}"
                )));
            }
        }
        self.class_mut(class)?.attributes.push(WarehouseAttribute {
            name: name.clone(),
            kind: AttributeKind::Specific,
            ty,
            semantic: None,
            source: ValueSource::UserOwned { default },
        });
        Ok(name)
    }

    pub fn add_calculated_attribute(
        &mut self,
        source: &SchemaGraph,
        class: &str,
        name: &str,
        formula: ExpressionTree,
    ) -> Result<String> {
        let source_class = self.require_class(class)?.source_class.clone();
        let compiled =
            EvaluationContext::navigating(source, &source_class, AttributeNaming::Exact).compile(&formula)?;
        let name = AttributeKind::Calculated.prefixed(name);
        self.ensure_free(class, &name)?;
        self.class_mut(class)?.attributes.push(WarehouseAttribute {
            name: name.clone(),
            kind: AttributeKind::Calculated,
            ty: compiled.result_type,
            semantic: None,
            source: ValueSource::Formula { formula },
        });
        Ok(name)
    }

    pub fn restructure(&mut self, op: &Restructure) -> Result<()> {
        match op {
            Restructure::RenameClass { class, new_name } => self.rename_class(class, new_name),
            Restructure::RenameAttribute {
                class,
                attribute,
                new_name,
            } => self.rename_attribute(class, attribute, new_name),
            Restructure::DeleteAttribute { class, attribute } => {
                let c = self.class_mut(class)?;
                let i = c.position(attribute)?;
                c.attributes.remove(i);
                self.historization.forget_attribute(class, attribute);
                Ok(())
            }
            Restructure::Group {
                class,
                attributes,
                name,
            } => self.group(class, attributes, name),
            Restructure::Split { class, attribute } => self.split(class, attribute),
            Restructure::DeleteClass { class } => self.delete_class(class),
        }
    }

    fn rename_class(&mut self, class: &str, new_name: &str) -> Result<()> {
        self.require_class(class)?;
        if class == new_name {
            return Ok(());
        }
        if new_name.is_empty() {
            return Err(Error::InvalidRestructure("class names cannot be empty".into()));
        }
        if self.class(new_name).is_some() {
            return Err(Error::NameCollision(new_name.to_string()));
        }
        self.class_mut(class)?.name = new_name.to_string();
        for l in &mut self.links {
            if l.source == class {
                l.source = new_name.to_string();
            }
            if l.target == class {
                l.target = new_name.to_string();
            }
        }
        self.historization.rename_class(class, new_name);
        Ok(())
    }

    fn rename_attribute(&mut self, class: &str, attribute: &str, new_name: &str) -> Result<()> {
        let c = self.require_class(class)?;
        let kind = c.attribute(attribute)
            .ok_or_else(|| Error::UnknownAttribute {
                class: class.to_string(),
                attribute: attribute.to_string(),
            })?
            .kind;
        if let Some(other) = AttributeKind::of_name(new_name) {
            if other != kind {
                return Err(Error::InvalidRestructure(format!(
                    "'{new_name}' carries the prefix of another attribute kind"
                )));
            }
        }
        let new_name = kind.prefixed(new_name);
        if new_name == attribute {
            return Ok(());
        }
        self.ensure_free(class, &new_name)?;
        let c = self.class_mut(class)?;
        let i = c.position(attribute)?;
        c.attributes[i].name = new_name.clone();
        self.historization.rename_attribute(class, attribute, &new_name);
        Ok(())
    }

    fn group(&mut self, class: &str, members: &[String], name: &str) -> Result<()> {
        if members.len() < 2 {
            return Err(Error::InvalidRestructure(
                "group needs at least two attributes".into(),
            ));
        }
        let c = self.require_class(class)?;
        let mut positions = Vec::new();
        for m in members {
            let p = c.position(m)?;
            if positions.contains(&p) {
                return Err(Error::InvalidRestructure(format!("'{m}' is listed twice")));
            }
            if self.historization.is_attribute_historized(class, m) {
                return Err(Error::InvalidRestructure(format!(
                    "'{m}' is historized and cannot be grouped"
                )));
            }
            positions.push(p);
        }
        let kind = c.attributes[positions[0]].kind;
        if positions.iter().any(|&p| c.attributes[p].kind != kind) {
            return Err(Error::InvalidRestructure(
                "grouped attributes must share one kind".into(),
            ));
        }
        let grouped: Vec<WarehouseAttribute> =
            positions.iter().map(|&p| c.attributes[p].clone()).collect();
        let components: Vec<Component> = grouped
            .iter()
            .map(|a| Component::new(a.base_name(), a.ty.clone()))
            .collect();
        let ty = AttributeType::Tuple(components);
        ty.check()?;
        let name = kind.prefixed(name);
        let first = *positions.iter().min().unwrap();
        let mut remaining: Vec<WarehouseAttribute> = c
            .attributes
            .iter()
            .enumerate()
            .filter(|(i, _)| !positions.contains(i))
            .map(|(_, a)| a.clone())
            .collect();
        if remaining.iter().any(|a| a.name == name) {
            return Err(Error::NameCollision(name));
        }
        remaining.insert(
            first,
            WarehouseAttribute {
                name: name.clone(),
                kind,
                ty,
                semantic: None,
                source: ValueSource::Group { members: grouped },
            },
        );
        self.class_mut(class)?.attributes = remaining;
        self.ensure_unique_attributes(class)
    }

    fn split(&mut self, class: &str, attribute: &str) -> Result<()> {
        let c = self.require_class(class)?;
        let i = c.position(attribute)?;
        let a = c.attributes[i].clone();
        let AttributeType::Tuple(components) = &a.ty else {
            return Err(Error::InvalidRestructure(format!(
                "'{attribute}' is not tuple-typed"
            )));
        };
        if self.historization.is_attribute_historized(class, attribute) {
            return Err(Error::InvalidRestructure(format!(
                "'{attribute}' is historized and cannot be split"
            )));
        }
        let parts: Vec<WarehouseAttribute> = match &a.source {
            ValueSource::Group { members } => members.clone(),
            other => components
                .iter()
                .map(|comp| WarehouseAttribute {
                    name: a.kind.prefixed(&comp.name),
                    kind: a.kind,
                    ty: comp.ty.clone(),
                    semantic: None,
                    source: match other {
                        ValueSource::Source { path } => {
                            let mut p = path.clone();
                            p.push(comp.name.clone());
                            ValueSource::Source { path: p }
                        }
                        ValueSource::UserOwned { default } => ValueSource::UserOwned {
                            default: match default {
                                Some(Value::Tuple(vs)) => vs
                                    .iter()
                                    .find(|(n, _)| n == &comp.name)
                                    .map(|(_, v)| v.clone()),
                                _ => None,
                            },
                        },
                        _ => unreachable!("formulas never produce tuples"),
                    },
                })
                .collect(),
        };
        let c = self.class_mut(class)?;
        c.attributes.splice(i..=i, parts);
        self.ensure_unique_attributes(class)
    }

    fn ensure_unique_attributes(&self, class: &str) -> Result<()> {
        let c = self.require_class(class)?;
        let mut seen = BTreeSet::new();
        for a in &c.attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::NameCollision(format!("{class}.{}", a.name)));
            }
        }
        Ok(())
    }

    /// Remove a class and its incident links. Classes that others inherit
    /// from or are composed of cannot be removed.
    fn delete_class(&mut self, class: &str) -> Result<()> {
        self.require_class(class)?;
        if let Some(l) = self.links.iter().find(|l| {
            l.target == class && matches!(l.kind, LinkKind::Inheritance | LinkKind::Composition)
        }) {
            return Err(Error::ClosureViolation(format!(
                "'{class}' is required by '{}' through {} link '{}'",
                l.source, l.kind, l.name
            )));
        }
        let removed: Vec<String> = self
            .links
            .iter()
            .filter(|l| l.source == class || l.target == class)
            .map(|l| l.name.clone())
            .collect();
        self.links.retain(|l| l.source != class && l.target != class);
        self.classes.retain(|c| c.name != class);
        self.historization.forget_class(class, &removed);
        Ok(())
    }

    pub fn mark_attribute_historized(&mut self, class: &str, attribute: &str) -> Result<Vec<String>> {
        let c = self.require_class(class)?;
        let a = c.attribute(attribute).ok_or_else(|| Error::UnknownAttribute {
            class: class.to_string(),
            attribute: attribute.to_string(),
        })?;
        if a.kind == AttributeKind::Specific {
            return Err(Error::NotHistorizable {
                class: class.to_string(),
                attribute: attribute.to_string(),
                reason: "specific attributes are owned by users".into(),
            });
        }
        let redundant = self.is_class_historized(class);
        self.historization
            .attributes
            .insert((class.to_string(), attribute.to_string()));
        Ok(if redundant {
            vec![format!(
                "'{class}' is already historized as a class; attribute history is redundant"
            )]
        } else {
            Vec::new()
        })
    }

    pub fn mark_class_historized(&mut self, class: &str) -> Result<Vec<String>> {
        self.require_class(class)?;
        self.historization.classes.insert(class.to_string());
        Ok(self.redundancy_warnings(&[class.to_string()]))
    }

    fn redundancy_warnings(&self, classes: &[String]) -> Vec<String> {
        self.historization
            .attributes
            .iter()
            .filter(|(c, _)| classes.contains(c))
            .map(|(c, a)| format!("attribute history of {c}.{a} is redundant with class history"))
            .collect()
    }

    pub fn create_environment(
        &mut self,
        name: &str,
        classes: &[String],
        links: &[String],
    ) -> Result<Vec<String>> {
        for c in classes {
            self.require_class(c)?;
        }
        let mut resolved = Vec::new();
        for l in links {
            let link = self
                .links
                .iter()
                .find(|w| &w.name == l)
                .ok_or_else(|| Error::UnknownLink(l.clone()))?;
            resolved.push(link.clone());
        }
        self.historization.create_environment(Environment {
            name: name.to_string(),
            classes: classes.iter().cloned().collect(),
            links: links.iter().cloned().collect(),
        }, &resolved)?;
        Ok(self.redundancy_warnings(classes))
    }

    /// Whether objects of `class` keep generic-object history: the class,
    /// or one of its warehouse super-classes, is historized directly or
    /// through an environment.
    pub fn is_class_historized(&self, class: &str) -> bool {
        let schema = self.schema();
        std::iter::once(class.to_string())
            .chain(schema.ancestors(class))
            .any(|c| self.historization.covers_class(&c))
    }

    /// Extract warehouse objects from a source batch: route each snapshot
    /// to its nearest projected class, apply selections, and compute
    /// derived and calculated values. Specific attributes are left out.
    pub fn extract(&self, source: &SchemaGraph, snapshots: &[ObjectSnapshot]) -> Result<Vec<ObjectRecord>> {
        let plan = Extraction::prepare(self, source)?;
        let index = ObjectIndex::from_snapshots(source, snapshots);
        let mut out = Vec::new();
        for (i, s) in snapshots.iter().enumerate() {
            if let Some(r) = plan.extract_one(&index, i, s)? {
                out.push(r);
            }
        }
        Ok(out)
    }
}

/// Check that `predicate` is a row-local selection on `source_class`.
pub fn check_selection(source: &SchemaGraph, source_class: &str, predicate: &ExpressionTree) -> Result<()> {
    if predicate.kind != TreeKind::Selection {
        return Err(Error::Validation {
            diagnostics: vec![crate::expr::Diagnostic {
                code: "not-boolean".into(),
                message: "a selection must be a boolean tree".into(),
                node: "root".into(),
            }],
        });
    }
    EvaluationContext::local(source, source_class, AttributeNaming::Exact).compile(predicate)?;
    Ok(())
}

enum Compiled {
    Source(Vec<String>),
    Formula(CompiledExpr),
    Group(Vec<(String, Compiled)>),
    Skip,
}

struct ClassPlan {
    name: String,
    selections: Vec<CompiledExpr>,
    attributes: Vec<(String, Compiled)>,
    links: Vec<String>,
}

struct Extraction {
    /// Source class to warehouse class plan.
    plans: BTreeMap<String, ClassPlan>,
    /// Source class to the source class it is stored under.
    routes: BTreeMap<String, Option<String>>,
}

impl Extraction {
    fn prepare(def: &WarehouseDef, source: &SchemaGraph) -> Result<Self> {
        let wschema = def.schema();
        let mut plans = BTreeMap::new();
        for c in &def.classes {
            let mut lineage = vec![c.name.clone()];
            lineage.extend(wschema.ancestors(&c.name));
            let mut selections = Vec::new();
            let mut attributes = Vec::new();
            for w in &lineage {
                let wc = def.require_class(w)?;
                if let Some(p) = &wc.selection {
                    let ctx = EvaluationContext::local(source, &wc.source_class, AttributeNaming::Exact);
                    selections.push(ctx.compile(p)?);
                }
                let ctx = EvaluationContext::navigating(source, &wc.source_class, AttributeNaming::Exact);
                for a in &wc.attributes {
                    attributes.push((a.name.clone(), compile_source(&ctx, a)?));
                }
            }
            let links = def
                .links
                .iter()
                .filter(|l| l.kind != LinkKind::Inheritance && lineage.contains(&l.source))
                .map(|l| l.name.clone())
                .collect();
            plans.insert(
                c.source_class.clone(),
                ClassPlan {
                    name: c.name.clone(),
                    selections,
                    attributes,
                    links,
                },
            );
        }
        let mut routes = BTreeMap::new();
        for sc in &source.classes {
            routes.insert(sc.name.clone(), nearest_projected(source, &sc.name, &plans));
        }
        Ok(Extraction { plans, routes })
    }

    fn extract_one(&self, index: &ObjectIndex, i: usize, s: &ObjectSnapshot) -> Result<Option<ObjectRecord>> {
        let Some(Some(route)) = self.routes.get(&s.class) else {
            return Ok(None);
        };
        let plan = &self.plans[route];
        let binding = index.binding(i);
        for sel in &plan.selections {
            if !sel.test(&binding)? {
                return Ok(None);
            }
        }
        let mut values = BTreeMap::new();
        for (name, c) in &plan.attributes {
            if let Some(v) = compute(c, s, &binding)? {
                values.insert(name.clone(), v);
            }
        }
        let links = plan
            .links
            .iter()
            .filter_map(|l| s.links.get(l).map(|t| (l.clone(), t.clone())))
            .collect();
        Ok(Some(ObjectRecord {
            id: s.id.clone(),
            class: plan.name.clone(),
            values,
            links,
        }))
    }
}

fn nearest_projected(
    source: &SchemaGraph,
    class: &str,
    plans: &BTreeMap<String, ClassPlan>,
) -> Option<String> {
    let mut queue = VecDeque::from([class.to_string()]);
    let mut seen = BTreeSet::new();
    while let Some(c) = queue.pop_front() {
        if plans.contains_key(&c) {
            return Some(c);
        }
        if seen.insert(c.clone()) {
            queue.extend(source.direct_superclasses(&c).map(str::to_string));
        }
    }
    None
}

fn compile_source(ctx: &EvaluationContext, a: &WarehouseAttribute) -> Result<Compiled> {
    Ok(match &a.source {
        ValueSource::Source { path } => Compiled::Source(path.clone()),
        ValueSource::Formula { formula } => Compiled::Formula(ctx.compile(formula)?),
        ValueSource::UserOwned { .. } => Compiled::Skip,
        ValueSource::Group { members } => Compiled::Group(
            members
                .iter()
                .map(|m| Ok((m.base_name().to_string(), compile_source(ctx, m)?)))
                .collect::<Result<_>>()?,
        ),
    })
}

fn compute(c: &Compiled, s: &ObjectSnapshot, binding: &dyn crate::expr::Binding) -> Result<Option<Value>> {
    Ok(match c {
        Compiled::Source(path) => source_value(&s.values, path),
        Compiled::Formula(f) => f.evaluate_optional(binding)?,
        Compiled::Skip => None,
        Compiled::Group(parts) => {
            let mut out = Vec::new();
            for (n, p) in parts {
                if let Some(v) = compute(p, s, binding)? {
                    out.push((n.clone(), v));
                }
            }
            (!out.is_empty()).then_some(Value::Tuple(out))
        }
    })
}

/// Follow a source attribute name and then tuple components.
pub fn source_value(values: &BTreeMap<String, Value>, path: &[String]) -> Option<Value> {
    let (first, rest) = path.split_first()?;
    let mut v = values.get(first)?;
    for comp in rest {
        let Value::Tuple(parts) = v else { return None };
        v = &parts.iter().find(|(n, _)| n == comp)?.1;
    }
    Some(v.clone())
}
