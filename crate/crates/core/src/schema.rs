//! Object-oriented schema graphs and their instance snapshots.
//!
//! The same [`SchemaGraph`] represents the source schema, the warehouse
//! schema and (through the mart builder) the star-shaped mart schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::value::{Timestamp, Value};

/// Type of an attribute. Simple kinds are scalars; tuple, set and list are
/// complex.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AttributeType {
    String,
    Integer,
    Decimal,
    Boolean,
    Date,
    Tuple(Vec<Component>),
    Set(Box<AttributeType>),
    List(Box<AttributeType>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: AttributeType,
}

impl Component {
    pub fn new(name: impl Into<String>, ty: AttributeType) -> Self {
        Component {
            name: name.into(),
            ty,
        }
    }
}

impl AttributeType {
    pub fn is_simple(&self) -> bool {
        !self.is_complex()
    }

    pub fn is_complex(&self) -> bool {
        matches!(
            self,
            AttributeType::Tuple(_) | AttributeType::Set(_) | AttributeType::List(_)
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, AttributeType::Integer | AttributeType::Decimal)
    }

    pub fn check(&self) -> Result<()> {
        match self {
            AttributeType::Tuple(components) => {
                if components.is_empty() {
                    return Err(Error::InvalidType(
                        "tuple needs at least one component".into(),
                    ));
                }
                let mut names = BTreeSet::new();
                for c in components {
                    if !names.insert(c.name.as_str()) {
                        return Err(Error::DuplicateName {
                            scope: "tuple component".into(),
                            name: c.name.clone(),
                        });
                    }
                    c.ty.check()?;
                }
                Ok(())
            }
            AttributeType::Set(e) | AttributeType::List(e) => e.check(),
            _ => Ok(()),
        }
    }

    fn simple_name(&self) -> Option<&'static str> {
        Some(match self {
            AttributeType::String => "string",
            AttributeType::Integer => "integer",
            AttributeType::Decimal => "decimal",
            AttributeType::Boolean => "boolean",
            AttributeType::Date => "date",
            _ => return None,
        })
    }
}

impl fmt::Display for AttributeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(n) = self.simple_name() {
            return f.write_str(n);
        }
        match self {
            AttributeType::Tuple(cs) => {
                write!(f, "tuple(")?;
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}: {}", c.name, c.ty)?;
                }
                write!(f, ")")
            }
            AttributeType::Set(e) => write!(f, "set({e})"),
            AttributeType::List(e) => write!(f, "list({e})"),
            _ => unreachable!(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TypeRepr {
    Simple(String),
    Complex(ComplexRepr),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum ComplexRepr {
    Tuple(Vec<Component>),
    Set(Box<AttributeType>),
    List(Box<AttributeType>),
}

impl Serialize for AttributeType {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            AttributeType::Tuple(cs) => TypeRepr::Complex(ComplexRepr::Tuple(cs.clone())),
            AttributeType::Set(e) => TypeRepr::Complex(ComplexRepr::Set(e.clone())),
            AttributeType::List(e) => TypeRepr::Complex(ComplexRepr::List(e.clone())),
            simple => TypeRepr::Simple(simple.simple_name().unwrap().to_string()),
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AttributeType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match TypeRepr::deserialize(d)? {
            TypeRepr::Simple(s) => match s.as_str() {
                "string" => AttributeType::String,
                "integer" => AttributeType::Integer,
                "decimal" => AttributeType::Decimal,
                "boolean" => AttributeType::Boolean,
                "date" => AttributeType::Date,
                other => {
                    return Err(serde::de::Error::custom(format!(
                        "unknown attribute type '{other}'"
                    )))
                }
            },
            TypeRepr::Complex(ComplexRepr::Tuple(cs)) => AttributeType::Tuple(cs),
            TypeRepr::Complex(ComplexRepr::Set(e)) => AttributeType::Set(e),
            TypeRepr::Complex(ComplexRepr::List(e)) => AttributeType::List(e),
        })
    }
}

/// Declared semantic tag used to trigger temporal and geographic dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantic {
    Date,
    Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: AttributeType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<Semantic>,
}

impl AttributeDef {
    pub fn new(name: impl Into<String>, ty: AttributeType) -> Self {
        AttributeDef {
            name: name.into(),
            ty,
            semantic: None,
        }
    }

    pub fn is_date(&self) -> bool {
        self.ty == AttributeType::Date || self.semantic == Some(Semantic::Date)
    }

    pub fn is_address(&self) -> bool {
        self.semantic == Some(Semantic::Address)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<AttributeDef>,
    /// Operation signatures, carried as inert metadata.
    #[serde(default)]
    pub operations: Vec<String>,
}

impl ClassDef {
    pub fn new(name: impl Into<String>) -> Self {
        ClassDef {
            name: name.into(),
            attributes: Vec::new(),
            operations: Vec::new(),
        }
    }

    pub fn with_attribute(mut self, name: &str, ty: AttributeType) -> Self {
        self.attributes.push(AttributeDef::new(name, ty));
        self
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Association,
    Composition,
    Inheritance,
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkKind::Association => "association",
            LinkKind::Composition => "composition",
            LinkKind::Inheritance => "inheritance",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaxCard {
    One,
    Many,
}

/// `(min, max)` at one end of a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Multiplicity {
    pub min: u32,
    pub max: MaxCard,
}

impl Multiplicity {
    pub const ONE: Multiplicity = Multiplicity {
        min: 1,
        max: MaxCard::One,
    };
    pub const OPTIONAL: Multiplicity = Multiplicity {
        min: 0,
        max: MaxCard::One,
    };
    pub const MANY: Multiplicity = Multiplicity {
        min: 0,
        max: MaxCard::Many,
    };

    pub fn is_single(&self) -> bool {
        self.max == MaxCard::One
    }

    pub fn admits(&self, count: usize) -> bool {
        count >= self.min as usize && (self.max == MaxCard::Many || count <= 1)
    }
}

impl Serialize for Multiplicity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let max = match self.max {
            MaxCard::One => serde_json::Value::from(1),
            MaxCard::Many => serde_json::Value::from("*"),
        };
        (self.min, max).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Multiplicity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let items = Vec::<serde_json::Value>::deserialize(d)?;
        let parse_max = |v: &serde_json::Value| -> std::result::Result<MaxCard, D::Error> {
            match v {
                serde_json::Value::Number(n) if n.as_u64() == Some(1) => Ok(MaxCard::One),
                serde_json::Value::Number(n) if n.as_u64().is_some_and(|n| n > 1) => {
                    Ok(MaxCard::Many)
                }
                serde_json::Value::String(s) if matches!(s.as_str(), "*" | "many" | "n") => {
                    Ok(MaxCard::Many)
                }
                other => Err(D::Error::custom(format!("invalid max cardinality {other}"))),
            }
        };
        match items.as_slice() {
            // min defaults to 0 when only the max is given
            [max] => Ok(Multiplicity {
                min: 0,
                max: parse_max(max)?,
            }),
            [min, max] => {
                let min = min
                    .as_u64()
                    .and_then(|m| u32::try_from(m).ok())
                    .ok_or_else(|| D::Error::custom("invalid min cardinality"))?;
                let max = parse_max(max)?;
                if max == MaxCard::One && min > 1 {
                    return Err(D::Error::custom("min cardinality exceeds max"));
                }
                Ok(Multiplicity { min, max })
            }
            _ => Err(D::Error::custom("cardinality must be [min, max]")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cardinality {
    pub source: Multiplicity,
    pub target: Multiplicity,
}

/// A semantic link. For inheritance `source` is the sub-class and `target`
/// the super-class; for composition `source` is the composite and `target`
/// the component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub kind: LinkKind,
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinality: Option<Cardinality>,
}

impl Link {
    pub fn association(name: &str, source: &str, target: &str, card: Cardinality) -> Self {
        Link {
            name: name.into(),
            kind: LinkKind::Association,
            source: source.into(),
            target: target.into(),
            cardinality: Some(card),
        }
    }

    pub fn composition(name: &str, composite: &str, component: &str, card: Cardinality) -> Self {
        Link {
            name: name.into(),
            kind: LinkKind::Composition,
            source: composite.into(),
            target: component.into(),
            cardinality: Some(card),
        }
    }

    pub fn inheritance(name: &str, sub: &str, sup: &str) -> Self {
        Link {
            name: name.into(),
            kind: LinkKind::Inheritance,
            source: sub.into(),
            target: sup.into(),
            cardinality: None,
        }
    }

    pub fn target_multiplicity(&self) -> Multiplicity {
        self.cardinality
            .map(|c| c.target)
            .unwrap_or(Multiplicity::ONE)
    }

    pub fn source_multiplicity(&self) -> Multiplicity {
        self.cardinality
            .map(|c| c.source)
            .unwrap_or(Multiplicity::OPTIONAL)
    }

    /// The endpoint opposite to `class`, if the link touches it.
    pub fn opposite(&self, class: &str) -> Option<&str> {
        if self.source == class {
            Some(&self.target)
        } else if self.target == class {
            Some(&self.source)
        } else {
            None
        }
    }
}

/// A schema graph `(classes; links)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SchemaGraph {
    #[serde(default)]
    pub classes: Vec<ClassDef>,
    #[serde(default)]
    pub links: Vec<Link>,
}

/// Parse and validate a schema document.
pub fn load_schema(document: &str) -> Result<SchemaGraph> {
    let graph: SchemaGraph =
        serde_json::from_str(document).map_err(|e| Error::parse("schema", e))?;
    graph.validate()?;
    Ok(graph)
}

/// Canonical JSON rendering of a schema.
pub fn serialize_schema(graph: &SchemaGraph) -> String {
    serde_json::to_string_pretty(graph).expect("schema serializes")
}

impl SchemaGraph {
    pub fn new(classes: Vec<ClassDef>, links: Vec<Link>) -> Result<Self> {
        let g = SchemaGraph { classes, links };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for c in &self.classes {
            if !names.insert(c.name.as_str()) {
                return Err(Error::DuplicateName {
                    scope: "class".into(),
                    name: c.name.clone(),
                });
            }
            let mut attrs = BTreeSet::new();
            for a in &c.attributes {
                if !attrs.insert(a.name.as_str()) {
                    return Err(Error::DuplicateName {
                        scope: format!("attribute of class {}", c.name),
                        name: a.name.clone(),
                    });
                }
                a.ty.check()?;
            }
        }
        let mut link_names = BTreeSet::new();
        for l in &self.links {
            if !link_names.insert(l.name.as_str()) {
                return Err(Error::DuplicateName {
                    scope: "link".into(),
                    name: l.name.clone(),
                });
            }
            for end in [&l.source, &l.target] {
                if !names.contains(end.as_str()) {
                    return Err(Error::DanglingEndpoint {
                        link: l.name.clone(),
                        class: end.clone(),
                    });
                }
            }
            match (l.kind, l.cardinality) {
                (LinkKind::Inheritance, Some(_)) => {
                    return Err(Error::InvalidCardinality {
                        link: l.name.clone(),
                        message: "inheritance links carry no cardinality".into(),
                    })
                }
                (LinkKind::Association | LinkKind::Composition, None) => {
                    return Err(Error::InvalidCardinality {
                        link: l.name.clone(),
                        message: "association and composition links need a cardinality".into(),
                    })
                }
                _ => {}
            }
        }
        if let Some(path) = self.inheritance_cycle() {
            return Err(Error::InheritanceCycle { path });
        }
        Ok(())
    }

    /// A cycle in the inheritance sub-graph, as a closed path.
    fn inheritance_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Done,
        }
        let mut marks: BTreeMap<&str, Mark> = self
            .classes
            .iter()
            .map(|c| (c.name.as_str(), Mark::Fresh))
            .collect();
        fn visit<'a>(
            g: &'a SchemaGraph,
            node: &'a str,
            marks: &mut BTreeMap<&'a str, Mark>,
            stack: &mut Vec<&'a str>,
        ) -> Option<Vec<String>> {
            marks.insert(node, Mark::Active);
            stack.push(node);
            for sup in g.direct_superclasses(node) {
                match marks.get(sup).copied().unwrap_or(Mark::Done) {
                    Mark::Active => {
                        let start = stack.iter().position(|s| *s == sup).unwrap();
                        let mut path: Vec<String> =
                            stack[start..].iter().map(|s| s.to_string()).collect();
                        path.push(sup.to_string());
                        return Some(path);
                    }
                    Mark::Fresh => {
                        if let Some(p) = visit(g, sup, marks, stack) {
                            return Some(p);
                        }
                    }
                    Mark::Done => {}
                }
            }
            stack.pop();
            marks.insert(node, Mark::Done);
            None
        }
        let names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        for n in names {
            if marks[n] == Mark::Fresh {
                let mut stack = Vec::new();
                if let Some(p) = visit(self, n, &mut marks, &mut stack) {
                    return Some(p);
                }
            }
        }
        None
    }

    pub fn class(&self, name: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn require_class(&self, name: &str) -> Result<&ClassDef> {
        self.class(name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn link(&self, name: &str) -> Option<&Link> {
        self.links.iter().find(|l| l.name == name)
    }

    pub fn direct_superclasses<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.links
            .iter()
            .filter(move |l| l.kind == LinkKind::Inheritance && l.source == class)
            .map(|l| l.target.as_str())
    }

    /// Transitive super-classes, nearest first.
    pub fn ancestors(&self, class: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut frontier = vec![class.to_string()];
        while let Some(c) = frontier.pop() {
            for sup in self.direct_superclasses(&c) {
                if sup != class && !out.iter().any(|o| o == sup) {
                    out.push(sup.to_string());
                    frontier.push(sup.to_string());
                }
            }
        }
        out
    }

    pub fn descendants(&self, class: &str) -> Vec<String> {
        self.classes
            .iter()
            .filter(|c| c.name != class && self.ancestors(&c.name).iter().any(|a| a == class))
            .map(|c| c.name.clone())
            .collect()
    }

    /// `class` equals `ancestor` or inherits from it.
    pub fn is_a(&self, class: &str, ancestor: &str) -> bool {
        class == ancestor || self.ancestors(class).iter().any(|a| a == ancestor)
    }

    /// Own attributes followed by inherited ones (nearest ancestor first).
    pub fn all_attributes(&self, class: &str) -> Vec<&AttributeDef> {
        let mut out: Vec<&AttributeDef> = Vec::new();
        let mut chain = vec![class.to_string()];
        chain.extend(self.ancestors(class));
        for c in chain {
            if let Some(def) = self.class(&c) {
                for a in &def.attributes {
                    if !out.iter().any(|o| o.name == a.name) {
                        out.push(a);
                    }
                }
            }
        }
        out
    }

    pub fn find_attribute(&self, class: &str, attribute: &str) -> Option<&AttributeDef> {
        self.all_attributes(class)
            .into_iter()
            .find(|a| a.name == attribute)
    }

    /// Links incident to `class` (optionally filtered by kind), paired with
    /// the opposite endpoint.
    pub fn neighbors(
        &self,
        class: &str,
        kind: Option<LinkKind>,
    ) -> Result<Vec<(&Link, &ClassDef)>> {
        self.require_class(class)?;
        let mut out = Vec::new();
        for l in &self.links {
            if kind.is_some_and(|k| k != l.kind) {
                continue;
            }
            if let Some(other) = l.opposite(class) {
                out.push((l, self.require_class(other)?));
            }
        }
        Ok(out)
    }
}

/// One source object as extracted at a given date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSnapshot {
    pub id: String,
    pub class: String,
    #[serde(default)]
    pub values: BTreeMap<String, Value>,
    /// Link name to referenced object ids, in document order.
    #[serde(default)]
    pub links: BTreeMap<String, Vec<String>>,
    pub extracted_at: Timestamp,
}

#[derive(Deserialize)]
struct InstanceDocument {
    objects: Vec<RawSnapshot>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSnapshot {
    id: String,
    class: String,
    #[serde(default)]
    values: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    links: BTreeMap<String, LinkTargets>,
    #[serde(default)]
    extracted_at: Option<Timestamp>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LinkTargets {
    One(String),
    Many(Vec<String>),
}

/// Ids already known from earlier batches, keyed by the object's class.
pub type KnownObjects = BTreeSet<(String, String)>;

/// Parse and type-check an instance document against `graph`.
///
/// Snapshots without an `extracted_at` field take `extraction_date`. Link
/// targets must resolve within the batch or within `prior`.
pub fn load_instances(
    graph: &SchemaGraph,
    document: &str,
    extraction_date: Timestamp,
    prior: &KnownObjects,
) -> Result<Vec<ObjectSnapshot>> {
    if document.trim().is_empty() {
        return Ok(Vec::new());
    }
    let doc: InstanceDocument =
        serde_json::from_str(document).map_err(|e| Error::parse("instances", e))?;
    let mut out = Vec::with_capacity(doc.objects.len());
    for raw in doc.objects {
        graph.require_class(&raw.class)?;
        let mut values = BTreeMap::new();
        for (name, json) in raw.values {
            if json.is_null() {
                continue;
            }
            let attr =
                graph
                    .find_attribute(&raw.class, &name)
                    .ok_or_else(|| Error::UnknownAttribute {
                        class: raw.class.clone(),
                        attribute: name.clone(),
                    })?;
            let v = Value::from_json(&json, &attr.ty).map_err(|expected| Error::TypeMismatch {
                class: raw.class.clone(),
                object: raw.id.clone(),
                attribute: name.clone(),
                expected,
            })?;
            values.insert(name, v);
        }
        let links = raw
            .links
            .into_iter()
            .map(|(k, t)| {
                let ids = match t {
                    LinkTargets::One(id) => vec![id],
                    LinkTargets::Many(ids) => ids,
                };
                (k, ids)
            })
            .collect();
        out.push(ObjectSnapshot {
            id: raw.id,
            class: raw.class,
            values,
            links,
            extracted_at: raw.extracted_at.unwrap_or(extraction_date),
        });
    }
    check_snapshots(graph, &out, prior)?;
    Ok(out)
}

/// Type, cardinality and referential checks over a batch of snapshots.
pub fn check_snapshots(
    graph: &SchemaGraph,
    snapshots: &[ObjectSnapshot],
    prior: &KnownObjects,
) -> Result<()> {
    let mut known: KnownObjects = prior.clone();
    let mut batch = BTreeSet::new();
    for s in snapshots {
        known.insert((s.class.clone(), s.id.clone()));
        if !batch.insert((s.class.as_str(), s.id.as_str())) {
            return Err(Error::DuplicateName {
                scope: format!("object of class {}", s.class),
                name: s.id.clone(),
            });
        }
    }
    for s in snapshots {
        graph.require_class(&s.class)?;
        for (name, v) in &s.values {
            let attr =
                graph
                    .find_attribute(&s.class, name)
                    .ok_or_else(|| Error::UnknownAttribute {
                        class: s.class.clone(),
                        attribute: name.clone(),
                    })?;
            if !v.conforms_to(&attr.ty) {
                return Err(Error::TypeMismatch {
                    class: s.class.clone(),
                    object: s.id.clone(),
                    attribute: name.clone(),
                    expected: attr.ty.to_string(),
                });
            }
        }
        for l in &graph.links {
            if l.kind == LinkKind::Inheritance || !graph.is_a(&s.class, &l.source) {
                continue;
            }
            let targets = s.links.get(&l.name).map(Vec::as_slice).unwrap_or(&[]);
            if !l.target_multiplicity().admits(targets.len()) {
                return Err(Error::CardinalityViolation {
                    object: s.id.clone(),
                    link: l.name.clone(),
                    count: targets.len(),
                });
            }
            for t in targets {
                let resolves = known
                    .iter()
                    .any(|(c, id)| id == t && graph.is_a(c, &l.target));
                if !resolves {
                    return Err(Error::UnresolvedReference {
                        object: s.id.clone(),
                        link: l.name.clone(),
                        target: t.clone(),
                    });
                }
            }
        }
        for name in s.links.keys() {
            let ok = graph.link(name).is_some_and(|l| {
                l.kind != LinkKind::Inheritance && graph.is_a(&s.class, &l.source)
            });
            if !ok {
                return Err(Error::UnknownLink(name.clone()));
            }
        }
    }
    Ok(())
}
