//! Reference resolution, validation and type inference for formula trees.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{AttrRef, Expr, ExpressionTree, Op, OpClass, TreeKind};
use crate::error::{Error, Result};
use crate::schema::{AttributeDef, AttributeType, LinkKind, SchemaGraph};
use crate::value::Value;

/// How attribute names in references are matched against class attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributeNaming {
    /// Names must match exactly (source schemas).
    Exact,
    /// A name may also match with a `D_`, `C_` or `S_` prefix (warehouse
    /// schemas, where formulas use the unprefixed source names).
    Prefixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    /// Along a link from its source to its target.
    Forward,
    /// Along a link from its target back to its source.
    Backward,
    /// Sub-class to super-class (same object).
    Up,
    /// Super-class to sub-class (same object, when it is one).
    Down,
}

/// One hop of a navigation path.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub link: String,
    pub kind: StepKind,
    pub from: String,
    pub to: String,
    pub multi: bool,
}

/// A reference resolved against a context: the class reached, the actual
/// attribute name, its type, and the navigation path from the anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedRef {
    pub reference: AttrRef,
    pub class: String,
    pub attribute: String,
    pub ty: AttributeType,
    pub path: Vec<Step>,
}

impl ResolvedRef {
    pub fn is_multi(&self) -> bool {
        self.path.iter().any(|s| s.multi)
    }

    fn path_key(&self) -> String {
        self.path
            .iter()
            .map(|s| format!("{}>{}", s.link, s.to))
            .collect::<Vec<_>>()
            .join("/")
    }
}

/// A validation finding, attached to a tree node (`root`, `root.0.1`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
    pub node: String,
}

impl Diagnostic {
    fn new(code: &str, node: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            code: code.into(),
            message: message.into(),
            node: node.into(),
        }
    }
}

/// Where evaluation starts and what it may reach.
#[derive(Debug, Clone)]
pub struct EvaluationContext<'a> {
    pub schema: &'a SchemaGraph,
    pub anchor: String,
    /// Whether references may navigate links away from the anchor.
    pub navigation: bool,
    pub naming: AttributeNaming,
}

/// A validated tree with its references resolved.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    pub tree: ExpressionTree,
    pub refs: BTreeMap<AttrRef, ResolvedRef>,
    pub result_type: AttributeType,
}

struct Analysis {
    ty: Option<AttributeType>,
    multi: Option<String>,
}

impl<'a> EvaluationContext<'a> {
    /// Context with link navigation from `anchor`.
    pub fn navigating(schema: &'a SchemaGraph, anchor: &str, naming: AttributeNaming) -> Self {
        EvaluationContext {
            schema,
            anchor: anchor.to_string(),
            navigation: true,
            naming,
        }
    }

    /// Row-local context: only the anchor's own (and inherited) attributes.
    pub fn local(schema: &'a SchemaGraph, anchor: &str, naming: AttributeNaming) -> Self {
        EvaluationContext {
            schema,
            anchor: anchor.to_string(),
            navigation: false,
            naming,
        }
    }

    fn find_attribute(
        &self,
        class: &str,
        name: &str,
    ) -> std::result::Result<&'a AttributeDef, String> {
        let attrs = self.schema.all_attributes(class);
        if let Some(a) = attrs.iter().find(|a| a.name == name) {
            return Ok(a);
        }
        if self.naming == AttributeNaming::Prefixed {
            let hits: Vec<&&AttributeDef> = attrs
                .iter()
                .filter(|a| {
                    ["D_", "C_", "S_"]
                        .iter()
                        .any(|p| a.name == format!("{p}{name}"))
                })
                .collect();
            match hits.as_slice() {
                [one] => return Ok(one),
                [] => {}
                _ => return Err(format!("attribute '{name}' of '{class}' is ambiguous")),
            }
        }
        Err(format!("class '{class}' has no attribute '{name}'"))
    }

    /// Shortest navigation path from the anchor to `target`. Errors when
    /// unreachable or when several distinct shortest paths exist.
    pub fn path_to(&self, target: &str) -> std::result::Result<Vec<Step>, (String, String)> {
        if target == self.anchor {
            return Ok(Vec::new());
        }
        let mut prev: BTreeMap<String, Step> = BTreeMap::new();
        let mut count: BTreeMap<String, usize> = BTreeMap::new();
        let mut depth: BTreeMap<String, usize> = BTreeMap::new();
        depth.insert(self.anchor.clone(), 0);
        count.insert(self.anchor.clone(), 1);
        let mut queue = VecDeque::from([self.anchor.clone()]);
        while let Some(c) = queue.pop_front() {
            let d = depth[&c];
            for step in self.steps_from(&c) {
                let next = step.to.clone();
                match depth.get(&next) {
                    None => {
                        depth.insert(next.clone(), d + 1);
                        count.insert(next.clone(), count[&c]);
                        prev.insert(next.clone(), step);
                        queue.push_back(next);
                    }
                    Some(&nd) if nd == d + 1 => {
                        *count.get_mut(&next).unwrap() += count[&c];
                    }
                    _ => {}
                }
            }
        }
        match count.get(target) {
            None => Err((
                "unresolvable-reference".into(),
                if self.navigation {
                    format!("class '{target}' is not reachable from '{}'", self.anchor)
                } else {
                    format!(
                        "class '{target}' is not '{}' or one of its super-classes",
                        self.anchor
                    )
                },
            )),
            Some(&n) if n > 1 => Err((
                "ambiguous-path".into(),
                format!(
                    "{n} distinct shortest paths lead from '{}' to '{target}'",
                    self.anchor
                ),
            )),
            Some(_) => {
                let mut path = Vec::new();
                let mut cur = target.to_string();
                while cur != self.anchor {
                    let s = prev[&cur].clone();
                    cur = s.from.clone();
                    path.push(s);
                }
                path.reverse();
                Ok(path)
            }
        }
    }

    fn steps_from(&self, class: &str) -> Vec<Step> {
        let mut out = Vec::new();
        for l in &self.schema.links {
            let inherit = l.kind == LinkKind::Inheritance;
            if !self.navigation && !(inherit && l.source == class) {
                continue;
            }
            if l.source == class {
                out.push(Step {
                    link: l.name.clone(),
                    kind: if inherit {
                        StepKind::Up
                    } else {
                        StepKind::Forward
                    },
                    from: class.to_string(),
                    to: l.target.clone(),
                    multi: !inherit && !l.target_multiplicity().is_single(),
                });
            }
            if l.target == class && l.source != class {
                out.push(Step {
                    link: l.name.clone(),
                    kind: if inherit {
                        StepKind::Down
                    } else {
                        StepKind::Backward
                    },
                    from: class.to_string(),
                    to: l.source.clone(),
                    multi: !inherit && !l.source_multiplicity().is_single(),
                });
            }
        }
        out
    }

    pub fn resolve(&self, r: &AttrRef) -> std::result::Result<ResolvedRef, (String, String)> {
        if self.schema.class(&r.class).is_none() {
            return Err((
                "unresolvable-reference".into(),
                format!("unknown class '{}' in \"{r}\"", r.class),
            ));
        }
        let attr = self
            .find_attribute(&r.class, &r.attribute)
            .map_err(|m| ("unresolvable-reference".to_string(), m))?;
        let path = self.path_to(&r.class)?;
        Ok(ResolvedRef {
            reference: r.clone(),
            class: r.class.clone(),
            attribute: attr.name.clone(),
            ty: attr.ty.clone(),
            path,
        })
    }

    /// All findings for `tree`; empty iff the tree is usable here.
    pub fn validate(&self, tree: &ExpressionTree) -> Vec<Diagnostic> {
        self.analyze_tree(tree).1
    }

    /// Validate and resolve, failing with the diagnostics when non-empty.
    pub fn compile(&self, tree: &ExpressionTree) -> Result<CompiledExpr> {
        let (refs, diags, ty) = self.analyze_tree(tree);
        if !diags.is_empty() {
            return Err(Error::Validation { diagnostics: diags });
        }
        Ok(CompiledExpr {
            tree: tree.clone(),
            refs,
            result_type: ty.expect("typed when no diagnostics"),
        })
    }

    fn analyze_tree(
        &self,
        tree: &ExpressionTree,
    ) -> (
        BTreeMap<AttrRef, ResolvedRef>,
        Vec<Diagnostic>,
        Option<AttributeType>,
    ) {
        let mut diags = Vec::new();
        let mut refs = BTreeMap::new();
        if self.schema.class(&self.anchor).is_none() {
            diags.push(Diagnostic::new(
                "unknown-anchor",
                "root",
                format!("anchor class '{}' does not exist", self.anchor),
            ));
            return (refs, diags, None);
        }
        let a = self.analyze(&tree.root, "root", &mut refs, &mut diags);
        if a.multi.is_some() {
            diags.push(Diagnostic::new(
                "multi-valued-outside-aggregation",
                "root",
                "a multi-valued path must be wrapped in an aggregation",
            ));
        }
        if tree.kind == TreeKind::Selection {
            if let Some(ty) = &a.ty {
                if *ty != AttributeType::Boolean {
                    diags.push(Diagnostic::new(
                        "not-boolean",
                        "root",
                        format!("selection evaluates to {ty}, not boolean"),
                    ));
                }
            }
        }
        (refs, diags, a.ty)
    }

    fn analyze(
        &self,
        e: &Expr,
        node: &str,
        refs: &mut BTreeMap<AttrRef, ResolvedRef>,
        diags: &mut Vec<Diagnostic>,
    ) -> Analysis {
        match e {
            Expr::Ref(r) => match self.resolve(r) {
                Ok(res) => {
                    let multi = res.is_multi().then(|| res.path_key());
                    let ty = Some(res.ty.clone());
                    refs.insert(r.clone(), res);
                    Analysis { ty, multi }
                }
                Err((code, msg)) => {
                    diags.push(Diagnostic::new(&code, node, msg));
                    Analysis {
                        ty: None,
                        multi: None,
                    }
                }
            },
            Expr::Lit(v) => Analysis {
                ty: Some(literal_type(v)),
                multi: None,
            },
            Expr::Apply { op, args } => {
                let parts: Vec<Analysis> = args
                    .iter()
                    .enumerate()
                    .map(|(i, a)| self.analyze(a, &format!("{node}.{i}"), refs, diags))
                    .collect();
                self.analyze_apply(*op, &parts, node, diags)
            }
        }
    }

    fn analyze_apply(
        &self,
        op: Op,
        parts: &[Analysis],
        node: &str,
        diags: &mut Vec<Diagnostic>,
    ) -> Analysis {
        let tys: Vec<Option<&AttributeType>> = parts.iter().map(|p| p.ty.as_ref()).collect();
        let known = tys.iter().all(Option::is_some);
        match op.class() {
            OpClass::Scalar => {
                let multi = merge_multi(parts, node, diags);
                if !known {
                    return Analysis { ty: None, multi };
                }
                if !tys.iter().all(|t| t.unwrap().is_numeric()) {
                    type_error(
                        diags,
                        node,
                        format!("'{}' needs numeric operands", op.name()),
                    );
                    return Analysis { ty: None, multi };
                }
                let all_int = tys.iter().all(|t| *t.unwrap() == AttributeType::Integer);
                let ty = if all_int && op != Op::Divide {
                    AttributeType::Integer
                } else {
                    AttributeType::Decimal
                };
                Analysis {
                    ty: Some(ty),
                    multi,
                }
            }
            OpClass::Aggregation => {
                let arg = &parts[0];
                if arg.multi.is_none() && arg.ty.is_some() {
                    diags.push(Diagnostic::new(
                        "aggregation-over-scalar",
                        node,
                        format!("'{}' wraps a single-valued path", op.name()),
                    ));
                }
                let Some(t) = &arg.ty else {
                    return Analysis {
                        ty: None,
                        multi: None,
                    };
                };
                let ty = match op {
                    Op::Count => Some(AttributeType::Integer),
                    Op::Sum if t.is_numeric() => Some(t.clone()),
                    Op::Average if t.is_numeric() => Some(AttributeType::Decimal),
                    Op::Min | Op::Max
                        if t.is_numeric()
                            || matches!(t, AttributeType::String | AttributeType::Date) =>
                    {
                        Some(t.clone())
                    }
                    _ => {
                        type_error(diags, node, format!("'{}' cannot aggregate {t}", op.name()));
                        None
                    }
                };
                Analysis { ty, multi: None }
            }
            OpClass::DatePart => {
                let arg = &parts[0];
                if let Some(t) = &arg.ty {
                    if *t != AttributeType::Date {
                        type_error(
                            diags,
                            node,
                            format!("'{}' needs a date, got {t}", op.name()),
                        );
                        return Analysis {
                            ty: None,
                            multi: arg.multi.clone(),
                        };
                    }
                }
                let ty = if op == Op::DayLabel {
                    AttributeType::String
                } else {
                    AttributeType::Integer
                };
                Analysis {
                    ty: arg.ty.as_ref().map(|_| ty),
                    multi: arg.multi.clone(),
                }
            }
            OpClass::Comparison | OpClass::Logical => {
                for (i, p) in parts.iter().enumerate() {
                    if p.multi.is_some() {
                        diags.push(Diagnostic::new(
                            "multi-valued-outside-aggregation",
                            &format!("{node}.{i}"),
                            "conditions cannot range over a multi-valued path",
                        ));
                    }
                }
                if known {
                    if op.class() == OpClass::Logical {
                        if tys.iter().any(|t| *t.unwrap() != AttributeType::Boolean) {
                            type_error(
                                diags,
                                node,
                                format!("'{}' needs boolean operands", op.name()),
                            );
                        }
                    } else {
                        let (a, b) = (tys[0].unwrap(), tys[1].unwrap());
                        let comparable = (a.is_numeric() && b.is_numeric())
                            || (a == b
                                && match a {
                                    AttributeType::String | AttributeType::Date => true,
                                    AttributeType::Boolean => op == Op::Equal,
                                    _ => false,
                                });
                        if !comparable {
                            type_error(
                                diags,
                                node,
                                format!("cannot compare {a} with {b} using '{}'", op.name()),
                            );
                        }
                    }
                }
                Analysis {
                    ty: Some(AttributeType::Boolean),
                    multi: None,
                }
            }
        }
    }
}

fn merge_multi(parts: &[Analysis], node: &str, diags: &mut Vec<Diagnostic>) -> Option<String> {
    let mut found: Option<String> = None;
    for p in parts {
        if let Some(m) = &p.multi {
            match &found {
                None => found = Some(m.clone()),
                Some(f) if f != m => {
                    diags.push(Diagnostic::new(
                        "mixed-paths",
                        node,
                        "operands range over different multi-valued paths",
                    ));
                }
                _ => {}
            }
        }
    }
    found
}

pub(crate) fn literal_type(v: &Value) -> AttributeType {
    match v {
        Value::Str(_) => AttributeType::String,
        Value::Int(_) => AttributeType::Integer,
        Value::Dec(_) => AttributeType::Decimal,
        Value::Bool(_) => AttributeType::Boolean,
        Value::Date(_) => AttributeType::Date,
        Value::Tuple(parts) => AttributeType::Tuple(
            parts
                .iter()
                .map(|(n, v)| crate::schema::Component::new(n.clone(), literal_type(v)))
                .collect(),
        ),
        Value::List(items) => AttributeType::List(Box::new(
            items
                .first()
                .map(literal_type)
                .unwrap_or(AttributeType::String),
        )),
    }
}

fn type_error(diags: &mut Vec<Diagnostic>, node: &str, msg: String) {
    diags.push(Diagnostic::new("type-error", node, msg));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_formula, parse_selection};
    use crate::schema::{Cardinality, ClassDef, Link, Multiplicity};

    fn schema() -> SchemaGraph {
        SchemaGraph::new(
            vec![
                ClassDef::new("Actes")
                    .with_attribute("Quantité", AttributeType::Integer)
                    .with_attribute("Prix Unitaire", AttributeType::Decimal)
                    .with_attribute("Taux Remb", AttributeType::Decimal)
                    .with_attribute("Code", AttributeType::String),
                ClassDef::new("Praticiens").with_attribute("specialite", AttributeType::String),
                ClassDef::new("Personnes").with_attribute("nom", AttributeType::String),
                ClassDef::new("Lignes").with_attribute("montant", AttributeType::Decimal),
                ClassDef::new("Ailleurs").with_attribute("x", AttributeType::Integer),
            ],
            vec![
                Link::association(
                    "Prescrit_par",
                    "Actes",
                    "Praticiens",
                    Cardinality {
                        source: Multiplicity::MANY,
                        target: Multiplicity::ONE,
                    },
                ),
                Link::composition(
                    "Contient",
                    "Actes",
                    "Lignes",
                    Cardinality {
                        source: Multiplicity::ONE,
                        target: Multiplicity::MANY,
                    },
                ),
                Link::inheritance("isa", "Praticiens", "Personnes"),
            ],
        )
        .unwrap()
    }

    fn codes(ctx: &EvaluationContext, text: &str) -> Vec<String> {
        ctx.validate(&parse_formula(text).unwrap())
            .into_iter()
            .map(|d| d.code)
            .collect()
    }

    #[test]
    fn montant_remb_validates_on_actes() {
        let s = schema();
        let ctx = EvaluationContext::navigating(&s, "Actes", AttributeNaming::Exact);
        let tree =
            parse_formula(r#"("Actes.Quantité" * "Actes.Prix Unitaire") * "Actes.Taux Remb""#)
                .unwrap();
        assert!(ctx.validate(&tree).is_empty());
        assert_eq!(
            ctx.compile(&tree).unwrap().result_type,
            AttributeType::Decimal
        );
    }

    #[test]
    fn unreachable_class_is_unresolvable() {
        let s = schema();
        let ctx = EvaluationContext::navigating(&s, "Actes", AttributeNaming::Exact);
        assert_eq!(
            codes(&ctx, r#""Ailleurs.x" + 1"#),
            ["unresolvable-reference"]
        );
        assert_eq!(
            codes(&ctx, r#""Actes.Nope" + 1"#),
            ["unresolvable-reference"]
        );
    }

    #[test]
    fn aggregation_needs_multi_valued_path() {
        let s = schema();
        let ctx = EvaluationContext::navigating(&s, "Actes", AttributeNaming::Exact);
        assert_eq!(
            codes(&ctx, r#"sum("Actes.Quantité")"#),
            ["aggregation-over-scalar"]
        );
        assert_eq!(
            codes(&ctx, r#"sum("Praticiens.specialite")"#),
            ["aggregation-over-scalar", "type-error"]
        );
        assert!(codes(&ctx, r#"sum("Lignes.montant")"#).is_empty());
        assert_eq!(
            codes(&ctx, r#""Lignes.montant" + 1"#),
            ["multi-valued-outside-aggregation"]
        );
    }

    #[test]
    fn navigation_through_inheritance() {
        let s = schema();
        let ctx = EvaluationContext::navigating(&s, "Actes", AttributeNaming::Exact);
        let r = ctx.resolve(&AttrRef::new("Personnes", "nom")).unwrap();
        let kinds: Vec<_> = r.path.iter().map(|p| p.kind).collect();
        assert_eq!(kinds, [StepKind::Forward, StepKind::Up]);
        assert!(!r.is_multi());
    }

    #[test]
    fn local_context_rejects_neighbours() {
        let s = schema();
        let ctx = EvaluationContext::local(&s, "Praticiens", AttributeNaming::Exact);
        let ok = parse_selection(r#""Personnes.nom" = 'Martin'"#).unwrap();
        assert!(ctx.validate(&ok).is_empty());
        let ctx = EvaluationContext::local(&s, "Actes", AttributeNaming::Exact);
        let bad = parse_selection(r#""Praticiens.specialite" = 'ORL'"#).unwrap();
        assert_eq!(ctx.validate(&bad)[0].code, "unresolvable-reference");
    }

    #[test]
    fn selection_type_errors() {
        let s = schema();
        let ctx = EvaluationContext::local(&s, "Actes", AttributeNaming::Exact);
        assert_eq!(codes(&ctx, r#""Actes.Code" > 3"#), ["type-error"]);
        let t = parse_selection(r#""Actes.Code""#).unwrap();
        assert_eq!(ctx.validate(&t)[0].code, "not-boolean");
    }

    #[test]
    fn prefixed_naming_matches_warehouse_attributes() {
        let s = SchemaGraph::new(
            vec![ClassDef::new("Actes").with_attribute("D_Quantité", AttributeType::Integer)],
            vec![],
        )
        .unwrap();
        let ctx = EvaluationContext::navigating(&s, "Actes", AttributeNaming::Prefixed);
        let r = ctx.resolve(&AttrRef::new("Actes", "Quantité")).unwrap();
        assert_eq!(r.attribute, "D_Quantité");
        let exact = EvaluationContext::navigating(&s, "Actes", AttributeNaming::Exact);
        assert!(exact.resolve(&AttrRef::new("Actes", "Quantité")).is_err());
    }
}
