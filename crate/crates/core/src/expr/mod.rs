//! Formula trees: calculation trees (computed attributes, measures,
//! parameters) and selection trees (predicates).
//!
//! Trees are parsed from a canonical textual grammar, validated against an
//! [`EvaluationContext`] anchored on a class, and evaluated against a
//! [`Binding`] that supplies attribute values.

mod context;
mod eval;
mod parser;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use context::{
    AttributeNaming, CompiledExpr, Diagnostic, EvaluationContext, ResolvedRef, Step, StepKind,
};
pub use eval::{evaluate, Binding, Column, MapBinding};
pub use parser::{parse_formula, parse_selection};

use crate::error::{Error, Result};
use crate::schema::{AttributeType, SchemaGraph};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeKind {
    Calculation,
    Selection,
}

/// A qualified reference `"Class.Attribute"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttrRef {
    pub class: String,
    pub attribute: String,
}

impl AttrRef {
    pub fn new(class: impl Into<String>, attribute: impl Into<String>) -> Self {
        AttrRef {
            class: class.into(),
            attribute: attribute.into(),
        }
    }

    /// Splits at the first dot; class names never contain dots.
    pub fn parse(qualified: &str) -> Option<Self> {
        let (c, a) = qualified.split_once('.')?;
        if c.is_empty() || a.is_empty() {
            return None;
        }
        Some(AttrRef::new(c, a))
    }
}

impl fmt::Display for AttrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.class, self.attribute)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Subtract,
    Multiply,
    Divide,
    Sum,
    Average,
    Count,
    Min,
    Max,
    DayLabel,
    Month,
    Quarter,
    Year,
    And,
    Or,
    Not,
    Equal,
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    Scalar,
    Aggregation,
    DatePart,
    Logical,
    Comparison,
}

impl Op {
    pub const ALL: [Op; 19] = [
        Op::Add,
        Op::Subtract,
        Op::Multiply,
        Op::Divide,
        Op::Sum,
        Op::Average,
        Op::Count,
        Op::Min,
        Op::Max,
        Op::DayLabel,
        Op::Month,
        Op::Quarter,
        Op::Year,
        Op::And,
        Op::Or,
        Op::Not,
        Op::Equal,
        Op::Greater,
        Op::Less,
    ];

    pub fn class(self) -> OpClass {
        use Op::*;
        match self {
            Add | Subtract | Multiply | Divide => OpClass::Scalar,
            Sum | Average | Count | Min | Max => OpClass::Aggregation,
            DayLabel | Month | Quarter | Year => OpClass::DatePart,
            And | Or | Not => OpClass::Logical,
            Equal | Greater | Less => OpClass::Comparison,
        }
    }

    /// Function-call name, for operators written in call syntax.
    pub fn function_name(self) -> Option<&'static str> {
        use Op::*;
        Some(match self {
            Sum => "sum",
            Average => "average",
            Count => "count",
            Min => "min",
            Max => "max",
            DayLabel => "day_label",
            Month => "month",
            Quarter => "quarter",
            Year => "year",
            Not => "not",
            _ => return None,
        })
    }

    pub fn from_function_name(name: &str) -> Option<Op> {
        Op::ALL
            .into_iter()
            .find(|op| op.function_name() == Some(name))
    }

    /// Infix symbol for binary and n-ary operators.
    pub fn symbol(self) -> Option<&'static str> {
        use Op::*;
        Some(match self {
            Add => "+",
            Subtract => "-",
            Multiply => "*",
            Divide => "/",
            Equal => "=",
            Greater => ">",
            Less => "<",
            And => "and",
            Or => "or",
            _ => return None,
        })
    }

    pub fn is_infix(self) -> bool {
        self.symbol().is_some()
    }

    pub fn is_boolean(self) -> bool {
        matches!(self.class(), OpClass::Logical | OpClass::Comparison)
    }

    /// `(min, max)` operand count; `None` max means unbounded.
    pub fn arity(self) -> (usize, Option<usize>) {
        match self {
            Op::And | Op::Or => (2, None),
            Op::Not => (1, Some(1)),
            _ if self.class() == OpClass::Aggregation || self.class() == OpClass::DatePart => {
                (1, Some(1))
            }
            _ => (2, Some(2)),
        }
    }

    pub fn name(self) -> &'static str {
        self.function_name()
            .or(self.symbol())
            .expect("every operator has a name")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Ref(AttrRef),
    Lit(Value),
    Apply { op: Op, args: Vec<Expr> },
}

impl Expr {
    pub fn apply(op: Op, args: Vec<Expr>) -> Self {
        Expr::Apply { op, args }
    }

    pub fn reference(class: &str, attribute: &str) -> Self {
        Expr::Ref(AttrRef::new(class, attribute))
    }

    /// Every attribute reference, in left-to-right order.
    pub fn references(&self) -> Vec<&AttrRef> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a AttrRef>) {
        match self {
            Expr::Ref(r) => out.push(r),
            Expr::Lit(_) => {}
            Expr::Apply { args, .. } => args.iter().for_each(|a| a.collect_refs(out)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Apply { args, .. } => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
            _ => 1,
        }
    }

    fn is_boolean_node(&self) -> bool {
        match self {
            Expr::Apply { op, .. } => op.is_boolean(),
            Expr::Lit(Value::Bool(_)) => true,
            _ => false,
        }
    }

    fn check_arity(&self) -> Result<()> {
        if let Expr::Apply { op, args } = self {
            let (min, max) = op.arity();
            if args.len() < min || max.is_some_and(|m| args.len() > m) {
                let expected = match max {
                    Some(m) if m == min => m.to_string(),
                    Some(m) => format!("{min}..{m}"),
                    None => format!("at least {min}"),
                };
                return Err(Error::Arity {
                    operator: op.name().to_string(),
                    expected,
                    found: args.len(),
                });
            }
            args.iter().try_for_each(Expr::check_arity)?;
        }
        Ok(())
    }

    /// Operator-set discipline: calculation subtrees never contain boolean
    /// operators; logical operators take boolean operands; comparisons take
    /// calculation operands.
    fn check_discipline(&self, kind: TreeKind) -> Result<()> {
        match (kind, self) {
            (_, Expr::Ref(_) | Expr::Lit(_)) => Ok(()),
            (TreeKind::Calculation, Expr::Apply { op, args }) => {
                if op.is_boolean() {
                    return Err(Error::UnknownOperator(format!(
                        "{} (selection operator in a calculation tree)",
                        op.name()
                    )));
                }
                args.iter()
                    .try_for_each(|a| a.check_discipline(TreeKind::Calculation))
            }
            (TreeKind::Selection, Expr::Apply { op, args }) => match op.class() {
                OpClass::Logical => args.iter().try_for_each(|a| {
                    if matches!(a, Expr::Apply { .. }) && !a.is_boolean_node() {
                        return Err(Error::UnknownOperator(format!(
                            "{} (calculation operator where a condition is expected)",
                            a.op_name()
                        )));
                    }
                    a.check_discipline(TreeKind::Selection)
                }),
                OpClass::Comparison => args
                    .iter()
                    .try_for_each(|a| a.check_discipline(TreeKind::Calculation)),
                _ => Err(Error::UnknownOperator(format!(
                    "{} (calculation operator where a condition is expected)",
                    op.name()
                ))),
            },
        }
    }

    fn op_name(&self) -> &'static str {
        match self {
            Expr::Apply { op, .. } => op.name(),
            _ => "operand",
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, parent: Op) -> fmt::Result {
        let wrap = match self {
            Expr::Apply { op, .. } if op.is_infix() => match parent {
                Op::And | Op::Or => matches!(op, Op::And | Op::Or),
                _ => true,
            },
            _ => false,
        };
        if wrap {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Canonical text: infix operators with every nested infix operand
/// parenthesized, call syntax for the rest, references double-quoted and
/// string literals single-quoted.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Ref(r) => write!(f, "\"{}\"", r.to_string().replace('"', "\"\"")),
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Apply { op, args } => {
                if let Some(sym) = op.symbol() {
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            write!(f, " {sym} ")?;
                        }
                        a.fmt_child(f, *op)?;
                    }
                    Ok(())
                } else {
                    write!(f, "{}(", op.name())?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            write!(f, ", ")?;
                        }
                        write!(f, "{a}")?;
                    }
                    write!(f, ")")
                }
            }
        }
    }
}

/// A formula tree together with its kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExpressionTree {
    pub kind: TreeKind,
    pub root: Expr,
}

impl ExpressionTree {
    pub fn new(kind: TreeKind, root: Expr) -> Result<Self> {
        root.check_arity()?;
        root.check_discipline(kind)?;
        Ok(ExpressionTree { kind, root })
    }

    pub fn calculation(root: Expr) -> Result<Self> {
        Self::new(TreeKind::Calculation, root)
    }

    pub fn selection(root: Expr) -> Result<Self> {
        Self::new(TreeKind::Selection, root)
    }

    /// The always-true predicate.
    pub fn always() -> Self {
        ExpressionTree {
            kind: TreeKind::Selection,
            root: Expr::Lit(Value::Bool(true)),
        }
    }

    pub fn references(&self) -> Vec<&AttrRef> {
        self.root.references()
    }
}

impl fmt::Display for ExpressionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl FromStr for ExpressionTree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_formula(s)
    }
}

impl Serialize for ExpressionTree {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            kind: TreeKind,
            text: &'a str,
        }
        Repr {
            kind: self.kind,
            text: &self.to_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ExpressionTree {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            kind: TreeKind,
            text: String,
        }
        let r = Repr::deserialize(d)?;
        let tree = match r.kind {
            TreeKind::Calculation => parse_formula(&r.text),
            TreeKind::Selection => parse_selection(&r.text),
        }
        .map_err(serde::de::Error::custom)?;
        if tree.kind != r.kind {
            return Err(serde::de::Error::custom("formula kind mismatch"));
        }
        Ok(tree)
    }
}

/// Names of the calendar parameters generated from a date attribute.
pub const DATE_PARAMETERS: [(&str, Op); 4] = [
    ("Libelle_jour", Op::DayLabel),
    ("Mois", Op::Month),
    ("Trimestre", Op::Quarter),
    ("Annee", Op::Year),
];

/// Calendar parameter formulas (day label, month, quarter, year) over a
/// date-typed attribute of `class`.
pub fn derive_date_parameters(
    schema: &SchemaGraph,
    reference: &AttrRef,
) -> Result<Vec<(String, ExpressionTree)>> {
    schema.require_class(&reference.class)?;
    let attr = schema
        .find_attribute(&reference.class, &reference.attribute)
        .ok_or_else(|| Error::UnknownAttribute {
            class: reference.class.clone(),
            attribute: reference.attribute.clone(),
        })?;
    if attr.ty != AttributeType::Date {
        return Err(Error::NotDateOrAddress {
            class: reference.class.clone(),
            attribute: reference.attribute.clone(),
        });
    }
    DATE_PARAMETERS
        .iter()
        .map(|(name, op)| {
            let tree =
                ExpressionTree::calculation(Expr::apply(*op, vec![Expr::Ref(reference.clone())]))?;
            Ok((name.to_string(), tree))
        })
        .collect()
}
