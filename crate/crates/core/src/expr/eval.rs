//! Tree evaluation.
//!
//! References evaluate to a [`Column`]: one value for single-valued paths,
//! a list for multi-valued ones. Scalar operators broadcast over lists;
//! aggregations collapse them, skipping absent elements.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use chrono::Datelike;
use rust_decimal::Decimal;

use super::{CompiledExpr, EvaluationContext, Expr, ExpressionTree, Op, OpClass, ResolvedRef};
use crate::error::{Error, Result};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    One(Option<Value>),
    Many(Vec<Option<Value>>),
}

/// Supplies values for resolved references.
pub trait Binding {
    fn lookup(&self, reference: &ResolvedRef) -> Result<Column>;
}

/// A binding keyed by the qualified reference text (`Class.Attribute`).
#[derive(Debug, Clone, Default)]
pub struct MapBinding {
    values: BTreeMap<String, Column>,
}

impl MapBinding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, qualified: &str, value: Value) -> &mut Self {
        self.values
            .insert(qualified.to_string(), Column::One(Some(value)));
        self
    }

    pub fn set_many(&mut self, qualified: &str, values: Vec<Option<Value>>) -> &mut Self {
        self.values
            .insert(qualified.to_string(), Column::Many(values));
        self
    }
}

impl Binding for MapBinding {
    fn lookup(&self, reference: &ResolvedRef) -> Result<Column> {
        Ok(self
            .values
            .get(&reference.reference.to_string())
            .cloned()
            .unwrap_or(if reference.is_multi() {
                Column::Many(Vec::new())
            } else {
                Column::One(None)
            }))
    }
}

/// Validate `tree` in `ctx` and evaluate it against `binding`.
pub fn evaluate(
    tree: &ExpressionTree,
    ctx: &EvaluationContext,
    binding: &dyn Binding,
) -> Result<Value> {
    ctx.compile(tree)?.evaluate(binding)
}

impl CompiledExpr {
    /// Evaluate; an absent result is an error.
    pub fn evaluate(&self, binding: &dyn Binding) -> Result<Value> {
        self.evaluate_optional(binding)?
            .ok_or_else(|| Error::AbsentOperand(format!("{} has no value", self.tree)))
    }

    /// Evaluate; a bare reference to an absent value yields `None`.
    pub fn evaluate_optional(&self, binding: &dyn Binding) -> Result<Option<Value>> {
        match self.eval(&self.tree.root, binding)? {
            Column::One(v) => Ok(v),
            Column::Many(_) => Err(Error::Evaluation(
                "multi-valued result outside an aggregation".into(),
            )),
        }
    }

    /// Evaluate a selection tree to a boolean.
    pub fn test(&self, binding: &dyn Binding) -> Result<bool> {
        match self.evaluate(binding)? {
            Value::Bool(b) => Ok(b),
            other => Err(Error::Evaluation(format!(
                "selection produced {} instead of boolean",
                other.type_name()
            ))),
        }
    }

    fn eval(&self, e: &Expr, b: &dyn Binding) -> Result<Column> {
        match e {
            Expr::Lit(v) => Ok(Column::One(Some(v.clone()))),
            Expr::Ref(r) => {
                let resolved = self
                    .refs
                    .get(r)
                    .ok_or_else(|| Error::Evaluation(format!("unresolved reference \"{r}\"")))?;
                b.lookup(resolved)
            }
            Expr::Apply { op, args } => {
                let cols = args
                    .iter()
                    .map(|a| self.eval(a, b))
                    .collect::<Result<Vec<_>>>()?;
                apply(*op, cols)
            }
        }
    }
}

fn absent(op: Op) -> Error {
    Error::AbsentOperand(format!("operand of '{}' is absent", op.name()))
}

fn one(op: Op, c: Column) -> Result<Value> {
    match c {
        Column::One(Some(v)) => Ok(v),
        Column::One(None) => Err(absent(op)),
        Column::Many(_) => Err(Error::Evaluation(format!(
            "'{}' cannot take a multi-valued operand",
            op.name()
        ))),
    }
}

fn map1(op: Op, c: Column, f: impl Fn(&Value) -> Result<Value>) -> Result<Column> {
    match c {
        Column::One(Some(v)) => Ok(Column::One(Some(f(&v)?))),
        Column::One(None) => Err(absent(op)),
        Column::Many(vs) => vs
            .into_iter()
            .map(|v| v.map(|v| f(&v)).transpose())
            .collect::<Result<Vec<_>>>()
            .map(Column::Many),
    }
}

fn map2(
    op: Op,
    a: Column,
    b: Column,
    f: impl Fn(&Value, &Value) -> Result<Value>,
) -> Result<Column> {
    let pair = |x: Option<Value>, y: Option<Value>| match (x, y) {
        (Some(x), Some(y)) => f(&x, &y).map(Some),
        _ => Ok(None),
    };
    match (a, b) {
        (Column::One(x), Column::One(y)) => {
            let (x, y) = (x.ok_or_else(|| absent(op))?, y.ok_or_else(|| absent(op))?);
            Ok(Column::One(Some(f(&x, &y)?)))
        }
        (Column::One(x), Column::Many(ys)) => ys
            .into_iter()
            .map(|y| pair(x.clone(), y))
            .collect::<Result<_>>()
            .map(Column::Many),
        (Column::Many(xs), Column::One(y)) => xs
            .into_iter()
            .map(|x| pair(x, y.clone()))
            .collect::<Result<_>>()
            .map(Column::Many),
        (Column::Many(xs), Column::Many(ys)) => {
            if xs.len() != ys.len() {
                return Err(Error::Evaluation(format!(
                    "'{}' over collections of different sizes",
                    op.name()
                )));
            }
            xs.into_iter()
                .zip(ys)
                .map(|(x, y)| pair(x, y))
                .collect::<Result<_>>()
                .map(Column::Many)
        }
    }
}

fn apply(op: Op, mut cols: Vec<Column>) -> Result<Column> {
    match op.class() {
        OpClass::Scalar => {
            let b = cols.pop().unwrap();
            let a = cols.pop().unwrap();
            map2(op, a, b, |x, y| arithmetic(op, x, y))
        }
        OpClass::DatePart => map1(op, cols.pop().unwrap(), |v| date_part(op, v)),
        OpClass::Aggregation => {
            let items: Vec<Value> = match cols.pop().unwrap() {
                Column::One(v) => v.into_iter().collect(),
                Column::Many(vs) => vs.into_iter().flatten().collect(),
            };
            aggregate(op, items).map(|v| Column::One(Some(v)))
        }
        OpClass::Comparison => {
            let b = one(op, cols.pop().unwrap())?;
            let a = one(op, cols.pop().unwrap())?;
            let r = match op {
                Op::Equal => values_equal(&a, &b)?,
                Op::Greater => compare(&a, &b)? == Ordering::Greater,
                _ => compare(&a, &b)? == Ordering::Less,
            };
            Ok(Column::One(Some(Value::Bool(r))))
        }
        OpClass::Logical => {
            // every operand is evaluated; there is no short-circuit
            let bools = cols
                .into_iter()
                .map(|c| match one(op, c)? {
                    Value::Bool(b) => Ok(b),
                    other => Err(Error::Evaluation(format!(
                        "'{}' needs booleans, got {}",
                        op.name(),
                        other.type_name()
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            let r = match op {
                Op::And => bools.iter().all(|b| *b),
                Op::Or => bools.iter().any(|b| *b),
                _ => !bools[0],
            };
            Ok(Column::One(Some(Value::Bool(r))))
        }
    }
}

fn numeric(op: Op, v: &Value) -> Result<Decimal> {
    v.as_decimal().ok_or_else(|| {
        Error::Evaluation(format!(
            "'{}' needs numbers, got {}",
            op.name(),
            v.type_name()
        ))
    })
}

fn overflow(op: Op) -> Error {
    Error::Evaluation(format!("numeric overflow in '{}'", op.name()))
}

pub(crate) fn arithmetic(op: Op, a: &Value, b: &Value) -> Result<Value> {
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        let r = match op {
            Op::Add => x.checked_add(*y),
            Op::Subtract => x.checked_sub(*y),
            Op::Multiply => x.checked_mul(*y),
            _ => None,
        };
        if let Some(r) = r {
            return Ok(Value::Int(r));
        }
    }
    let (x, y) = (numeric(op, a)?, numeric(op, b)?);
    let r = match op {
        Op::Add => x.checked_add(y),
        Op::Subtract => x.checked_sub(y),
        Op::Multiply => x.checked_mul(y),
        Op::Divide => {
            if y.is_zero() {
                return Err(Error::DivisionByZero);
            }
            x.checked_div(y)
        }
        _ => unreachable!("not a scalar operator"),
    };
    r.map(Value::dec).ok_or_else(|| overflow(op))
}

fn date_part(op: Op, v: &Value) -> Result<Value> {
    let Value::Date(d) = v else {
        return Err(Error::Evaluation(format!(
            "'{}' needs a date, got {}",
            op.name(),
            v.type_name()
        )));
    };
    Ok(match op {
        Op::DayLabel => Value::Str(d.format("%A").to_string()),
        Op::Month => Value::Int(d.month() as i64),
        Op::Quarter => Value::Int(d.month0() as i64 / 3 + 1),
        _ => Value::Int(d.year() as i64),
    })
}

fn aggregate(op: Op, items: Vec<Value>) -> Result<Value> {
    match op {
        Op::Count => Ok(Value::Int(items.len() as i64)),
        Op::Sum => items
            .iter()
            .try_fold(Value::Int(0), |acc, v| arithmetic(Op::Add, &acc, v)),
        Op::Average => {
            if items.is_empty() {
                return Err(Error::Evaluation("average of an empty collection".into()));
            }
            let total = items
                .iter()
                .try_fold(Value::Int(0), |acc, v| arithmetic(Op::Add, &acc, v))?;
            let total = numeric(op, &total)?;
            total
                .checked_div(Decimal::from(items.len() as i64))
                .map(Value::dec)
                .ok_or_else(|| overflow(op))
        }
        _ => {
            let mut it = items.into_iter();
            let first = it.next().ok_or_else(|| {
                Error::Evaluation(format!("'{}' of an empty collection", op.name()))
            })?;
            it.try_fold(first, |best, v| {
                let ord = compare(&v, &best)?;
                let better = if op == Op::Min {
                    ord == Ordering::Less
                } else {
                    ord == Ordering::Greater
                };
                Ok(if better { v } else { best })
            })
        }
    }
}

fn incomparable(a: &Value, b: &Value) -> Error {
    Error::Evaluation(format!(
        "cannot compare {} with {}",
        a.type_name(),
        b.type_name()
    ))
}

pub(crate) fn values_equal(a: &Value, b: &Value) -> Result<bool> {
    if let (Some(x), Some(y)) = (a.as_decimal(), b.as_decimal()) {
        return Ok(x == y);
    }
    if std::mem::discriminant(a) != std::mem::discriminant(b) {
        return Err(incomparable(a, b));
    }
    Ok(a == b)
}

pub(crate) fn compare(a: &Value, b: &Value) -> Result<Ordering> {
    if let (Some(x), Some(y)) = (a.as_decimal(), b.as_decimal()) {
        return Ok(x.cmp(&y));
    }
    match (a, b) {
        (Value::Date(x), Value::Date(y)) => Ok(x.cmp(y)),
        (Value::Str(x), Value::Str(y)) => Ok(x.cmp(y)),
        _ => Err(incomparable(a, b)),
    }
}
