//! Random inputs and independent oracles for the property suites.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use num::{BigInt, BigRational, Signed, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use rust_decimal::Decimal;

use dw_core::expr::{Expr, ExpressionTree, Op};
use dw_core::mart::Sample;
use dw_core::schema::{
    AttributeType, Cardinality, ClassDef, Link, LinkKind, MaxCard, Multiplicity, SchemaGraph,
};
use dw_core::Value;

fn multiplicity(rng: &mut impl Rng) -> Multiplicity {
    match rng.gen_range(0..4) {
        0 => Multiplicity::ONE,
        1 => Multiplicity::OPTIONAL,
        2 => Multiplicity::MANY,
        _ => Multiplicity {
            min: 1,
            max: MaxCard::Many,
        },
    }
}

/// A valid schema with up to `max_classes` classes. Inheritance only goes
/// from higher to lower class numbers, so it is acyclic.
pub fn schema(rng: &mut impl Rng, max_classes: usize) -> SchemaGraph {
    let n = rng.gen_range(1..=max_classes);
    let classes: Vec<ClassDef> = (0..n)
        .map(|i| {
            let mut c = ClassDef::new(format!("K{i}"));
            for a in 0..rng.gen_range(0..3) {
                let ty = [AttributeType::String, AttributeType::Integer, AttributeType::Decimal]
                    [rng.gen_range(0..3)]
                .clone();
                c = c.with_attribute(&format!("a{i}_{a}"), ty);
            }
            c
        })
        .collect();
    let mut links = Vec::new();
    for k in 0..rng.gen_range(0..=2 * n) {
        let s = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        let name = format!("L{k}");
        let card = Cardinality {
            source: multiplicity(rng),
            target: multiplicity(rng),
        };
        let link = match rng.gen_range(0..3) {
            0 if s != t => Link::inheritance(&name, &format!("K{}", s.max(t)), &format!("K{}", s.min(t))),
            1 => Link::composition(&name, &format!("K{s}"), &format!("K{t}"), card),
            _ => Link::association(&name, &format!("K{s}"), &format!("K{t}"), card),
        };
        links.push(link);
    }
    SchemaGraph::new(classes, links).expect("generated schema is valid")
}

/// Classes reachable from `start` over inheritance (sub to super) and
/// composition (composite to component) links.
pub fn closure_oracle(s: &SchemaGraph, start: &BTreeSet<String>) -> BTreeSet<String> {
    let mut out = start.clone();
    loop {
        let before = out.len();
        for l in &s.links {
            if l.kind != LinkKind::Association && out.contains(&l.source) {
                out.insert(l.target.clone());
            }
        }
        if out.len() == before {
            return out;
        }
    }
}

/// Dependency closure by boolean matrix and Warshall's algorithm.
pub fn dependency_matrix_oracle(s: &SchemaGraph) -> BTreeMap<String, BTreeSet<String>> {
    let names: Vec<&str> = s.classes.iter().map(|c| c.name.as_str()).collect();
    let idx = |n: &str| names.iter().position(|x| *x == n).unwrap();
    let n = names.len();
    let mut m = vec![vec![false; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = true;
    }
    for l in &s.links {
        let (a, b) = (idx(&l.source), idx(&l.target));
        let card = l.cardinality;
        match l.kind {
            LinkKind::Association => {
                if card.unwrap().target.max == MaxCard::One {
                    m[a][b] = true;
                }
            }
            LinkKind::Inheritance => {
                m[a][b] = true;
                m[b][a] = true;
            }
            LinkKind::Composition => {
                m[a][b] = true;
                if card.unwrap().source.max == MaxCard::One {
                    m[b][a] = true;
                }
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if m[i][k] && m[k][j] {
                    m[i][j] = true;
                }
            }
        }
    }
    (0..n)
        .map(|i| {
            let set = (0..n).filter(|&j| m[i][j]).map(|j| names[j].to_string()).collect();
            (names[i].to_string(), set)
        })
        .collect()
}

/// A relation of up to `max_cols` columns and `max_rows` rows over small
/// domains, with occasional absent cells and derived columns so that
/// dependencies actually occur.
pub fn relation(rng: &mut impl Rng, max_cols: usize, max_rows: usize) -> Sample {
    let cols = rng.gen_range(1..=max_cols);
    let rows = rng.gen_range(1..=max_rows);
    let domains: Vec<i64> = (0..cols).map(|_| rng.gen_range(1..=8)).collect();
    // Column j may be a function of an earlier column.
    let parents: Vec<Option<usize>> = (0..cols)
        .map(|j| (j > 0 && rng.gen_bool(0.5)).then(|| rng.gen_range(0..j)))
        .collect();
    let mut data: Vec<Vec<Option<Value>>> = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row: Vec<Option<Value>> = Vec::with_capacity(cols);
        for j in 0..cols {
            let cell = match parents[j] {
                Some(p) => row[p].as_ref().map(|v| match v {
                    Value::Int(x) => Value::Int(x.rem_euclid(domains[j])),
                    other => other.clone(),
                }),
                None if rng.gen_bool(0.05) => None,
                None => Some(Value::Int(rng.gen_range(0..domains[j]))),
            };
            row.push(cell);
        }
        data.push(row);
    }
    Sample {
        columns: (0..cols).map(|j| format!("c{j}")).collect(),
        rows: data,
    }
}

/// Hierarchy edges by exhaustive pairwise scan, asymmetry filter and
/// transitive reduction.
pub fn hierarchy_oracle(s: &Sample) -> BTreeSet<(String, String)> {
    let n = s.columns.len();
    let fd = |a: usize, b: usize| {
        for r1 in &s.rows {
            for r2 in &s.rows {
                if r1[a] == r2[a] && r1[b] != r2[b] {
                    return false;
                }
            }
        }
        true
    };
    let mut strict = vec![vec![false; n]; n];
    for a in 0..n {
        for b in 0..n {
            strict[a][b] = a != b && fd(a, b) && !fd(b, a);
        }
    }
    let mut out = BTreeSet::new();
    for a in 0..n {
        for b in 0..n {
            if strict[a][b] && !(0..n).any(|m| strict[a][m] && strict[m][b]) {
                out.insert((s.columns[a].clone(), s.columns[b].clone()));
            }
        }
    }
    out
}

/// Attributes of the expression test class `T`: numeric `x0..x3`, date
/// `d`, and many-valued `U.v` reached over `T_U`.
pub fn expression_schema() -> SchemaGraph {
    let mut t = ClassDef::new("T");
    for i in 0..4 {
        t = t.with_attribute(&format!("x{i}"), AttributeType::Decimal);
    }
    t = t.with_attribute("d", AttributeType::Date);
    let u = ClassDef::new("U").with_attribute("v", AttributeType::Decimal);
    let link = Link::association(
        "T_U",
        "T",
        "U",
        Cardinality {
            source: Multiplicity::OPTIONAL,
            target: Multiplicity::MANY,
        },
    );
    SchemaGraph::new(vec![t, u], vec![link]).unwrap()
}

/// Values bound for one evaluation; `None` marks an absent attribute.
#[derive(Debug, Clone)]
pub struct Env {
    pub x: [Option<Decimal>; 4],
    pub d: NaiveDate,
    pub v: Vec<Decimal>,
}

fn small_decimal(rng: &mut impl Rng) -> Decimal {
    if rng.gen_bool(0.5) {
        Decimal::from(rng.gen_range(-20..=20))
    } else {
        Decimal::new(rng.gen_range(-99..=99), 1)
    }
}

pub fn env(rng: &mut impl Rng) -> Env {
    let sizes = [0usize, 1, 2, 4, 5];
    let n = *sizes.choose(rng).unwrap();
    Env {
        x: std::array::from_fn(|_| (!rng.gen_bool(0.05)).then(|| small_decimal(rng))),
        d: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Duration::days(rng.gen_range(0..1500)),
        v: (0..n).map(|_| small_decimal(rng)).collect(),
    }
}

// Divisors keep every quotient a terminating decimal.
const DIVISORS: [(i64, u32); 7] = [(2, 0), (4, 0), (5, 0), (8, 0), (10, 0), (5, 1), (0, 0)];

fn numeric_tree(rng: &mut impl Rng, depth: usize) -> Expr {
    if depth <= 1 || rng.gen_bool(0.3) {
        return match rng.gen_range(0..6) {
            0 | 1 => Expr::reference("T", &format!("x{}", rng.gen_range(0..4))),
            2 => Expr::Lit(Value::Int(rng.gen_range(-9..=9))),
            3 if depth >= 2 => {
                let op = [Op::Sum, Op::Count, Op::Min, Op::Max, Op::Average][rng.gen_range(0..5)];
                Expr::apply(op, vec![Expr::reference("U", "v")])
            }
            4 if depth >= 2 => {
                let op = [Op::Month, Op::Quarter, Op::Year][rng.gen_range(0..3)];
                Expr::apply(op, vec![Expr::reference("T", "d")])
            }
            _ => Expr::Lit(Value::dec(small_decimal(rng))),
        };
    }
    let op = [Op::Add, Op::Subtract, Op::Multiply, Op::Divide][rng.gen_range(0..4)];
    let left = numeric_tree(rng, depth - 1);
    let right = if op == Op::Divide {
        let (m, s) = *DIVISORS.choose(rng).unwrap();
        Expr::Lit(Value::dec(Decimal::new(m, s)))
    } else {
        numeric_tree(rng, depth - 1)
    };
    Expr::apply(op, vec![left, right])
}

fn boolean_tree(rng: &mut impl Rng, depth: usize) -> Expr {
    if depth <= 2 || rng.gen_bool(0.4) {
        let op = [Op::Equal, Op::Greater, Op::Less][rng.gen_range(0..3)];
        let d = depth.saturating_sub(1).max(1);
        return Expr::apply(op, vec![numeric_tree(rng, d), numeric_tree(rng, d)]);
    }
    match rng.gen_range(0..3) {
        0 => Expr::apply(Op::Not, vec![boolean_tree(rng, depth - 1)]),
        1 => Expr::apply(Op::And, vec![boolean_tree(rng, depth - 1), boolean_tree(rng, depth - 1)]),
        _ => Expr::apply(Op::Or, vec![boolean_tree(rng, depth - 1), boolean_tree(rng, depth - 1)]),
    }
}

/// A random calculation or selection tree of depth at most `max_depth`.
pub fn tree(rng: &mut impl Rng, max_depth: usize) -> ExpressionTree {
    let depth = rng.gen_range(1..=max_depth);
    if rng.gen_bool(0.5) {
        ExpressionTree::calculation(numeric_tree(rng, depth)).unwrap()
    } else {
        ExpressionTree::selection(boolean_tree(rng, depth.max(2))).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Exact {
    Num(BigRational),
    Bool(bool),
}

/// Error categories the engine and the oracle must agree on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Absent,
    DivisionByZero,
    Empty,
}

pub fn rational(d: Decimal) -> BigRational {
    let mantissa = BigInt::from(d.mantissa());
    let scale = BigInt::from(10).pow(d.scale());
    BigRational::new(mantissa, scale)
}

/// A straight-line program: the tree flattened into instructions over
/// numbered registers, operands before their operator.
#[derive(Debug)]
enum Instr {
    Load(String),
    Const(Exact),
    Aggregate(Op),
    DatePart(Op),
    Apply(Op, Vec<usize>),
}

fn flatten(e: &Expr, prog: &mut Vec<Instr>) -> usize {
    let instr = match e {
        Expr::Ref(r) => Instr::Load(r.attribute.clone()),
        Expr::Lit(Value::Int(i)) => Instr::Const(Exact::Num(BigRational::from_integer(BigInt::from(*i)))),
        Expr::Lit(Value::Dec(d)) => Instr::Const(Exact::Num(rational(*d))),
        Expr::Lit(Value::Bool(b)) => Instr::Const(Exact::Bool(*b)),
        Expr::Lit(other) => panic!("literal {other:?} not generated"),
        Expr::Apply { op, args } => match op {
            Op::Sum | Op::Count | Op::Min | Op::Max | Op::Average => Instr::Aggregate(*op),
            Op::Month | Op::Quarter | Op::Year | Op::DayLabel => Instr::DatePart(*op),
            _ => {
                let regs = args.iter().map(|a| flatten(a, prog)).collect();
                Instr::Apply(*op, regs)
            }
        },
    };
    prog.push(instr);
    prog.len() - 1
}

/// Run `tree` as a straight-line program over exact rationals. Absent
/// values travel as `None` and fail at the operator that consumes them.
pub fn interpret(tree: &ExpressionTree, env: &Env) -> Result<Exact, Failure> {
    let mut prog = Vec::new();
    flatten(&tree.root, &mut prog);
    let mut regs: Vec<Result<Option<Exact>, Failure>> = Vec::with_capacity(prog.len());
    let int = |i: i64| Exact::Num(BigRational::from_integer(BigInt::from(i)));
    for instr in &prog {
        let r = match instr {
            Instr::Load(name) => {
                let i: usize = name[1..].parse().unwrap();
                Ok(env.x[i].map(|d| Exact::Num(rational(d))))
            }
            Instr::Const(c) => Ok(Some(c.clone())),
            Instr::DatePart(op) => Ok(Some(int(match op {
                Op::Month => env.d.month() as i64,
                Op::Quarter => (env.d.month() as i64 - 1) / 3 + 1,
                _ => env.d.year() as i64,
            }))),
            Instr::Aggregate(op) => {
                let vs: Vec<BigRational> = env.v.iter().map(|d| rational(*d)).collect();
                let total = vs.iter().fold(BigRational::zero(), |a, b| a + b);
                match op {
                    Op::Count => Ok(int(vs.len() as i64)),
                    Op::Sum => Ok(Exact::Num(total)),
                    _ if vs.is_empty() => Err(Failure::Empty),
                    Op::Average => Ok(Exact::Num(total / BigRational::from_integer(BigInt::from(vs.len())))),
                    Op::Min => Ok(Exact::Num(vs.iter().min().unwrap().clone())),
                    _ => Ok(Exact::Num(vs.iter().max().unwrap().clone())),
                }
                .map(Some)
            }
            Instr::Apply(op, args) => {
                // the first failing operand, in order, wins
                match args.iter().find_map(|a| regs[*a].as_ref().err()) {
                    Some(f) => Err(*f),
                    None => {
                        let vals: Option<Vec<Exact>> =
                            args.iter().map(|a| regs[*a].clone().unwrap()).collect();
                        match vals {
                            None => Err(Failure::Absent),
                            Some(vals) => apply_exact(*op, vals).map(Some),
                        }
                    }
                }
            }
        };
        regs.push(r);
    }
    regs.pop().unwrap().and_then(|v| v.ok_or(Failure::Absent))
}

fn apply_exact(op: Op, vals: Vec<Exact>) -> Result<Exact, Failure> {
    let num = |e: &Exact| match e {
        Exact::Num(n) => n.clone(),
        Exact::Bool(_) => panic!("boolean operand to numeric operator"),
    };
    let boolean = |e: &Exact| match e {
        Exact::Bool(b) => *b,
        Exact::Num(_) => panic!("numeric operand to logical operator"),
    };
    Ok(match op {
        Op::Add => Exact::Num(num(&vals[0]) + num(&vals[1])),
        Op::Subtract => Exact::Num(num(&vals[0]) - num(&vals[1])),
        Op::Multiply => Exact::Num(num(&vals[0]) * num(&vals[1])),
        Op::Divide => {
            let d = num(&vals[1]);
            if d.is_zero() {
                return Err(Failure::DivisionByZero);
            }
            Exact::Num(num(&vals[0]) / d)
        }
        Op::Equal => Exact::Bool(num(&vals[0]) == num(&vals[1])),
        Op::Greater => Exact::Bool(num(&vals[0]) > num(&vals[1])),
        Op::Less => Exact::Bool(num(&vals[0]) < num(&vals[1])),
        Op::And => Exact::Bool(vals.iter().all(boolean)),
        Op::Or => Exact::Bool(vals.iter().any(boolean)),
        Op::Not => Exact::Bool(!boolean(&vals[0])),
        other => panic!("{other:?} is not a scalar operator"),
    })
}

/// Engine result in the oracle's terms.
pub fn exact_of(v: &Value) -> Exact {
    match v {
        Value::Int(i) => Exact::Num(BigRational::from_integer(BigInt::from(*i))),
        Value::Dec(d) => Exact::Num(rational(*d)),
        Value::Bool(b) => Exact::Bool(*b),
        other => panic!("unexpected result {other:?}"),
    }
}

/// Whether `r` is written exactly with at most 28 significant digits, the
/// engine's decimal precision.
pub fn fits_decimal(r: &BigRational) -> bool {
    (0..=28u32).any(|scale| {
        let scaled = r * BigRational::from_integer(BigInt::from(10).pow(scale));
        scaled.is_integer() && scaled.numer().abs().to_string().len() <= 28
    })
}

pub fn decimal(s: &str) -> Decimal {
    Decimal::from_str(s).unwrap()
}
