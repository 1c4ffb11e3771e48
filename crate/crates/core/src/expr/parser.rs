//! Recursive-descent parser for the formula grammar.
//!
//! ```text
//! or      := and ("or" and)*
//! and     := cmp ("and" cmp)*
//! cmp     := add (("=" | ">" | "<") add)?
//! add     := mul (("+" | "-") mul)*
//! mul     := primary (("*" | "/") primary)*
//! primary := "\"Class.Attr\"" | 'text' | number | date | true | false
//!          | name "(" [or ("," or)*] ")" | "(" or ")"
//! ```

use chrono::NaiveDate;
use rust_decimal::Decimal;
use std::str::FromStr;

use super::{AttrRef, Expr, ExpressionTree, Op, TreeKind};
use crate::error::{Error, Result};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ref(String),
    Str(String),
    Int(i64),
    Dec(Decimal),
    Date(NaiveDate),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Eq,
    Gt,
    Lt,
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    _src: &'a str,
}

fn syntax(position: usize, message: impl Into<String>) -> Error {
    Error::FormulaSyntax {
        position,
        message: message.into(),
    }
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            _src: src,
        }
    }

    fn peek_char(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn quoted(&mut self, quote: char) -> Result<String> {
        let start = self.pos;
        self.pos += 1;
        let mut out = String::new();
        loop {
            match self.peek_char(0) {
                None => return Err(syntax(start, "unterminated quoted text")),
                Some(c) if c == quote => {
                    if self.peek_char(1) == Some(quote) {
                        out.push(quote);
                        self.pos += 2;
                    } else {
                        self.pos += 1;
                        return Ok(out);
                    }
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    fn is_date_ahead(&self) -> bool {
        let digit = |o| self.peek_char(o).is_some_and(|c: char| c.is_ascii_digit());
        (0..4).all(digit)
            && self.peek_char(4) == Some('-')
            && digit(5)
            && digit(6)
            && self.peek_char(7) == Some('-')
            && digit(8)
            && digit(9)
            && !digit(10)
    }

    fn number(&mut self, negative: bool) -> Result<Tok> {
        let start = self.pos;
        if self.is_date_ahead() && !negative {
            let text: String = self.chars[self.pos..self.pos + 10].iter().collect();
            self.pos += 10;
            return NaiveDate::parse_from_str(&text, "%Y-%m-%d")
                .map(Tok::Date)
                .map_err(|_| syntax(start, format!("invalid date '{text}'")));
        }
        while self.peek_char(0).is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let mut is_dec = false;
        if self.peek_char(0) == Some('.') && self.peek_char(1).is_some_and(|c| c.is_ascii_digit()) {
            is_dec = true;
            self.pos += 1;
            while self.peek_char(0).is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        let mut text: String = self.chars[start..self.pos].iter().collect();
        if negative {
            text.insert(0, '-');
        }
        if is_dec {
            Decimal::from_str(&text)
                .map(|d| Tok::Dec(d.normalize()))
                .map_err(|_| syntax(start, format!("invalid number '{text}'")))
        } else {
            text.parse()
                .map(Tok::Int)
                .map_err(|_| syntax(start, format!("integer out of range '{text}'")))
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>> {
        let mut out: Vec<(usize, Tok)> = Vec::new();
        while let Some(c) = self.peek_char(0) {
            let start = self.pos;
            let tok = match c {
                c if c.is_whitespace() => {
                    self.pos += 1;
                    continue;
                }
                '"' => Tok::Ref(self.quoted('"')?),
                '\'' => Tok::Str(self.quoted('\'')?),
                '(' | ')' | ',' | '+' | '*' | '/' | '=' | '>' | '<' => {
                    self.pos += 1;
                    match c {
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        ',' => Tok::Comma,
                        '+' => Tok::Plus,
                        '*' => Tok::Star,
                        '/' => Tok::Slash,
                        '=' => Tok::Eq,
                        '>' => Tok::Gt,
                        _ => Tok::Lt,
                    }
                }
                '-' => {
                    // a minus starts a negative literal only where an operand is expected
                    let operand_expected = matches!(
                        out.last().map(|(_, t)| t),
                        None | Some(
                            Tok::LParen
                                | Tok::Comma
                                | Tok::Plus
                                | Tok::Minus
                                | Tok::Star
                                | Tok::Slash
                                | Tok::Eq
                                | Tok::Gt
                                | Tok::Lt
                        )
                    ) || matches!(out.last(), Some((_, Tok::Ident(k))) if k == "and" || k == "or");
                    if operand_expected && self.peek_char(1).is_some_and(|c| c.is_ascii_digit()) {
                        self.pos += 1;
                        self.number(true)?
                    } else {
                        self.pos += 1;
                        Tok::Minus
                    }
                }
                c if c.is_ascii_digit() => self.number(false)?,
                c if c.is_alphabetic() || c == '_' => {
                    while self
                        .peek_char(0)
                        .is_some_and(|c| c.is_alphanumeric() || c == '_')
                    {
                        self.pos += 1;
                    }
                    Tok::Ident(self.chars[start..self.pos].iter().collect())
                }
                other => return Err(syntax(start, format!("unexpected character '{other}'"))),
            };
            out.push((start, tok));
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(_, t)| t.clone());
        self.idx += 1;
        t
    }

    /// Skip to the next top-level `,` or `)`.
    fn skip_operand(&mut self) {
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            match t {
                Tok::LParen => depth += 1,
                Tok::RParen if depth == 0 => return,
                Tok::RParen => depth -= 1,
                Tok::Comma if depth == 0 => return,
                _ => {}
            }
            self.idx += 1;
        }
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(k)) if k == kw)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.idx += 1;
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected {what}")))
        }
    }

    fn nary(&mut self, kw: &str, op: Op, next: fn(&mut Self) -> Result<Expr>) -> Result<Expr> {
        let first = next(self)?;
        let mut args = vec![first];
        while self.keyword(kw) {
            self.idx += 1;
            args.push(next(self)?);
        }
        Ok(if args.len() == 1 {
            args.pop().unwrap()
        } else {
            Expr::apply(op, args)
        })
    }

    fn or(&mut self) -> Result<Expr> {
        self.nary("or", Op::Or, Self::and)
    }

    fn and(&mut self) -> Result<Expr> {
        self.nary("and", Op::And, Self::cmp)
    }

    fn cmp(&mut self) -> Result<Expr> {
        let left = self.add()?;
        let op = match self.peek() {
            Some(Tok::Eq) => Op::Equal,
            Some(Tok::Gt) => Op::Greater,
            Some(Tok::Lt) => Op::Less,
            _ => return Ok(left),
        };
        self.idx += 1;
        let right = self.add()?;
        if matches!(self.peek(), Some(Tok::Eq | Tok::Gt | Tok::Lt)) {
            return Err(syntax(
                self.pos(),
                "comparisons do not chain; use parentheses",
            ));
        }
        Ok(Expr::apply(op, vec![left, right]))
    }

    fn binary(&mut self, ops: &[(Tok, Op)], next: fn(&mut Self) -> Result<Expr>) -> Result<Expr> {
        let mut left = next(self)?;
        loop {
            let Some(op) = self
                .peek()
                .and_then(|t| ops.iter().find(|(k, _)| k == t).map(|(_, o)| *o))
            else {
                return Ok(left);
            };
            self.idx += 1;
            let right = next(self)?;
            left = Expr::apply(op, vec![left, right]);
        }
    }

    fn add(&mut self) -> Result<Expr> {
        self.binary(
            &[(Tok::Plus, Op::Add), (Tok::Minus, Op::Subtract)],
            Self::mul,
        )
    }

    fn mul(&mut self) -> Result<Expr> {
        self.binary(
            &[(Tok::Star, Op::Multiply), (Tok::Slash, Op::Divide)],
            Self::primary,
        )
    }

    fn primary(&mut self) -> Result<Expr> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Ref(text)) => AttrRef::parse(&text)
                .map(Expr::Ref)
                .ok_or_else(|| syntax(pos, format!("reference \"{text}\" is not Class.Attribute"))),
            Some(Tok::Str(s)) => Ok(Expr::Lit(Value::Str(s))),
            Some(Tok::Int(i)) => Ok(Expr::Lit(Value::Int(i))),
            Some(Tok::Dec(d)) => Ok(Expr::Lit(Value::Dec(d))),
            Some(Tok::Date(d)) => Ok(Expr::Lit(Value::Date(d))),
            Some(Tok::LParen) => {
                let inner = self.or()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "true" => Ok(Expr::Lit(Value::Bool(true))),
                "false" => Ok(Expr::Lit(Value::Bool(false))),
                "and" | "or" => Err(syntax(pos, format!("unexpected keyword '{name}'"))),
                _ => {
                    if self.peek() != Some(&Tok::LParen) {
                        return Err(syntax(
                            pos,
                            format!("bare name '{name}'; quote references as \"Class.Attribute\""),
                        ));
                    }
                    let op = Op::from_function_name(&name)
                        .ok_or_else(|| Error::UnknownOperator(name.clone()))?;
                    self.idx += 1;
                    // operand errors are deferred so that an arity violation wins
                    let mut args = Vec::new();
                    let mut operand_error = None;
                    if self.peek() != Some(&Tok::RParen) {
                        loop {
                            match self.or() {
                                Ok(a) => args.push(a),
                                Err(e) => {
                                    operand_error.get_or_insert(e);
                                    self.skip_operand();
                                    args.push(Expr::Lit(Value::Bool(false)));
                                }
                            }
                            if self.peek() != Some(&Tok::Comma) {
                                break;
                            }
                            self.idx += 1;
                        }
                    }
                    self.expect(Tok::RParen, "')'")?;
                    let e = Expr::apply(op, args);
                    e.check_arity()?;
                    match operand_error {
                        Some(err) => Err(err),
                        None => Ok(e),
                    }
                }
            },
            Some(_) => Err(syntax(pos, "expected an operand")),
            None => Err(syntax(pos, "unexpected end of formula")),
        }
    }
}

fn parse_expr(text: &str) -> Result<Expr> {
    let toks = Lexer::new(text).tokens()?;
    let mut p = Parser {
        toks,
        idx: 0,
        end: text.chars().count(),
    };
    let e = p.or()?;
    if p.idx < p.toks.len() {
        return Err(syntax(p.pos(), "unexpected trailing input"));
    }
    Ok(e)
}

/// Parse a formula; the tree kind follows the root operator (boolean roots
/// make selection trees).
pub fn parse_formula(text: &str) -> Result<ExpressionTree> {
    let root = parse_expr(text)?;
    let kind = if root.is_boolean_node() {
        TreeKind::Selection
    } else {
        TreeKind::Calculation
    };
    ExpressionTree::new(kind, root)
}

/// Parse a selection predicate. A bare reference is accepted here; its
/// boolean type is checked at validation.
pub fn parse_selection(text: &str) -> Result<ExpressionTree> {
    let root = parse_expr(text)?;
    if !root.is_boolean_node() && !matches!(root, Expr::Ref(_)) {
        return Err(Error::UnknownOperator(format!(
            "{} (a selection needs a boolean root)",
            root.op_name()
        )));
    }
    ExpressionTree::new(TreeKind::Selection, root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_literal() {
        let t = parse_formula("1").unwrap();
        assert_eq!(t.root, Expr::Lit(Value::Int(1)));
        assert_eq!(t.kind, TreeKind::Calculation);
    }

    #[test]
    fn not_with_two_operands_is_an_arity_error() {
        let e = parse_formula("not(x, y)").unwrap_err();
        assert_eq!(e.kind(), "arity-violation");
        assert_eq!(parse_formula("not(x)").unwrap_err().kind(), "syntax-error");
        let e = parse_formula("not(true, false)").unwrap_err();
        assert_eq!(e.kind(), "arity-violation");
    }

    #[test]
    fn unknown_function_is_an_unknown_operator() {
        let e = parse_formula(r#"median("A.x")"#).unwrap_err();
        assert_eq!(e, Error::UnknownOperator("median".into()));
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_formula(r#""A.x" + * 2"#).unwrap_err() {
            Error::FormulaSyntax { position, .. } => assert_eq!(position, 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn selection_with_date_threshold() {
        let t = parse_selection(
            r#""Cabinets.Ville" = 'Toulouse' and "Cabinets.date_creation" > 1975-01-01"#,
        )
        .unwrap();
        assert_eq!(t.kind, TreeKind::Selection);
        match &t.root {
            Expr::Apply { op: Op::And, args } => {
                assert_eq!(args.len(), 2);
                assert_eq!(
                    args[1],
                    Expr::apply(
                        Op::Greater,
                        vec![
                            Expr::reference("Cabinets", "date_creation"),
                            Expr::Lit(Value::Date(NaiveDate::from_ymd_opt(1975, 1, 1).unwrap()))
                        ]
                    )
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn arithmetic_precedence_and_negative_literals() {
        let t = parse_formula(r#"1 + 2 * -3"#).unwrap();
        assert_eq!(t.to_string(), "1 + (2 * -3)");
        let t = parse_formula("2000-1").unwrap();
        assert_eq!(t.to_string(), "2000 - 1");
        let t = parse_formula("0.50").unwrap();
        assert_eq!(t.to_string(), "0.5");
        assert_eq!(parse_formula("2.0").unwrap().to_string(), "2.0");
    }

    #[test]
    fn selection_requires_boolean_root() {
        assert!(parse_selection("1 + 2").is_err());
        assert!(parse_selection("true").is_ok());
        assert!(parse_selection(r#""A.flag""#).is_ok());
    }

    #[test]
    fn chained_comparison_is_rejected() {
        assert_eq!(
            parse_formula("1 < 2 < 3").unwrap_err().kind(),
            "syntax-error"
        );
    }

    #[test]
    fn nested_logical_keeps_grouping() {
        let text = "(true or false) and not(false)";
        let t = parse_formula(text).unwrap();
        assert_eq!(t.to_string(), text);
        let flat = parse_formula("true and false and true").unwrap();
        assert!(matches!(&flat.root, Expr::Apply { op: Op::And, args } if args.len() == 3));
    }
}
