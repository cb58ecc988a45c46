//! Computed-value formulas: `=COUNT(/ul[id='speakers']/li)`,
//! `=/dl/dd[0] * /dl/dd[1]`.

mod deps;
mod eval;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::selector::{self, Selector, SelectorError};

pub use deps::{dependencies, dirty_between, dirty_set, recompute, recompute_all, RecomputeError};
pub use eval::{coerce_number, eval_formula, evaluate_all, ErrorCode, ErrorValue, EvalError, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Function {
    Count,
    Sum,
}

impl Function {
    fn name(self) -> &'static str {
        match self {
            Function::Count => "COUNT",
            Function::Sum => "SUM",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Number(f64),
    Ref(Selector),
    Call(Function, Selector),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

/// A parsed formula. Displays in canonical form, including the leading `=`.
#[derive(Clone, Debug, PartialEq)]
pub struct Formula {
    pub expr: Expr,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormulaError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function {name:?} at offset {offset}")]
    UnknownFunction { offset: usize, name: String },
    #[error(transparent)]
    Selector(#[from] SelectorError),
}

impl Formula {
    pub fn parse(src: &str) -> Result<Self, FormulaError> {
        let mut parser = Parser { src, pos: 0 };
        if !src.starts_with('=') {
            return Err(parser.error("formula must start with '='"));
        }
        parser.pos = 1;
        let expr = parser.expr()?;
        parser.skip_ws();
        if parser.pos != src.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        Ok(Formula { expr })
    }

    /// Every selector that appears in the formula.
    pub fn selectors(&self) -> BTreeSet<Selector> {
        fn walk(expr: &Expr, out: &mut BTreeSet<Selector>) {
            match expr {
                Expr::Number(_) => {}
                Expr::Ref(sel) | Expr::Call(_, sel) => {
                    out.insert(sel.clone());
                }
                Expr::Binary(_, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.expr, &mut out);
        out
    }

    pub fn map_selectors(&self, f: &mut impl FnMut(&Selector) -> Selector) -> Formula {
        fn walk(expr: &Expr, f: &mut impl FnMut(&Selector) -> Selector) -> Expr {
            match expr {
                Expr::Number(n) => Expr::Number(*n),
                Expr::Ref(sel) => Expr::Ref(f(sel)),
                Expr::Call(func, sel) => Expr::Call(*func, f(sel)),
                Expr::Binary(op, l, r) => Expr::Binary(*op, Box::new(walk(l, f)), Box::new(walk(r, f))),
            }
        }
        Formula { expr: walk(&self.expr, f) }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "={}", self.expr)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Number(n) => write!(f, "{n}"),
            Expr::Ref(sel) => write!(f, "{sel}"),
            Expr::Call(func, sel) => write!(f, "{}({sel})", func.name()),
            Expr::Binary(op, l, r) => {
                let wrap = |e: &Expr, strict: bool| match e {
                    Expr::Binary(inner, ..) if inner.precedence() < op.precedence() => true,
                    Expr::Binary(inner, ..) => strict && inner.precedence() == op.precedence(),
                    _ => false,
                };
                if wrap(l, false) {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if wrap(r, true) {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> FormulaError {
        FormulaError::Syntax { offset: self.pos, message: message.to_string() }
    }

    fn peek(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expr(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.factor()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, FormulaError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("expected an operand")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(b'/') | Some(b'#') => {
                let (sel, end) = selector::parse_at(self.src, self.pos)?;
                self.pos = end;
                Ok(Expr::Ref(sel))
            }
            Some(b) if b.is_ascii_digit() => self.number(),
            Some(b) if b.is_ascii_alphabetic() => self.call(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr, FormulaError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.peek().is_some_and(|b| b.is_ascii_digit()) {
                p.pos += 1;
            }
        };
        digits(self);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            let frac_start = self.pos;
            digits(self);
            if self.pos == frac_start {
                return Err(self.error("expected digits after '.'"));
            }
        }
        let value = self.src[start..self.pos].parse().map_err(|_| self.error("bad number"))?;
        Ok(Expr::Number(value))
    }

    fn call(&mut self) -> Result<Expr, FormulaError> {
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        let func = match name {
            "COUNT" => Function::Count,
            "SUM" => Function::Sum,
            _ => return Err(FormulaError::UnknownFunction { offset: start, name: name.to_string() }),
        };
        self.skip_ws();
        if self.peek() != Some(b'(') {
            return Err(self.error("expected '('"));
        }
        self.pos += 1;
        self.skip_ws();
        if !matches!(self.peek(), Some(b'/') | Some(b'#')) {
            return Err(self.error("expected a selector argument"));
        }
        let (sel, end) = selector::parse_at(self.src, self.pos)?;
        self.pos = end;
        self.skip_ws();
        if self.peek() != Some(b')') {
            return Err(self.error("expected ')'"));
        }
        self.pos += 1;
        Ok(Expr::Call(func, sel))
    }
}
