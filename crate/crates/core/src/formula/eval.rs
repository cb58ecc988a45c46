use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BinOp, Expr, Function};
use crate::model::{Document, Node, NodeId, NodeKind};
use crate::selector::Selector;

const EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ErrorCode {
    Ref,
    Num,
    Div0,
    Cycle,
}

impl ErrorCode {
    fn display(self) -> &'static str {
        match self {
            ErrorCode::Ref => "#REF!",
            ErrorCode::Num => "#NUM!",
            ErrorCode::Div0 => "#DIV/0!",
            ErrorCode::Cycle => "#CYCLE!",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorValue {
    pub code: ErrorCode,
    pub message: String,
}

/// Result of evaluating a computed value.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Value {
    Number(f64),
    Error(ErrorValue),
}

impl Value {
    fn error(code: ErrorCode, message: impl Into<String>) -> Value {
        Value::Error(ErrorValue { code, message: message.into() })
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            Value::Error(_) => None,
        }
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        match self {
            Value::Number(_) => None,
            Value::Error(e) => Some(e.code),
        }
    }
}

/// Numbers compare within 1e-9; errors compare by code.
impl PartialEq for Value {
    fn eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Number(a), Value::Number(b)) => (a - b).abs() <= EPSILON,
            (Value::Error(a), Value::Error(b)) => a.code == b.code,
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(n) if *n == 0.0 => f.write_str("0"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Error(e) => f.write_str(e.code.display()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("no node {0}")]
    NotFound(NodeId),
    #[error("node {0} is not a computed value")]
    NotComputed(NodeId),
}

/// Coerces display text to a number: one leading `$` and any `,` thousands
/// separators are stripped, the rest must be a plain decimal.
pub fn coerce_number(text: &str) -> Option<f64> {
    let trimmed = text.trim();
    let unsigned = trimmed.strip_prefix('-');
    let body = unsigned.unwrap_or(trimmed);
    let body = body.strip_prefix('$').unwrap_or(body);
    let cleaned: String = body.chars().filter(|&c| c != ',').collect();
    let (int, frac) = match cleaned.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (cleaned.as_str(), None),
    };
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int) || frac.is_some_and(|f| !all_digits(f)) {
        return None;
    }
    let value: f64 = cleaned.parse().ok()?;
    Some(if unsigned.is_some() { -value } else { value })
}

/// Evaluates the computed value `node` against the current document content.
pub fn eval_formula(doc: &Document, node: &NodeId) -> Result<Value, EvalError> {
    let target = doc.find(node).ok_or_else(|| EvalError::NotFound(node.clone()))?;
    if target.kind != NodeKind::Computed {
        return Err(EvalError::NotComputed(node.clone()));
    }
    Ok(Evaluator::new(doc).computed(target))
}

/// Values of every computed node in the document.
pub fn evaluate_all(doc: &Document) -> BTreeMap<NodeId, Value> {
    let mut evaluator = Evaluator::new(doc);
    doc.nodes()
        .filter(|n| n.kind == NodeKind::Computed)
        .map(|n| (n.id.clone(), evaluator.computed(n)))
        .collect()
}

pub(crate) struct Evaluator<'d> {
    doc: &'d Document,
    memo: HashMap<NodeId, Value>,
    in_progress: HashSet<NodeId>,
}

impl<'d> Evaluator<'d> {
    pub(crate) fn new(doc: &'d Document) -> Self {
        Evaluator { doc, memo: HashMap::new(), in_progress: HashSet::new() }
    }

    pub(crate) fn computed(&mut self, node: &'d Node) -> Value {
        if let Some(v) = self.memo.get(&node.id) {
            return v.clone();
        }
        if !self.in_progress.insert(node.id.clone()) {
            return Value::error(ErrorCode::Cycle, format!("{} depends on itself", node.id));
        }
        let value = match &node.formula {
            Some(formula) => self.expr(&formula.expr),
            None => Value::error(ErrorCode::Ref, "computed node without formula"),
        };
        self.in_progress.remove(&node.id);
        self.memo.insert(node.id.clone(), value.clone());
        value
    }

    fn expr(&mut self, expr: &Expr) -> Value {
        match expr {
            Expr::Number(n) => Value::Number(*n),
            Expr::Ref(sel) => {
                let ids = sel.resolve(self.doc);
                match ids.as_slice() {
                    [one] => self.node_value(one),
                    _ => Value::error(ErrorCode::Ref, format!("{sel} matched {} nodes", ids.len())),
                }
            }
            Expr::Call(func, sel) => self.call(*func, sel),
            Expr::Binary(op, l, r) => {
                let l = match self.expr(l) {
                    Value::Number(n) => n,
                    err => return err,
                };
                let r = match self.expr(r) {
                    Value::Number(n) => n,
                    err => return err,
                };
                match op {
                    BinOp::Add => Value::Number(l + r),
                    BinOp::Sub => Value::Number(l - r),
                    BinOp::Mul => Value::Number(l * r),
                    BinOp::Div if r.abs() <= EPSILON => Value::error(ErrorCode::Div0, "division by zero"),
                    BinOp::Div => Value::Number(l / r),
                }
            }
        }
    }

    fn call(&mut self, func: Function, sel: &Selector) -> Value {
        if sel.is_dangling() {
            return Value::error(ErrorCode::Ref, "dangling reference");
        }
        let ids = sel.resolve(self.doc);
        match func {
            Function::Count => Value::Number(ids.len() as f64),
            Function::Sum => {
                let mut total = 0.0;
                for id in &ids {
                    match self.node_value(id) {
                        Value::Number(n) => total += n,
                        err => return err,
                    }
                }
                Value::Number(total)
            }
        }
    }

    fn node_value(&mut self, id: &NodeId) -> Value {
        let Some(node) = self.doc.find(id) else {
            return Value::error(ErrorCode::Ref, format!("no node {id}"));
        };
        self.value_of(node)
    }

    fn value_of(&mut self, node: &'d Node) -> Value {
        if node.kind == NodeKind::Computed {
            return self.computed(node);
        }
        if let Some(text) = &node.text {
            return match coerce_number(text) {
                Some(n) => Value::Number(n),
                None => Value::error(ErrorCode::Num, format!("{text:?} is not a number")),
            };
        }
        match node.children.as_slice() {
            [only] => self.value_of(only),
            _ => Value::error(ErrorCode::Num, format!("{} has no single value", node.id)),
        }
    }
}

/// Nodes whose content a selector reference reads, following the same
/// single-child chain as evaluation. Computed nodes end the chain.
pub(crate) fn value_chain<'d>(node: &'d Node, out: &mut Vec<&'d Node>) {
    out.push(node);
    if node.kind != NodeKind::Computed && node.text.is_none() {
        if let [only] = node.children.as_slice() {
            value_chain(only, out);
        }
    }
}
