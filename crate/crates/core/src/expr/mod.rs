//! The system-definition expression language.
//!
//! Expressions are rational in the coordinates `x1..xn` and named
//! parameters. They evaluate over `f64` or over [`Dual`] numbers, the latter
//! giving exact first partial derivatives.
//!
//! ```text
//! expr    := term (('+'|'-') term)* ;
//! term    := factor (('*'|'/') factor)* ;
//! factor  := '-' factor | power ;
//! power   := atom ('^' factor)? ;
//! atom    := NUMBER | IDENT | '(' expr ')' ;
//! ```

mod dual;
mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

pub use dual::{Dual, Scalar};
pub(crate) use parser::is_variable_name;
use thiserror::Error;

/// Named parameter values bound at evaluation time.
pub type Parameters = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// Zero-based coordinate index.
    Var(usize),
    Param(String),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at {position}")]
    UnknownIdentifier { position: usize, name: String },
    #[error("variable `{name}` at {position} is out of range for dimension {dimension}")]
    VariableOutOfRange { position: usize, name: String, dimension: usize },
}

impl ParseError {
    fn syntax(position: usize, message: impl Into<String>) -> Self {
        ParseError::Syntax { position, message: message.into() }
    }

    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { position, .. }
            | ParseError::UnknownIdentifier { position, .. }
            | ParseError::VariableOutOfRange { position, .. } => *position,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    DivisionByZero,
    ZeroToNegativePower,
    NonPositiveBase,
    NonFinite,
    UnboundParameter,
    DimensionMismatch,
}

/// Evaluation failed at a singular or otherwise invalid point.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind:?} in `{subexpression}`")]
pub struct EvalError {
    pub kind: EvalErrorKind,
    /// The offending subexpression, printed.
    pub subexpression: String,
}

impl EvalError {
    pub fn new(kind: EvalErrorKind, subexpression: impl Into<String>) -> Self {
        EvalError { kind, subexpression: subexpression.into() }
    }

    pub fn dimension(expected: usize, got: usize) -> Self {
        EvalError::new(EvalErrorKind::DimensionMismatch, format!("point of dimension {got}, expected {expected}"))
    }
}

/// An immutable parsed expression over `n` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Arc<Node>,
    dimension: usize,
}

impl Expression {
    pub fn parse(source: &str, dimension: usize, parameters: &BTreeSet<String>) -> Result<Self, ParseError> {
        parser::parse(source, dimension, parameters)
    }

    /// Parses with parameter names taken from a value map.
    pub fn parse_with(source: &str, dimension: usize, parameters: &Parameters) -> Result<Self, ParseError> {
        let names: BTreeSet<String> = parameters.keys().cloned().collect();
        parser::parse(source, dimension, &names)
    }

    pub fn from_node(root: Node, dimension: usize) -> Self {
        Expression { root: Arc::new(root), dimension }
    }

    pub fn constant(dimension: usize, value: f64) -> Self {
        Expression::from_node(Node::Const(value), dimension)
    }

    /// Coordinate `x_{index+1}`.
    pub fn variable(dimension: usize, index: usize) -> Self {
        assert!(index < dimension, "coordinate index {index} out of range");
        Expression::from_node(Node::Var(index), dimension)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn combine(&self, other: &Expression, op: fn(Box<Node>, Box<Node>) -> Node) -> Expression {
        assert_eq!(self.dimension, other.dimension, "expressions of different dimension");
        let node = op(Box::new((*self.root).clone()), Box::new((*other.root).clone()));
        Expression::from_node(node, self.dimension)
    }

    pub fn add(&self, other: &Expression) -> Expression {
        self.combine(other, Node::Add)
    }

    pub fn sub(&self, other: &Expression) -> Expression {
        self.combine(other, Node::Sub)
    }

    pub fn mul(&self, other: &Expression) -> Expression {
        self.combine(other, Node::Mul)
    }

    pub fn div(&self, other: &Expression) -> Expression {
        self.combine(other, Node::Div)
    }

    pub fn neg(&self) -> Expression {
        Expression::from_node(Node::Neg(Box::new((*self.root).clone())), self.dimension)
    }

    /// Parameter names referenced anywhere in the tree.
    pub fn parameter_names(&self) -> BTreeSet<String> {
        fn walk(node: &Node, out: &mut BTreeSet<String>) {
            match node {
                Node::Const(_) | Node::Var(_) => {}
                Node::Param(p) => {
                    out.insert(p.clone());
                }
                Node::Neg(a) => walk(a, out),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.root, &mut out);
        out
    }

    /// True when no coordinate appears in the tree.
    pub fn is_coordinate_free(&self) -> bool {
        fn walk(node: &Node) -> bool {
            match node {
                Node::Var(_) => false,
                Node::Const(_) | Node::Param(_) => true,
                Node::Neg(a) => walk(a),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a) && walk(b)
                }
            }
        }
        walk(&self.root)
    }

    pub fn eval(&self, x: &[f64], params: &Parameters) -> Result<f64, EvalError> {
        self.check_dimension(x)?;
        eval_node(&self.root, &|i| x[i], params)
    }

    /// Evaluates with dual numbers seeded along coordinate `direction`
    /// (zero-based); the derivative part is `∂f/∂x_direction`.
    pub fn eval_dual(&self, x: &[f64], direction: usize, params: &Parameters) -> Result<Dual, EvalError> {
        self.check_dimension(x)?;
        if direction >= self.dimension {
            return Err(EvalError::dimension(self.dimension, direction + 1));
        }
        let seed = |i: usize| {
            if i == direction {
                Dual::variable(x[i])
            } else {
                Dual::constant(x[i])
            }
        };
        eval_node(&self.root, &seed, params)
    }

    /// All first partials, one dual pass per coordinate.
    pub fn gradient(&self, x: &[f64], params: &Parameters) -> Result<Vec<f64>, EvalError> {
        (0..self.dimension).map(|i| self.eval_dual(x, i, params).map(|d| d.derivative)).collect()
    }

    fn check_dimension(&self, x: &[f64]) -> Result<(), EvalError> {
        if x.len() == self.dimension {
            Ok(())
        } else {
            Err(EvalError::dimension(self.dimension, x.len()))
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, self)
    }
}

fn check<S: Scalar>(v: S, node: &Node) -> Result<S, EvalError> {
    if v.finite() {
        Ok(v)
    } else {
        Err(EvalError::new(EvalErrorKind::NonFinite, node.to_string()))
    }
}

fn eval_node<S: Scalar>(node: &Node, var: &dyn Fn(usize) -> S, params: &Parameters) -> Result<S, EvalError> {
    let v = match node {
        Node::Const(c) => S::from_f64(*c),
        Node::Var(i) => var(*i),
        Node::Param(name) => match params.get(name) {
            Some(v) => S::from_f64(*v),
            None => return Err(EvalError::new(EvalErrorKind::UnboundParameter, name.clone())),
        },
        Node::Neg(a) => -eval_node(a, var, params)?,
        Node::Add(a, b) => eval_node(a, var, params)? + eval_node(b, var, params)?,
        Node::Sub(a, b) => eval_node(a, var, params)? - eval_node(b, var, params)?,
        Node::Mul(a, b) => eval_node(a, var, params)? * eval_node(b, var, params)?,
        Node::Div(a, b) => {
            let num = eval_node(a, var, params)?;
            let den = eval_node(b, var, params)?;
            if den.value() == 0.0 {
                return Err(EvalError::new(EvalErrorKind::DivisionByZero, node.to_string()));
            }
            num / den
        }
        Node::Pow(a, b) => {
            let base = eval_node(a, var, params)?;
            let exponent = eval_node(b, var, params)?;
            pow(base, exponent, node)?
        }
    };
    check(v, node)
}

const MAX_INTEGER_EXPONENT: f64 = 1024.0;

fn pow<S: Scalar>(base: S, exponent: S, node: &Node) -> Result<S, EvalError> {
    let e = exponent.value();
    if exponent.is_constant() && e.fract() == 0.0 && e.abs() <= MAX_INTEGER_EXPONENT {
        let k = e as i32;
        if k < 0 && base.value() == 0.0 {
            return Err(EvalError::new(EvalErrorKind::ZeroToNegativePower, node.to_string()));
        }
        let p = powi(base, k.unsigned_abs());
        return Ok(if k < 0 { S::from_f64(1.0) / p } else { p });
    }
    if base.value() <= 0.0 {
        return Err(EvalError::new(EvalErrorKind::NonPositiveBase, node.to_string()));
    }
    Ok(base.powf_positive(exponent))
}

/// Exponentiation by repeated multiplication (binary splitting).
fn powi<S: Scalar>(base: S, mut k: u32) -> S {
    let mut acc = S::from_f64(1.0);
    let mut b = base;
    while k > 0 {
        if k & 1 == 1 {
            acc = acc * b;
        }
        k >>= 1;
        if k > 0 {
            b = b * b;
        }
    }
    acc
}

// Printing precedence levels; higher binds tighter.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_NEG: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(node: &Node) -> u8 {
    match node {
        Node::Const(c) if *c < 0.0 || c.is_sign_negative() => PREC_NEG,
        Node::Const(_) | Node::Var(_) | Node::Param(_) => PREC_ATOM,
        Node::Neg(_) => PREC_NEG,
        Node::Add(..) | Node::Sub(..) => PREC_ADD,
        Node::Mul(..) | Node::Div(..) => PREC_MUL,
        Node::Pow(..) => PREC_POW,
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, node: &Node, wrap: bool) -> fmt::Result {
    if wrap {
        f.write_str("(")?;
        write_node(f, node)?;
        f.write_str(")")
    } else {
        write_node(f, node)
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, node: &Node) -> fmt::Result {
    match node {
        Node::Const(c) => write!(f, "{c}"),
        Node::Var(i) => write!(f, "x{}", i + 1),
        Node::Param(p) => f.write_str(p),
        Node::Neg(a) => {
            f.write_str("-")?;
            write_wrapped(f, a, precedence(a) < PREC_NEG)
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            let (prec, op) = match node {
                Node::Add(..) => (PREC_ADD, " + "),
                Node::Sub(..) => (PREC_ADD, " - "),
                Node::Mul(..) => (PREC_MUL, "*"),
                _ => (PREC_MUL, "/"),
            };
            write_wrapped(f, a, precedence(a) < prec)?;
            f.write_str(op)?;
            write_wrapped(f, b, precedence(b) <= prec)
        }
        Node::Pow(a, b) => {
            write_wrapped(f, a, precedence(a) < PREC_ATOM)?;
            f.write_str("^")?;
            write_wrapped(f, b, precedence(b) < PREC_NEG)
        }
    }
}
