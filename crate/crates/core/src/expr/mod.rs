//! Scalar expressions in chart coordinates and a time parameter.
//!
//! Expressions are parsed once into an immutable AST and evaluated either
//! plainly or with exact first derivatives through forward-mode dual
//! numbers. They feed metric entries, curve components, projector entries
//! and boundary functions.
//!
//! Grammar (EBNF):
//!
//! ```text
//! expr    = term , { ( "+" | "-" ) , term } ;
//! term    = unary , { ( "*" | "/" ) , unary } ;
//! unary   = "-" , unary | power ;
//! power   = atom , [ "^" , [ "-" ] , integer ] ;
//! atom    = number | variable | "t" | function , "(" , expr , ")"
//!         | "(" , expr , ")" ;
//! function = "sin" | "cos" | "exp" | "log" | "sqrt" | "tanh" | "atan" ;
//! ```
//!
//! Variables are `x0 .. x{n-1}` (or caller-supplied names), `t` is the
//! time parameter, numbers are decimal with optional exponent.

mod dual;
mod parser;
mod token;

pub use dual::DualValue;

use std::fmt;

use nalgebra::DVector;
use thiserror::Error;

use crate::Real;

/// Unary functions available in the grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Atan,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            "atan" => Func::Atan,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Atan => "atan",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Node {
    Num(f64),
    Var(usize),
    Time,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Call(Func, Box<Node>),
}

/// Parse error with the byte offset it occurred at.
#[derive(Clone, Debug, Error, PartialEq)]
#[error("syntax error at offset {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ParseErrorKind {
    #[error("empty source")]
    EmptySource,
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("unexpected {0}")]
    UnexpectedToken(String),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("wrong number of arguments for `{0}` (all functions take one)")]
    ArityMismatch(String),
    #[error("malformed number `{0}`")]
    BadNumber(String),
    #[error("exponent must be an integer literal")]
    NonIntegerExponent,
}

/// Evaluation error.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point has {got} coordinates, expression needs {needed}")]
    PointTooShort { needed: usize, got: usize },
}

impl EvalError {
    fn domain(what: &str) -> EvalError {
        EvalError::Domain(what.to_string())
    }
}

/// A parsed scalar expression over named variables and the time parameter.
///
/// Immutable after parse; evaluation is reentrant and deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    node: Node,
    vars: Vec<String>,
}

impl Expr {
    /// Parses `source` over the coordinate variables `x0 .. x{n_vars-1}`
    /// and the time parameter `t`.
    pub fn parse(source: &str, n_vars: usize) -> Result<Expr, ParseError> {
        let vars: Vec<String> = (0..n_vars).map(|i| format!("x{i}")).collect();
        Expr::parse_named(source, &vars)
    }

    /// Parses `source` over caller-supplied variable names plus `t`.
    pub fn parse_named(source: &str, vars: &[impl AsRef<str>]) -> Result<Expr, ParseError> {
        let vars: Vec<String> = vars.iter().map(|v| v.as_ref().to_string()).collect();
        let node = parser::Parser::parse(source, &vars)?;
        Ok(Expr { node, vars })
    }

    /// A constant expression.
    pub fn number(value: f64) -> Expr {
        Expr {
            node: num_node(value),
            vars: Vec::new(),
        }
    }

    /// Number of declared variables (`t` not counted).
    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    /// Evaluates at `point` (length ≥ `n_vars`) and time `t`.
    pub fn eval<T: Real>(&self, point: &[T], t: T) -> Result<T, EvalError> {
        if point.len() < self.vars.len() {
            return Err(EvalError::PointTooShort {
                needed: self.vars.len(),
                got: point.len(),
            });
        }
        let value = eval_node(&self.node, point, t)?;
        if !value.is_finite() {
            return Err(EvalError::domain("non-finite result"));
        }
        Ok(value)
    }

    /// Evaluates with the exact gradient against the coordinate variables.
    pub fn eval_with_grad<T: Real>(
        &self,
        point: &[T],
        t: T,
    ) -> Result<(T, DVector<T>), EvalError> {
        let n = self.vars.len();
        if point.len() < n {
            return Err(EvalError::PointTooShort {
                needed: n,
                got: point.len(),
            });
        }
        let seeds: Vec<DualValue<T>> = point
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, &x)| DualValue::variable(x, n, i))
            .collect();
        let out = eval_dual_node(&self.node, &seeds, &DualValue::constant(t, n))?;
        if !out.value.is_finite() {
            return Err(EvalError::domain("non-finite result"));
        }
        Ok((out.value, DVector::from_vec(out.partials)))
    }

    /// Evaluates with the exact time derivative (coordinates held fixed).
    pub fn eval_with_dt<T: Real>(&self, point: &[T], t: T) -> Result<(T, T), EvalError> {
        if point.len() < self.vars.len() {
            return Err(EvalError::PointTooShort {
                needed: self.vars.len(),
                got: point.len(),
            });
        }
        let seeds: Vec<DualValue<T>> = point
            .iter()
            .take(self.vars.len())
            .map(|&x| DualValue::constant(x, 1))
            .collect();
        let out = eval_dual_node(&self.node, &seeds, &DualValue::variable(t, 1, 0))?;
        if !out.value.is_finite() {
            return Err(EvalError::domain("non-finite result"));
        }
        Ok((out.value, out.partials[0]))
    }

    /// Evaluates on caller-seeded dual values (one per variable, plus `t`).
    pub fn eval_dual<T: Real>(
        &self,
        point: &[DualValue<T>],
        t: &DualValue<T>,
    ) -> Result<DualValue<T>, EvalError> {
        if point.len() < self.vars.len() {
            return Err(EvalError::PointTooShort {
                needed: self.vars.len(),
                got: point.len(),
            });
        }
        eval_dual_node(&self.node, point, t)
    }

    /// Fixes some variables to constants; the result ranges over the
    /// remaining variables, reindexed in order.
    pub fn bind(&self, bindings: &[Option<f64>]) -> Expr {
        assert_eq!(bindings.len(), self.vars.len(), "one binding slot per variable");
        let mut remap = vec![usize::MAX; self.vars.len()];
        let mut vars = Vec::new();
        for (i, binding) in bindings.iter().enumerate() {
            if binding.is_none() {
                remap[i] = vars.len();
                vars.push(self.vars[i].clone());
            }
        }
        Expr {
            node: bind_node(&self.node, bindings, &remap),
            vars,
        }
    }

    /// Re-homes the expression into a larger variable space: variable `i`
    /// becomes variable `offset + i`. `vars` names the full new space.
    pub fn reindex_vars(&self, offset: usize, vars: &[impl AsRef<str>]) -> Expr {
        let vars: Vec<String> = vars.iter().map(|v| v.as_ref().to_string()).collect();
        assert!(self.vars.len() + offset <= vars.len());
        Expr {
            node: shift_node(&self.node, offset),
            vars,
        }
    }

    /// Σ coeffs[k] · exprs[k] as a new expression. All inputs must share
    /// the same variable space.
    pub fn linear_combination(terms: &[(f64, Expr)]) -> Expr {
        let vars = terms
            .first()
            .map(|(_, e)| e.vars.clone())
            .unwrap_or_default();
        let mut acc: Option<Node> = None;
        for (coeff, expr) in terms {
            assert_eq!(expr.vars, vars, "terms share a variable space");
            if *coeff == 0.0 {
                continue;
            }
            let term = Node::Mul(Box::new(num_node(*coeff)), Box::new(expr.node.clone()));
            acc = Some(match acc {
                None => term,
                Some(prev) => Node::Add(Box::new(prev), Box::new(term)),
            });
        }
        Expr {
            node: acc.unwrap_or(Node::Num(0.0)),
            vars,
        }
    }
}

// Negative literals print as unary minus, so constructed trees use Neg
// to keep parse∘print∘parse structural.
fn num_node(value: f64) -> Node {
    if value < 0.0 {
        Node::Neg(Box::new(Node::Num(-value)))
    } else {
        Node::Num(value)
    }
}

fn eval_node<T: Real>(node: &Node, point: &[T], t: T) -> Result<T, EvalError> {
    Ok(match node {
        Node::Num(v) => T::lit(*v),
        Node::Var(i) => point[*i],
        Node::Time => t,
        Node::Neg(a) => -eval_node(a, point, t)?,
        Node::Add(a, b) => eval_node(a, point, t)? + eval_node(b, point, t)?,
        Node::Sub(a, b) => eval_node(a, point, t)? - eval_node(b, point, t)?,
        Node::Mul(a, b) => eval_node(a, point, t)? * eval_node(b, point, t)?,
        Node::Div(a, b) => {
            let num = eval_node(a, point, t)?;
            let den = eval_node(b, point, t)?;
            if den == T::zero() {
                return Err(EvalError::domain("division by zero"));
            }
            num / den
        }
        Node::Pow(a, k) => {
            let base = eval_node(a, point, t)?;
            if base == T::zero() && *k < 0 {
                return Err(EvalError::domain("zero raised to a negative power"));
            }
            base.powi(*k)
        }
        Node::Call(func, a) => {
            let arg = eval_node(a, point, t)?;
            match func {
                Func::Sin => arg.sin(),
                Func::Cos => arg.cos(),
                Func::Exp => arg.exp(),
                Func::Log => {
                    if arg <= T::zero() {
                        return Err(EvalError::domain("log of non-positive argument"));
                    }
                    arg.ln()
                }
                Func::Sqrt => {
                    if arg < T::zero() {
                        return Err(EvalError::domain("sqrt of negative argument"));
                    }
                    arg.sqrt()
                }
                Func::Tanh => arg.tanh(),
                Func::Atan => arg.atan(),
            }
        }
    })
}

fn eval_dual_node<T: Real>(
    node: &Node,
    point: &[DualValue<T>],
    t: &DualValue<T>,
) -> Result<DualValue<T>, EvalError> {
    let n = t.partials.len();
    Ok(match node {
        Node::Num(v) => DualValue::constant(T::lit(*v), n),
        Node::Var(i) => point[*i].clone(),
        Node::Time => t.clone(),
        Node::Neg(a) => eval_dual_node(a, point, t)?.neg(),
        Node::Add(a, b) => eval_dual_node(a, point, t)?.add(&eval_dual_node(b, point, t)?),
        Node::Sub(a, b) => eval_dual_node(a, point, t)?.sub(&eval_dual_node(b, point, t)?),
        Node::Mul(a, b) => eval_dual_node(a, point, t)?.mul(&eval_dual_node(b, point, t)?),
        Node::Div(a, b) => eval_dual_node(a, point, t)?.div(&eval_dual_node(b, point, t)?)?,
        Node::Pow(a, k) => eval_dual_node(a, point, t)?.powi(*k)?,
        Node::Call(func, a) => {
            let arg = eval_dual_node(a, point, t)?;
            match func {
                Func::Sin => arg.sin(),
                Func::Cos => arg.cos(),
                Func::Exp => arg.exp(),
                Func::Log => arg.ln()?,
                Func::Sqrt => arg.sqrt()?,
                Func::Tanh => arg.tanh(),
                Func::Atan => arg.atan(),
            }
        }
    })
}

fn bind_node(node: &Node, bindings: &[Option<f64>], remap: &[usize]) -> Node {
    match node {
        Node::Num(v) => Node::Num(*v),
        Node::Var(i) => match bindings[*i] {
            Some(value) => num_node(value),
            None => Node::Var(remap[*i]),
        },
        Node::Time => Node::Time,
        Node::Neg(a) => Node::Neg(Box::new(bind_node(a, bindings, remap))),
        Node::Add(a, b) => Node::Add(
            Box::new(bind_node(a, bindings, remap)),
            Box::new(bind_node(b, bindings, remap)),
        ),
        Node::Sub(a, b) => Node::Sub(
            Box::new(bind_node(a, bindings, remap)),
            Box::new(bind_node(b, bindings, remap)),
        ),
        Node::Mul(a, b) => Node::Mul(
            Box::new(bind_node(a, bindings, remap)),
            Box::new(bind_node(b, bindings, remap)),
        ),
        Node::Div(a, b) => Node::Div(
            Box::new(bind_node(a, bindings, remap)),
            Box::new(bind_node(b, bindings, remap)),
        ),
        Node::Pow(a, k) => Node::Pow(Box::new(bind_node(a, bindings, remap)), *k),
        Node::Call(f, a) => Node::Call(*f, Box::new(bind_node(a, bindings, remap))),
    }
}

fn shift_node(node: &Node, offset: usize) -> Node {
    match node {
        Node::Num(v) => Node::Num(*v),
        Node::Var(i) => Node::Var(i + offset),
        Node::Time => Node::Time,
        Node::Neg(a) => Node::Neg(Box::new(shift_node(a, offset))),
        Node::Add(a, b) => Node::Add(Box::new(shift_node(a, offset)), Box::new(shift_node(b, offset))),
        Node::Sub(a, b) => Node::Sub(Box::new(shift_node(a, offset)), Box::new(shift_node(b, offset))),
        Node::Mul(a, b) => Node::Mul(Box::new(shift_node(a, offset)), Box::new(shift_node(b, offset))),
        Node::Div(a, b) => Node::Div(Box::new(shift_node(a, offset)), Box::new(shift_node(b, offset))),
        Node::Pow(a, k) => Node::Pow(Box::new(shift_node(a, offset)), *k),
        Node::Call(f, a) => Node::Call(*f, Box::new(shift_node(a, offset))),
    }
}

// Printing parenthesizes exactly where re-parsing would otherwise change
// the tree, so parse(print(e)) is structurally identical to e.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.node, &self.vars, 0)
    }
}

fn precedence(node: &Node) -> u8 {
    match node {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Neg(..) => 3,
        Node::Pow(..) => 4,
        Node::Num(..) | Node::Var(..) | Node::Time | Node::Call(..) => 5,
    }
}

fn write_node(
    f: &mut fmt::Formatter<'_>,
    node: &Node,
    vars: &[String],
    min_prec: u8,
) -> fmt::Result {
    let prec = precedence(node);
    if prec < min_prec {
        write!(f, "(")?;
        write_node(f, node, vars, 0)?;
        return write!(f, ")");
    }
    match node {
        Node::Num(v) => write!(f, "{v}"),
        Node::Var(i) => write!(f, "{}", vars[*i]),
        Node::Time => write!(f, "t"),
        Node::Neg(a) => {
            write!(f, "-")?;
            write_node(f, a, vars, 3)
        }
        Node::Add(a, b) => {
            write_node(f, a, vars, 1)?;
            write!(f, " + ")?;
            write_node(f, b, vars, 2)
        }
        Node::Sub(a, b) => {
            write_node(f, a, vars, 1)?;
            write!(f, " - ")?;
            write_node(f, b, vars, 2)
        }
        Node::Mul(a, b) => {
            write_node(f, a, vars, 2)?;
            write!(f, "*")?;
            write_node(f, b, vars, 3)
        }
        Node::Div(a, b) => {
            write_node(f, a, vars, 2)?;
            write!(f, "/")?;
            write_node(f, b, vars, 3)
        }
        Node::Pow(a, k) => {
            write_node(f, a, vars, 5)?;
            write!(f, "^{k}")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(f, a, vars, 0)?;
            write!(f, ")")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(src: &str, n: usize) -> Expr {
        Expr::parse(src, n).unwrap()
    }

    #[test]
    fn parse_builds_expected_root() {
        let e = p("x0*x0 + sin(x1)", 2);
        assert!(matches!(e.node, Node::Add(..)));
    }

    #[test]
    fn precedence_and_associativity() {
        // 1 - 2 - 3 parses left-associative: (1 - 2) - 3.
        let e = p("1 - 2 - 3", 0);
        assert_abs_diff_eq!(e.eval::<f64>(&[], 0.0).unwrap(), -4.0);
        // ^ binds above unary minus: -2^2 = -(2^2).
        assert_abs_diff_eq!(p("-2^2", 0).eval::<f64>(&[], 0.0).unwrap(), -4.0);
        // * above +.
        assert_abs_diff_eq!(p("2+3*4", 0).eval::<f64>(&[], 0.0).unwrap(), 14.0);
        assert_abs_diff_eq!(p("2*3^2", 0).eval::<f64>(&[], 0.0).unwrap(), 18.0);
    }

    #[test]
    fn malformed_input_positions() {
        let err = Expr::parse("x0 + * 2", 2).unwrap_err();
        assert_eq!(err.offset, 5);
        let err = Expr::parse("x3", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownIdentifier("x3".into()));
        let err = Expr::parse("sin(x0, x1)", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::ArityMismatch("sin".into()));
        assert_eq!(err.offset, 6);
        let err = Expr::parse("", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::EmptySource);
        let err = Expr::parse("x0 ^ x1", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::NonIntegerExponent);
        let err = Expr::parse("x0 ^ 1.5", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::NonIntegerExponent);
        let err = Expr::parse("(x0 + 1", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnexpectedEnd);
        let err = Expr::parse("x0 @ 1", 1).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnexpectedChar('@'));
        assert_eq!(err.offset, 3);
    }

    #[test]
    fn eval_basics() {
        assert_abs_diff_eq!(p("x0+2*x1", 2).eval(&[1.0, 2.0], 0.0).unwrap(), 5.0);
        assert_abs_diff_eq!(p("sin(t)", 0).eval::<f64>(&[], 0.0).unwrap(), 0.0);
        let err = p("1/x0", 1).eval(&[0.0], 0.0).unwrap_err();
        assert!(matches!(err, EvalError::Domain(_)));
        let err = p("log(x0)", 1).eval(&[-1.0], 0.0).unwrap_err();
        assert!(matches!(err, EvalError::Domain(_)));
        let err = p("sqrt(x0)", 1).eval(&[-1.0], 0.0).unwrap_err();
        assert!(matches!(err, EvalError::Domain(_)));
    }

    #[test]
    fn gradient_power_and_product_rule() {
        let (v, g) = p("x0^2", 1).eval_with_grad(&[3.0], 0.0).unwrap();
        assert_abs_diff_eq!(v, 9.0);
        assert_abs_diff_eq!(g[0], 6.0);

        let (v, g) = p("sin(x0)*x1", 2).eval_with_grad(&[0.0, 5.0], 0.0).unwrap();
        assert_abs_diff_eq!(v, 0.0);
        assert_abs_diff_eq!(g[0], 5.0);
        assert_abs_diff_eq!(g[1], 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        // exp(x0*x1) at (0.3, 0.7), oracle step 1e-6.
        let e = p("exp(x0*x1)", 2);
        let (_, g) = e.eval_with_grad(&[0.3, 0.7], 0.0).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut hi = [0.3, 0.7];
            let mut lo = [0.3, 0.7];
            hi[i] += h;
            lo[i] -= h;
            let fd: f64 =
                (e.eval(&hi, 0.0).unwrap() - e.eval(&lo, 0.0).unwrap()) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-8, "partial {i}: {} vs {}", g[i], fd);
        }
    }

    #[test]
    fn time_derivative() {
        let e = p("x0*cos(2*t)", 1);
        let (v, dt) = e.eval_with_dt(&[3.0], 0.5).unwrap();
        assert_abs_diff_eq!(v, 3.0 * (1.0f64).cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(dt, -6.0 * (1.0f64).sin(), epsilon = 1e-15);
    }

    #[test]
    fn print_reparse_is_structural_identity() {
        for src in [
            "x0*x0 + sin(x1)",
            "1 - 2 - 3",
            "-(x0 + x1)^2",
            "x0 - (x1 - 2)",
            "2*(x0 + 1)/(x1 - 3)",
            "sqrt(x0^2 + 1) * tanh(t)",
            "x0^-2 + atan(x1/2)",
            "-x0^3",
            "exp(-(t^2))",
        ] {
            let e = p(src, 2);
            let printed = e.to_string();
            let reparsed = Expr::parse(&printed, 2).unwrap();
            assert_eq!(e, reparsed, "source `{src}` printed `{printed}`");
        }
    }

    #[test]
    fn bind_fixes_variables() {
        let e = Expr::parse_named("u*t + u^2", &["u"]).unwrap();
        let bound = e.bind(&[Some(3.0)]);
        assert_eq!(bound.n_vars(), 0);
        assert_abs_diff_eq!(bound.eval::<f64>(&[], 2.0).unwrap(), 15.0);
    }

    #[test]
    fn reindex_moves_variables() {
        let e = p("x0 + 2*x1", 2);
        let shifted = e.reindex_vars(1, &["x0", "x1", "x2"]);
        assert_abs_diff_eq!(shifted.eval(&[100.0, 1.0, 2.0], 0.0).unwrap(), 5.0);
    }

    #[test]
    fn linear_combination_matches_pointwise() {
        let a = p("x0", 1);
        let b = p("sin(x0)", 1);
        let combo = Expr::linear_combination(&[(2.0, a.clone()), (-0.5, b.clone())]);
        let x: f64 = 0.73;
        let want = 2.0 * x - 0.5 * x.sin();
        assert_abs_diff_eq!(combo.eval(&[x], 0.0).unwrap(), want, epsilon = 1e-15);
        // Round-trips through print.
        let reparsed = Expr::parse(&combo.to_string(), 1).unwrap();
        assert_eq!(combo, reparsed);
    }
}
