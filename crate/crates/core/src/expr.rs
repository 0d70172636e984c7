//! A small arithmetic expression language for configuration values.
//!
//! Grammar (usual precedence, `^` right-associative):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers are `x`, `y`, `t`, `pi`, or names bound at evaluation time
//! (for example `m` from the run configuration). Supported functions are
//! `sin`, `cos`, `exp`, `sqrt` and `ln`. Expressions can be differentiated
//! symbolically, which is how analytic derivatives of `v0` and of
//! coefficient fields are obtained.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Ln,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "ln" | "log" => Func::Ln,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Sqrt => v.sqrt(),
            Func::Ln => v.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Variable bindings used during evaluation. `pi` is always bound.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    values: BTreeMap<String, f64>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.values.insert(name.to_string(), value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        if name == "pi" {
            return Some(std::f64::consts::PI);
        }
        self.values.get(name).copied()
    }

    /// Binds `x`, `y` (when present) and `t`.
    pub fn at(&self, point: &[f64], t: f64) -> Bindings {
        let mut b = self.clone();
        b.set("x", point.first().copied().unwrap_or(0.0));
        b.set("y", point.get(1).copied().unwrap_or(0.0));
        b.set("t", t);
        b
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, len: src.len() };
        let e = p.expr()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(Error::ParseError {
                position: tok.pos,
                message: format!("unexpected token {:?}", tok.kind),
            });
        }
        Ok(e)
    }

    /// Replaces every variable bound in `b` by its value.
    pub fn bind(&self, b: &Bindings) -> Expr {
        let bx = |e: &Expr| Box::new(e.bind(b));
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(n) => b.get(n).filter(|_| n != "pi").map(Expr::Num).unwrap_or_else(|| Expr::Var(n.clone())),
            Expr::Neg(a) => Expr::Neg(bx(a)),
            Expr::Add(l, r) => Expr::Add(bx(l), bx(r)),
            Expr::Sub(l, r) => Expr::Sub(bx(l), bx(r)),
            Expr::Mul(l, r) => Expr::Mul(bx(l), bx(r)),
            Expr::Div(l, r) => Expr::Div(bx(l), bx(r)),
            Expr::Pow(l, r) => Expr::Pow(bx(l), bx(r)),
            Expr::Call(func, a) => Expr::Call(*func, bx(a)),
        }
    }

    pub fn eval(&self, b: &Bindings) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => b
                .get(name)
                .ok_or_else(|| Error::InvalidInput(format!("unbound variable '{name}'")))?,
            Expr::Neg(a) => -a.eval(b)?,
            Expr::Add(l, r) => l.eval(b)? + r.eval(b)?,
            Expr::Sub(l, r) => l.eval(b)? - r.eval(b)?,
            Expr::Mul(l, r) => l.eval(b)? * r.eval(b)?,
            Expr::Div(l, r) => l.eval(b)? / r.eval(b)?,
            Expr::Pow(l, r) => {
                let base = l.eval(b)?;
                match r.as_ref() {
                    Expr::Num(n) if n.fract() == 0.0 && n.abs() < 64.0 => base.powi(*n as i32),
                    _ => base.powf(r.eval(b)?),
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(b)?),
        })
    }

    /// Names of all variables referenced (excluding `pi`).
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(n) => {
                if n != "pi" {
                    out.push(n.clone())
                }
            }
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_vars(out),
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) | Expr::Pow(l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    fn depends_on(&self, var: &str) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(n) => n == var,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(var),
            Expr::Add(l, r) | Expr::Sub(l, r) | Expr::Mul(l, r) | Expr::Div(l, r) | Expr::Pow(l, r) => {
                l.depends_on(var) || r.depends_on(var)
            }
        }
    }

    /// Symbolic derivative with respect to `var`.
    pub fn derivative(&self, var: &str) -> Expr {
        use Expr::*;
        if !self.depends_on(var) {
            return Num(0.0);
        }
        match self {
            Num(_) => Num(0.0),
            Var(n) => Num(if n == var { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(var)),
            Add(l, r) => add(l.derivative(var), r.derivative(var)),
            Sub(l, r) => sub(l.derivative(var), r.derivative(var)),
            Mul(l, r) => add(
                mul(l.derivative(var), (**r).clone()),
                mul((**l).clone(), r.derivative(var)),
            ),
            Div(l, r) => div(
                sub(
                    mul(l.derivative(var), (**r).clone()),
                    mul((**l).clone(), r.derivative(var)),
                ),
                pow((**r).clone(), Num(2.0)),
            ),
            Pow(l, r) => {
                if !r.depends_on(var) {
                    // d(u^c) = c u^(c-1) u'
                    let c = (**r).clone();
                    let cm1 = match &c {
                        Num(v) => Num(v - 1.0),
                        _ => sub(c.clone(), Num(1.0)),
                    };
                    mul(mul(c, pow((**l).clone(), cm1)), l.derivative(var))
                } else {
                    // d(u^w) = u^w (w' ln u + w u'/u)
                    mul(
                        self.clone(),
                        add(
                            mul(r.derivative(var), Call(Func::Ln, l.clone())),
                            div(mul((**r).clone(), l.derivative(var)), (**l).clone()),
                        ),
                    )
                }
            }
            Call(f, a) => {
                let inner = a.derivative(var);
                let outer = match f {
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => neg(Call(Func::Sin, a.clone())),
                    Func::Exp => self.clone(),
                    Func::Sqrt => div(Num(0.5), self.clone()),
                    Func::Ln => div(Num(1.0), (**a).clone()),
                };
                mul(outer, inner)
            }
        }
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(l: Expr, r: Expr) -> Expr {
    match (&l, &r) {
        (Expr::Num(a), Expr::Num(b)) => Expr::Num(a + b),
        (Expr::Num(a), _) if *a == 0.0 => r,
        (_, Expr::Num(b)) if *b == 0.0 => l,
        _ => Expr::Add(Box::new(l), Box::new(r)),
    }
}

fn sub(l: Expr, r: Expr) -> Expr {
    match (&l, &r) {
        (Expr::Num(a), Expr::Num(b)) => Expr::Num(a - b),
        (_, Expr::Num(b)) if *b == 0.0 => l,
        (Expr::Num(a), _) if *a == 0.0 => neg(r),
        _ => Expr::Sub(Box::new(l), Box::new(r)),
    }
}

fn mul(l: Expr, r: Expr) -> Expr {
    match (&l, &r) {
        (Expr::Num(a), Expr::Num(b)) => Expr::Num(a * b),
        (Expr::Num(a), _) | (_, Expr::Num(a)) if *a == 0.0 => Expr::Num(0.0),
        (Expr::Num(a), _) if *a == 1.0 => r,
        (_, Expr::Num(b)) if *b == 1.0 => l,
        _ => Expr::Mul(Box::new(l), Box::new(r)),
    }
}

fn div(l: Expr, r: Expr) -> Expr {
    match (&l, &r) {
        (Expr::Num(a), _) if *a == 0.0 => Expr::Num(0.0),
        (_, Expr::Num(b)) if *b == 1.0 => l,
        _ => Expr::Div(Box::new(l), Box::new(r)),
    }
}

fn pow(l: Expr, r: Expr) -> Expr {
    match (&l, &r) {
        (_, Expr::Num(b)) if *b == 1.0 => l,
        (_, Expr::Num(b)) if *b == 0.0 => Expr::Num(1.0),
        _ => Expr::Pow(Box::new(l), Box::new(r)),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 => write!(f, "({v})"),
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(n) => write!(f, "{n}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(l, r) => write!(f, "({l} + {r})"),
            Expr::Sub(l, r) => write!(f, "({l} - {r})"),
            Expr::Mul(l, r) => write!(f, "({l} * {r})"),
            Expr::Div(l, r) => write!(f, "({l} / {r})"),
            Expr::Pow(l, r) => write!(f, "({l} ^ {r})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent part
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| Error::ParseError {
                position: start,
                message: format!("malformed number '{text}'"),
            })?;
            out.push(Token { kind: TokKind::Num(v), pos: start });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { kind: TokKind::Ident(src[start..i].to_string()), pos: start });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => TokKind::Op(c),
                '(' => TokKind::LParen,
                ')' => TokKind::RParen,
                _ => {
                    return Err(Error::ParseError {
                        position: start,
                        message: format!("unexpected character '{c}'"),
                    })
                }
            };
            out.push(Token { kind, pos: start });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&TokKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.pos).unwrap_or(self.len)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(TokKind::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(TokKind::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(TokKind::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(TokKind::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(TokKind::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let pos = self.here();
        match self.peek().cloned() {
            Some(TokKind::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(TokKind::Ident(name)) => {
                self.pos += 1;
                if let Some(TokKind::LParen) = self.peek() {
                    let func = Func::from_name(&name).ok_or_else(|| Error::ParseError {
                        position: pos,
                        message: format!("unknown function '{name}'"),
                    })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(TokKind::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Some(other) => Err(Error::ParseError {
                position: pos,
                message: format!("unexpected token {other:?}"),
            }),
            None => Err(Error::ParseError { position: pos, message: "unexpected end of input".into() }),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        match self.peek() {
            Some(TokKind::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::ParseError { position: self.here(), message: "expected ')'".into() }),
        }
    }
}

/// A parsed expression together with its first three spatial derivatives,
/// used for analytic data on 1D/2D grids.
#[derive(Debug, Clone)]
pub struct SpatialExpr {
    pub source: String,
    pub value: Expr,
    grad: Vec<Expr>,
    hess: Vec<Vec<Expr>>,
    third: Vec<Vec<Vec<Expr>>>,
}

impl SpatialExpr {
    pub fn new(source: &str, dim: usize) -> Result<Self> {
        let value = Expr::parse(source)?;
        let vars = ["x", "y"];
        let grad: Vec<Expr> = (0..dim).map(|i| value.derivative(vars[i])).collect();
        let hess: Vec<Vec<Expr>> = (0..dim)
            .map(|i| (0..dim).map(|j| grad[i].derivative(vars[j])).collect())
            .collect();
        let third = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| (0..dim).map(|k| hess[i][j].derivative(vars[k])).collect())
                    .collect()
            })
            .collect();
        Ok(Self { source: source.to_string(), value, grad, hess, third })
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn value_at(&self, b: &Bindings) -> Result<f64> {
        self.value.eval(b)
    }

    pub fn grad_at(&self, b: &Bindings) -> Result<Vec<f64>> {
        self.grad.iter().map(|e| e.eval(b)).collect()
    }

    pub fn hess_at(&self, b: &Bindings) -> Result<Vec<Vec<f64>>> {
        self.hess.iter().map(|row| row.iter().map(|e| e.eval(b)).collect()).collect()
    }

    pub fn third_at(&self, b: &Bindings) -> Result<Vec<Vec<Vec<f64>>>> {
        self.third
            .iter()
            .map(|m| m.iter().map(|row| row.iter().map(|e| e.eval(b)).collect()).collect())
            .collect()
    }

    pub fn time_derivative(&self) -> Expr {
        self.value.derivative("t")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, b: &Bindings) -> f64 {
        Expr::parse(src).unwrap().eval(b).unwrap()
    }

    #[test]
    fn reference_table() {
        let b = Bindings::new().with("x", 0.5);
        assert_eq!(eval("1 - x^2", &b), 0.75);
        let b1 = Bindings::new().with("x", 1.0);
        assert!(eval("sin(pi*x)", &b1).abs() <= 1e-15);
        let b2 = Bindings::new().with("m", 2.0).with("x", 3.0);
        assert_eq!(eval("(m-1)*x", &b2), 3.0);
        assert_eq!(eval("2^3^2", &Bindings::new()), 512.0);
        assert_eq!(eval("-2^2", &Bindings::new()), -4.0);
        assert_eq!(eval("1e-3*2", &Bindings::new()), 2e-3);
        assert_eq!(eval("8/2/2", &Bindings::new()), 2.0);
        assert!((eval("exp(1)", &Bindings::new()) - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_carry_position() {
        match Expr::parse("1 + * 2") {
            Err(Error::ParseError { position, .. }) => assert_eq!(position, 4),
            other => panic!("unexpected {other:?}"),
        }
        match Expr::parse("sin(x") {
            Err(Error::ParseError { position, .. }) => assert_eq!(position, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(Expr::parse("foo(1)"), Err(Error::ParseError { position: 0, .. })));
        assert!(matches!(Expr::parse("1 $ 2"), Err(Error::ParseError { position: 2, .. })));
    }

    #[test]
    fn unbound_variable_is_reported() {
        let e = Expr::parse("z + 1").unwrap();
        assert!(e.eval(&Bindings::new()).is_err());
    }

    #[test]
    fn symbolic_derivatives_match_finite_differences() {
        let srcs = ["x^3 - 2*x*y", "exp(x)*cos(y)", "sin(pi*x)*x*(1-x)", "sqrt(1+x^2)/(2+y)", "x^y"];
        let p = [0.7, 0.3];
        for s in srcs {
            let e = SpatialExpr::new(s, 2).unwrap();
            let g = e.grad_at(&Bindings::new().at(&p, 0.0)).unwrap();
            for (i, gi) in g.iter().enumerate() {
                let h = 1e-6;
                let mut pp = p;
                let mut pm = p;
                pp[i] += h;
                pm[i] -= h;
                let fd = (e.value_at(&Bindings::new().at(&pp, 0.0)).unwrap()
                    - e.value_at(&Bindings::new().at(&pm, 0.0)).unwrap())
                    / (2.0 * h);
                assert!((fd - gi).abs() < 1e-7, "{s}: d{i} {fd} vs {gi}");
            }
        }
    }

    #[test]
    fn third_derivatives_of_polynomial() {
        let e = SpatialExpr::new("x^3 + x*y^2", 2).unwrap();
        let t = e.third_at(&Bindings::new().at(&[0.2, -0.4], 0.0)).unwrap();
        assert_eq!(t[0][0][0], 6.0);
        assert_eq!(t[0][1][1], 2.0);
        assert_eq!(t[1][0][1], 2.0);
        assert_eq!(t[1][1][1], 0.0);
    }

    #[test]
    fn bound_parameters_survive_printing() {
        let e = Expr::parse("(m-1)*x").unwrap().bind(&Bindings::new().with("m", 2.0));
        let back = Expr::parse(&e.to_string()).unwrap();
        assert_eq!(back.eval(&Bindings::new().with("x", 3.0)).unwrap(), 3.0);
        let neg = Expr::parse("c^x").unwrap().bind(&Bindings::new().with("c", -2.0));
        let back = Expr::parse(&neg.to_string()).unwrap();
        assert_eq!(back.eval(&Bindings::new().with("x", 2.0)).unwrap(), 4.0);
    }
}
