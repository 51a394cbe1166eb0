//! Smooth scalar expressions over the phase vector `x1..xn`.
//!
//! Expressions are parsed from a small infix grammar and evaluated either in
//! plain `f64` arithmetic or over forward-mode dual numbers, which gives exact
//! gradients (to machine precision) without finite differencing.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := '-' term | factor (('*' | '/') factor)*
//! factor := '-' factor | atom ['^' uint]
//! atom   := number | 'x' uint | '(' expr ')' | ('sin' | 'cos' | 'exp') '(' expr ')'
//! ```
//!
//! A leading minus on a term negates the whole product, so `-2*x1` parses as
//! `-(2*x1)`. Division is allowed; keeping the divisor away from zero on the
//! region the trajectory visits is the caller's responsibility.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("variable x{index} at position {pos} is out of range 1..={dim}")]
    VariableOutOfRange { index: usize, dim: usize, pos: usize },
    #[error("expression dimension must be at least 1")]
    ZeroDimension,
    #[error("point has dimension {got}, expression expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("division by zero")]
    DivisionByZero,
}

/// Syntax tree node. Variables are 1-based, matching the `x1..xn` notation.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Neg(Box<Node>),
    Pow(Box<Node>, u32),
    Sin(Box<Node>),
    Cos(Box<Node>),
    Exp(Box<Node>),
}

impl Node {
    fn max_var(&self) -> usize {
        match self {
            Node::Num(_) => 0,
            Node::Var(i) => *i,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.max_var().max(b.max_var())
            }
            Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a) => {
                a.max_var()
            }
        }
    }

    fn eval<S: Scalar>(&self, var: &impl Fn(usize) -> S) -> Result<S, ExprError> {
        Ok(match self {
            Node::Num(c) => S::constant(*c),
            Node::Var(i) => var(*i),
            Node::Add(a, b) => a.eval(var)? + b.eval(var)?,
            Node::Sub(a, b) => a.eval(var)? - b.eval(var)?,
            Node::Mul(a, b) => a.eval(var)? * b.eval(var)?,
            Node::Div(a, b) => {
                let num = a.eval(var)?;
                let den = b.eval(var)?;
                if den.re() == 0.0 {
                    return Err(ExprError::DivisionByZero);
                }
                num / den
            }
            Node::Neg(a) => -a.eval(var)?,
            Node::Pow(a, k) => a.eval(var)?.powi(*k),
            Node::Sin(a) => a.eval(var)?.sin(),
            Node::Cos(a) => a.eval(var)?.cos(),
            Node::Exp(a) => a.eval(var)?.exp(),
        })
    }
}

/// Arithmetic needed by the evaluator; implemented for `f64` and [`Dual`].
trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    fn re(self) -> f64;
    fn powi(self, k: u32) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn re(self) -> f64 {
        self
    }
    fn powi(self, k: u32) -> Self {
        f64::powi(self, k as i32)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

/// First-order dual number `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Dual { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(self.re / o.re, (self.eps * o.re - self.re * o.eps) / (o.re * o.re))
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    fn constant(c: f64) -> Self {
        Dual::new(c, 0.0)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn powi(self, k: u32) -> Self {
        if k == 0 {
            return Dual::new(1.0, 0.0);
        }
        let lower = self.re.powi(k as i32 - 1);
        Dual::new(lower * self.re, k as f64 * lower * self.eps)
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.re.cos() * self.eps)
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.re.sin() * self.eps)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, e * self.eps)
    }
}

/// A parsed expression bound to a phase-space dimension.
///
/// Immutable after construction, so it can be shared across threads freely.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    dim: usize,
}

impl Expr {
    pub fn parse(text: &str, dim: usize) -> Result<Expr, ExprError> {
        if dim == 0 {
            return Err(ExprError::ZeroDimension);
        }
        let tokens = lex(text)?;
        let mut parser = Parser { tokens, cursor: 0, dim, end: text.len() };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ExprError::Syntax {
                pos: tok.pos,
                msg: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(Expr { root, dim })
    }

    /// Wraps an already built tree. Fails if a variable exceeds `dim`.
    pub fn from_node(root: Node, dim: usize) -> Result<Expr, ExprError> {
        if dim == 0 {
            return Err(ExprError::ZeroDimension);
        }
        let max = root.max_var();
        if max > dim {
            return Err(ExprError::VariableOutOfRange { index: max, dim, pos: 0 });
        }
        if contains_var_zero(&root) {
            return Err(ExprError::VariableOutOfRange { index: 0, dim, pos: 0 });
        }
        Ok(Expr { root, dim })
    }

    /// The coordinate function `x_index` (1-based).
    pub fn var(index: usize, dim: usize) -> Result<Expr, ExprError> {
        Expr::from_node(Node::Var(index), dim)
    }

    /// `-x_index` (1-based).
    pub fn neg_var(index: usize, dim: usize) -> Result<Expr, ExprError> {
        Expr::from_node(Node::Neg(Box::new(Node::Var(index))), dim)
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest variable index referenced, 0 for constants.
    pub fn max_var(&self) -> usize {
        self.root.max_var()
    }

    fn check_point(&self, x: &[f64]) -> Result<(), ExprError> {
        if x.len() != self.dim {
            return Err(ExprError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.check_point(x)?;
        self.root.eval(&|i: usize| x[i - 1])
    }

    /// Exact gradient via one forward dual pass per coordinate.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.value_and_grad(x).map(|(_, g)| g)
    }

    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ExprError> {
        self.check_point(x)?;
        let mut grad = vec![0.0; self.dim];
        let mut value = self.root.eval(&|i: usize| x[i - 1])?;
        for (k, slot) in grad.iter_mut().enumerate() {
            let seed = k + 1;
            let d = self.root.eval(&|i: usize| Dual::new(x[i - 1], if i == seed { 1.0 } else { 0.0 }))?;
            *slot = d.eps;
            value = d.re;
        }
        Ok((value, grad))
    }
}

fn contains_var_zero(node: &Node) -> bool {
    match node {
        Node::Num(_) => false,
        Node::Var(i) => *i == 0,
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            contains_var_zero(a) || contains_var_zero(b)
        }
        Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) | Node::Exp(a) => contains_var_zero(a),
    }
}

impl fmt::Display for Node {
    // Fully parenthesized so that printing and re-parsing yields the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(c) if *c < 0.0 => write!(f, "(-{})", -c),
            Node::Num(c) => write!(f, "{c}"),
            Node::Var(i) => write!(f, "x{i}"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Pow(a, k) => write!(f, "({a})^{k}"),
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Int(u64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(v) => format!("number {v}"),
            TokenKind::Int(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Plus => "`+`".into(),
            TokenKind::Minus => "`-`".into(),
            TokenKind::Star => "`*`".into(),
            TokenKind::Slash => "`/`".into(),
            TokenKind::Caret => "`^`".into(),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = match c {
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'*' => TokenKind::Star,
            b'/' => TokenKind::Slash,
            b'^' => TokenKind::Caret,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b'0'..=b'9' | b'.' => {
                let mut integral = true;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    integral = false;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        integral = false;
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let literal = &text[start..i];
                let bad = || ExprError::Syntax { pos: start, msg: format!("malformed number `{literal}`") };
                let kind = if integral {
                    literal.parse::<u64>().map(TokenKind::Int).or_else(|_| {
                        literal.parse::<f64>().map(TokenKind::Number).map_err(|_| bad())
                    })?
                } else {
                    TokenKind::Number(literal.parse::<f64>().map_err(|_| bad())?)
                };
                out.push(Token { kind, pos: start });
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push(Token { kind: TokenKind::Ident(text[start..i].to_string()), pos: start });
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax { pos: start, msg: format!("unexpected character `{ch}`") });
            }
        };
        out.push(Token { kind, pos: start });
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    cursor: usize,
    dim: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.cursor)
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().map(|t| &t.kind) == Some(kind) {
            self.cursor += 1;
            true
        } else {
            false
        }
    }

    fn here(&self) -> usize {
        self.peek().map(|t| t.pos).unwrap_or(self.end)
    }

    fn expect(&mut self, kind: TokenKind) -> Result<(), ExprError> {
        if self.eat(&kind) {
            return Ok(());
        }
        let found = self.peek().map(|t| t.kind.describe()).unwrap_or_else(|| "end of input".into());
        Err(ExprError::Syntax { pos: self.here(), msg: format!("expected {}, found {found}", kind.describe()) })
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(&TokenKind::Plus) {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(&TokenKind::Minus) {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        if self.eat(&TokenKind::Minus) {
            return Ok(Node::Neg(Box::new(self.term()?)));
        }
        let mut lhs = self.factor()?;
        loop {
            if self.eat(&TokenKind::Star) {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(&TokenKind::Slash) {
                lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Node, ExprError> {
        if self.eat(&TokenKind::Minus) {
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        let base = self.atom()?;
        if self.eat(&TokenKind::Caret) {
            let pos = self.here();
            return match self.peek().map(|t| t.kind.clone()) {
                Some(TokenKind::Int(k)) if k <= u32::MAX as u64 => {
                    self.cursor += 1;
                    Ok(Node::Pow(Box::new(base), k as u32))
                }
                _ => Err(ExprError::Syntax { pos, msg: "exponent must be a nonnegative integer".into() }),
            };
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let pos = self.here();
        let Some(tok) = self.peek().cloned() else {
            return Err(ExprError::Syntax { pos, msg: "unexpected end of input".into() });
        };
        self.cursor += 1;
        match tok.kind {
            TokenKind::Number(v) => Ok(Node::Num(v)),
            TokenKind::Int(v) => Ok(Node::Num(v as f64)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            TokenKind::Ident(name) => self.ident(name, pos),
            other => Err(ExprError::Syntax { pos, msg: format!("unexpected {}", other.describe()) }),
        }
    }

    fn ident(&mut self, name: String, pos: usize) -> Result<Node, ExprError> {
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = digits.parse().unwrap_or(usize::MAX);
                if index == 0 || index > self.dim {
                    return Err(ExprError::VariableOutOfRange { index, dim: self.dim, pos });
                }
                return Ok(Node::Var(index));
            }
        }
        let wrap: fn(Box<Node>) -> Node = match name.as_str() {
            "sin" => Node::Sin,
            "cos" => Node::Cos,
            "exp" => Node::Exp,
            _ => return Err(ExprError::UnknownIdentifier { name, pos }),
        };
        self.expect(TokenKind::LParen)?;
        let arg = self.expr()?;
        self.expect(TokenKind::RParen)?;
        Ok(wrap(Box::new(arg)))
    }
}
