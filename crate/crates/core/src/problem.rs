//! Inclusion model: rows `ẋ_i ∈ F_i(x)` whose support function is a linear
//! part plus a nonnegative combination of maxima of smooth functions,
//!
//! ```text
//! c(F_i(x), ψ) = ψ·⟨A_i, x⟩ + Σ_j ā_ij · max_p { f_ij,p(x)·ψ },   ψ ∈ {-1, +1}
//! ```
//!
//! together with two-point boundary data and the surface `s(x) = 0`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read problem file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed problem document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid expression in {location}: {source}")]
    Expr { location: String, source: ExprError },
    #[error("radius coefficient abar[{index}] = {value} is negative")]
    NegativeRadius { index: usize, value: f64 },
    #[error("interval form has wrong shape: {0}")]
    Shape(String),
    #[error("problem is invalid: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

/// Direction on the unit sphere of the real line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Psi {
    Plus,
    Minus,
}

impl Psi {
    pub fn value(self) -> f64 {
        match self {
            Psi::Plus => 1.0,
            Psi::Minus => -1.0,
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// `coeff · max { members[p](x)·ψ }`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxTerm {
    pub coeff: f64,
    pub members: Vec<Expr>,
}

impl MaxTerm {
    /// `max_p f_p(x)·ψ`, evaluated member by member.
    pub fn max_value(&self, x: &[f64], psi: Psi) -> Result<f64, ExprError> {
        let mut best = f64::NEG_INFINITY;
        for member in &self.members {
            best = best.max(member.eval(x)? * psi.value());
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionRow {
    pub linear: Vec<f64>,
    pub terms: Vec<MaxTerm>,
}

impl InclusionRow {
    pub fn linear_part(&self, x: &[f64]) -> f64 {
        self.linear.iter().zip(x).map(|(a, v)| a * v).sum()
    }

    /// Support function `c(F_i(x), ψ)`.
    pub fn support(&self, x: &[f64], psi: Psi) -> Result<f64, ExprError> {
        let mut value = psi.value() * self.linear_part(x);
        for term in &self.terms {
            value += term.coeff * term.max_value(x, psi)?;
        }
        Ok(value)
    }

    /// `F_i(x) = [-c(F_i(x), -1), c(F_i(x), +1)]`.
    pub fn interval_bounds(&self, x: &[f64]) -> Result<Interval, ExprError> {
        Ok(Interval { lo: -self.support(x, Psi::Minus)?, hi: self.support(x, Psi::Plus)? })
    }
}

/// Right-endpoint condition `x_index(T) = value`, with a 1-based index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedEnd {
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub n: usize,
    pub horizon: f64,
    pub rows: Vec<InclusionRow>,
    pub x0: Vec<f64>,
    pub fixed_end: Vec<FixedEnd>,
    pub surface: Vec<Expr>,
}

/// One violated invariant found by [`Problem::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Rows of the interval-radius inclusion `ẋ_i ∈ A_i x + [-ā_i, ā_i]·Σ_j |x_j|`.
///
/// Each `|x_j|` becomes the term `ā_i · max{x_j·ψ, -x_j·ψ}`, which is exact.
pub fn from_interval_form(a: &[Vec<f64>], abar: &[f64]) -> Result<Vec<InclusionRow>, ProblemError> {
    let n = a.len();
    if n == 0 {
        return Err(ProblemError::Shape("matrix A is empty".into()));
    }
    if abar.len() != n {
        return Err(ProblemError::Shape(format!("abar has {} entries, A has {n} rows", abar.len())));
    }
    let mut rows = Vec::with_capacity(n);
    for (i, (row, &radius)) in a.iter().zip(abar).enumerate() {
        if row.len() != n {
            return Err(ProblemError::Shape(format!("row {} of A has {} entries, expected {n}", i + 1, row.len())));
        }
        if radius.is_nan() || radius < 0.0 {
            return Err(ProblemError::NegativeRadius { index: i + 1, value: radius });
        }
        let mut terms = Vec::new();
        if radius > 0.0 {
            for j in 1..=n {
                let expr_err = |source| ProblemError::Expr { location: format!("interval_form row {}", i + 1), source };
                terms.push(MaxTerm {
                    coeff: radius,
                    members: vec![Expr::var(j, n).map_err(expr_err)?, Expr::neg_var(j, n).map_err(expr_err)?],
                });
            }
        }
        rows.push(InclusionRow { linear: row.clone(), terms });
    }
    Ok(rows)
}

impl Problem {
    pub fn m_surface(&self) -> usize {
        self.surface.len()
    }

    /// Every violated invariant; an empty list means the problem is well formed.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |location: String, message: String| out.push(Diagnostic { location, message });
        let n = self.n;
        if n == 0 {
            push("n".into(), "state dimension must be at least 1".into());
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            push("T".into(), format!("horizon must be positive and finite, got {}", self.horizon));
        }
        if self.x0.len() != n {
            push("x0".into(), format!("has {} entries, expected {n}", self.x0.len()));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            push("x0".into(), "entries must be finite".into());
        }
        if self.rows.len() != n {
            push("rows".into(), format!("has {} rows, expected {n}", self.rows.len()));
        }
        let check_expr = |push: &mut dyn FnMut(String, String), location: String, e: &Expr| {
            if e.dim() != n || e.max_var() > n {
                push(location, format!("expression `{e}` is not a function of x1..x{n}"));
            }
        };
        for (i, row) in self.rows.iter().enumerate() {
            let loc = format!("rows[{}]", i + 1);
            if row.linear.len() != n {
                push(format!("{loc}.linear"), format!("has {} entries, expected {n}", row.linear.len()));
            }
            if row.linear.iter().any(|v| !v.is_finite()) {
                push(format!("{loc}.linear"), "entries must be finite".into());
            }
            for (j, term) in row.terms.iter().enumerate() {
                let tloc = format!("{loc}.terms[{}]", j + 1);
                if !(term.coeff.is_finite() && term.coeff >= 0.0) {
                    push(format!("{tloc}.coeff"), format!("must be nonnegative and finite, got {}", term.coeff));
                }
                if term.members.is_empty() {
                    push(format!("{tloc}.members"), "must not be empty".into());
                }
                for (p, member) in term.members.iter().enumerate() {
                    check_expr(&mut push, format!("{tloc}.members[{}]", p + 1), member);
                }
            }
        }
        let mut seen = HashSet::new();
        for (k, end) in self.fixed_end.iter().enumerate() {
            let loc = format!("fixed_end[{}]", k + 1);
            if end.index == 0 || end.index > n {
                push(loc.clone(), format!("index {} is outside 1..={n}", end.index));
            }
            if !seen.insert(end.index) {
                push(loc.clone(), format!("duplicate index {}", end.index));
            }
            if !end.value.is_finite() {
                push(loc, "value must be finite".into());
            }
        }
        for (i, s) in self.surface.iter().enumerate() {
            check_expr(&mut push, format!("surface[{}]", i + 1), s);
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Problem, ProblemError> {
        let doc: ProblemDocument = serde_json::from_str(text)?;
        doc.into_problem()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Problem, ProblemError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ProblemError::Io { path: path.display().to_string(), source })?;
        Problem::from_json(&text)
    }
}

/// On-disk problem description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub fixed_end: Vec<FixedEnd>,
    #[serde(default)]
    pub surface: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<RowDocument>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_form: Option<IntervalForm>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowDocument {
    pub linear: Vec<f64>,
    #[serde(default)]
    pub terms: Vec<TermDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDocument {
    pub coeff: f64,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct IntervalForm {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub abar: Vec<f64>,
}

impl ProblemDocument {
    pub fn into_problem(self) -> Result<Problem, ProblemError> {
        let n = self.n;
        let parse = |text: &str, location: String| {
            Expr::parse(text, n).map_err(|source| ProblemError::Expr { location, source })
        };
        let rows = match (self.rows, self.interval_form) {
            (Some(_), Some(_)) => {
                return Err(ProblemError::Invalid(vec![Diagnostic {
                    location: "rows".into(),
                    message: "give either `rows` or `interval_form`, not both".into(),
                }]))
            }
            (None, None) => {
                return Err(ProblemError::Invalid(vec![Diagnostic {
                    location: "rows".into(),
                    message: "one of `rows` or `interval_form` is required".into(),
                }]))
            }
            (None, Some(form)) => from_interval_form(&form.a, &form.abar)?,
            (Some(rows), None) => {
                let mut out = Vec::with_capacity(rows.len());
                for (i, row) in rows.into_iter().enumerate() {
                    let mut terms = Vec::with_capacity(row.terms.len());
                    for (j, term) in row.terms.into_iter().enumerate() {
                        let members = term
                            .members
                            .iter()
                            .enumerate()
                            .map(|(p, m)| parse(m, format!("rows[{}].terms[{}].members[{}]", i + 1, j + 1, p + 1)))
                            .collect::<Result<Vec<_>, _>>()?;
                        terms.push(MaxTerm { coeff: term.coeff, members });
                    }
                    out.push(InclusionRow { linear: row.linear, terms });
                }
                out
            }
        };
        let surface = self
            .surface
            .iter()
            .enumerate()
            .map(|(i, s)| parse(s, format!("surface[{}]", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let problem = Problem { n, horizon: self.horizon, rows, x0: self.x0, fixed_end: self.fixed_end, surface };
        let diagnostics = problem.validate();
        if diagnostics.is_empty() {
            Ok(problem)
        } else {
            Err(ProblemError::Invalid(diagnostics))
        }
    }
}
