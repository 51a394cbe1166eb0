//! Superdifferential descent for `φ(x) = min_i f_i(x)` with smooth `f_i`.
//!
//! The superdifferential of `φ` at `x` is the convex hull of the gradients of
//! the active members. Its point farthest from the origin is one of those
//! gradients, so the steepest descent direction needs no quadratic program.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descent::{minimize_along, LineSearchConfig, LineSearchOutcome};
use crate::expr::{Expr, ExprError};

#[derive(Debug, Error)]
pub enum FindimError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("member {index}: {source}")]
    Member { index: usize, source: ExprError },
    #[error("evaluation failed: {0}")]
    Eval(#[from] ExprError),
    #[error("{0}")]
    Invalid(String),
}

/// `min_{i} members[i](x)` on `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinOfSmooth {
    pub n: usize,
    pub members: Vec<Expr>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinOfSmoothDocument {
    pub n: usize,
    pub members: Vec<String>,
}

impl MinOfSmooth {
    pub fn new(n: usize, members: Vec<Expr>) -> Result<MinOfSmooth, FindimError> {
        if n == 0 {
            return Err(FindimError::Invalid("dimension must be positive".into()));
        }
        if members.is_empty() {
            return Err(FindimError::Invalid("at least one member is required".into()));
        }
        for (i, m) in members.iter().enumerate() {
            if m.max_var() > n {
                return Err(FindimError::Member {
                    index: i + 1,
                    source: ExprError::VariableOutOfRange { index: m.max_var(), dim: n, pos: 0 },
                });
            }
        }
        Ok(MinOfSmooth { n, members })
    }

    pub fn parse(n: usize, members: &[&str]) -> Result<MinOfSmooth, FindimError> {
        let parsed = members
            .iter()
            .enumerate()
            .map(|(i, s)| Expr::parse(s, n).map_err(|source| FindimError::Member { index: i + 1, source }))
            .collect::<Result<Vec<_>, _>>()?;
        MinOfSmooth::new(n, parsed)
    }

    pub fn from_json(text: &str) -> Result<MinOfSmooth, FindimError> {
        let doc: MinOfSmoothDocument = serde_json::from_str(text)?;
        let refs: Vec<&str> = doc.members.iter().map(String::as_str).collect();
        MinOfSmooth::parse(doc.n, &refs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MinOfSmooth, FindimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| FindimError::Io { path: path.display().to_string(), source })?;
        MinOfSmooth::from_json(&text)
    }

    pub fn values(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.members.iter().map(|f| f.eval(x)).collect()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok(self.values(x)?.into_iter().fold(f64::INFINITY, f64::min))
    }
}

/// 0-based indices of members within `activity_tol·(1 + |φ|)` of the minimum.
pub fn active_set(f: &MinOfSmooth, x: &[f64], activity_tol: f64) -> Result<Vec<usize>, ExprError> {
    let values = f.values(x)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = min + activity_tol * (1.0 + min.abs());
    Ok(values.iter().enumerate().filter(|(_, &v)| v <= threshold).map(|(i, _)| i).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FindimDirection {
    /// Unit direction, or zero when stationary.
    pub g: Vec<f64>,
    /// Farthest point of the superdifferential from the origin.
    pub w0: Vec<f64>,
    /// Index of the member whose gradient is `w0`.
    pub generator: usize,
    /// `Ψ = min_{i∈R} ⟨∇f_i, g⟩`, zero when stationary.
    pub psi: f64,
    pub stationary: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn descent_direction(
    f: &MinOfSmooth,
    x: &[f64],
    activity_tol: f64,
    eps_stat: f64,
) -> Result<FindimDirection, ExprError> {
    let active = active_set(f, x, activity_tol)?;
    let grads = active.iter().map(|&i| f.members[i].grad(x)).collect::<Result<Vec<_>, _>>()?;
    let mut best = 0;
    let mut best_norm = dot(&grads[0], &grads[0]);
    for (slot, g) in grads.iter().enumerate().skip(1) {
        let norm = dot(g, g);
        if norm > best_norm {
            best = slot;
            best_norm = norm;
        }
    }
    let w0 = grads[best].clone();
    let norm = best_norm.sqrt();
    if !(norm > eps_stat) {
        return Ok(FindimDirection { g: vec![0.0; f.n], w0, generator: active[best], psi: 0.0, stationary: true });
    }
    let g: Vec<f64> = w0.iter().map(|v| -v / norm).collect();
    let psi = grads.iter().map(|gr| dot(gr, &g)).fold(f64::INFINITY, f64::min);
    Ok(FindimDirection { g, w0, generator: active[best], psi, stationary: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FindimConfig {
    pub eps_stat: f64,
    pub activity_tol: f64,
    pub max_iter: usize,
    pub line_search: LineSearchConfig,
}

impl Default for FindimConfig {
    fn default() -> Self {
        FindimConfig { eps_stat: 1e-6, activity_tol: 1e-9, max_iter: 1000, line_search: LineSearchConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindimTermination {
    Stationary,
    MaxIter,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindimRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub value: f64,
    pub psi: f64,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindimReport {
    pub iterations: Vec<FindimRecord>,
    pub termination: FindimTermination,
    pub x: Vec<f64>,
    pub value: f64,
}

impl FindimReport {
    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.iterations.len() - 1
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.x.len();
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend(["phi", "psi", "alpha"].map(String::from));
        w.write_record(&header)?;
        for r in &self.iterations {
            let mut rec = vec![r.k.to_string()];
            rec.extend(r.x.iter().map(|v| format!("{v:?}")));
            rec.push(format!("{:?}", r.value));
            rec.push(format!("{:?}", r.psi));
            rec.push(r.alpha.map(|a| format!("{a:?}")).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn minimize(f: &MinOfSmooth, x_init: &[f64], cfg: &FindimConfig) -> Result<FindimReport, FindimError> {
    if x_init.len() != f.n {
        return Err(FindimError::Invalid(format!("start has {} entries, expected {}", x_init.len(), f.n)));
    }
    let mut x = x_init.to_vec();
    let mut value = f.value(&x)?;
    let mut iterations = Vec::new();
    let mut k = 0;
    let termination = loop {
        let dir = descent_direction(f, &x, cfg.activity_tol, cfg.eps_stat)?;
        if dir.stationary || dir.psi >= -cfg.eps_stat {
            iterations.push(FindimRecord { k, x: x.clone(), value, psi: dir.psi, alpha: None });
            break FindimTermination::Stationary;
        }
        if k >= cfg.max_iter {
            iterations.push(FindimRecord { k, x: x.clone(), value, psi: dir.psi, alpha: None });
            break FindimTermination::MaxIter;
        }
        let along = |alpha: f64| {
            let y: Vec<f64> = x.iter().zip(&dir.g).map(|(a, g)| a + alpha * g).collect();
            f.value(&y)
        };
        match minimize_along(along, value, &cfg.line_search)? {
            LineSearchOutcome::NoDecrease => {
                iterations.push(FindimRecord { k, x: x.clone(), value, psi: dir.psi, alpha: None });
                break FindimTermination::LineSearchFailure;
            }
            LineSearchOutcome::Step { alpha, value: next } => {
                iterations.push(FindimRecord { k, x: x.clone(), value, psi: dir.psi, alpha: Some(alpha) });
                for (a, g) in x.iter_mut().zip(&dir.g) {
                    *a += alpha * g;
                }
                value = next;
            }
        }
        k += 1;
    };
    Ok(FindimReport { iterations, termination, x, value })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_wells_1d() -> MinOfSmooth {
        MinOfSmooth::parse(1, &["(x1 - 1)^2", "(x1 + 1)^2"]).unwrap()
    }

    #[test]
    fn active_set_examples() {
        let f = two_wells_1d();
        assert_eq!(active_set(&f, &[0.0], 1e-9).unwrap(), vec![0, 1]);
        assert_eq!(active_set(&f, &[1.0], 1e-9).unwrap(), vec![0]);
        assert_eq!(active_set(&f, &[1e-12], 1e-9).unwrap(), vec![0, 1]);
    }

    #[test]
    fn smooth_case_is_normalized_gradient() {
        let f = MinOfSmooth::parse(2, &["0.5*(x1^2 + x2^2)"]).unwrap();
        let d = descent_direction(&f, &[3.0, -4.0], 1e-9, 1e-6).unwrap();
        assert!((d.g[0] + 0.6).abs() < 1e-15 && (d.g[1] - 0.8).abs() < 1e-15);
        assert!((d.psi + 5.0).abs() < 1e-12);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let f = two_wells_1d();
        // brute force over both generators: equal norms, keep the first
        let grads = [f.members[0].grad(&[0.0]).unwrap()[0], f.members[1].grad(&[0.0]).unwrap()[0]];
        assert_eq!(grads[0].abs(), grads[1].abs());
        let d = descent_direction(&f, &[0.0], 1e-9, 1e-6).unwrap();
        assert_eq!(d.generator, 0);
        assert_eq!(d.g, vec![-grads[0] / grads[0].abs()]);
        assert!(d.psi <= -2.0);
    }

    #[test]
    fn zero_gradient_is_stationary() {
        let f = MinOfSmooth::parse(2, &["x1^2 + x2^2", "x1^2 + x2^2 + 1"]).unwrap();
        let d = descent_direction(&f, &[0.0, 0.0], 1e-9, 1e-6).unwrap();
        assert!(d.stationary);
        let r = minimize(&f, &[0.0, 0.0], &FindimConfig::default()).unwrap();
        assert_eq!(r.steps(), 0);
        assert_eq!(r.termination, FindimTermination::Stationary);
    }

    #[test]
    fn strongly_convex_converges() {
        let f = MinOfSmooth::parse(3, &["0.5*((x1 - 1)^2 + (x2 + 2)^2 + (x3 - 0.5)^2)"]).unwrap();
        let r = minimize(&f, &[10.0, 3.0, -7.0], &FindimConfig::default()).unwrap();
        assert!(r.steps() <= 200);
        for (a, c) in r.x.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - c).abs() < 1e-6);
        }
    }

    #[test]
    fn two_wells_reach_stationary_point() {
        let f = MinOfSmooth::parse(2, &["(x1 - 1)^2 + x2^2", "(x1 + 1)^2 + x2^2"]).unwrap();
        let r = minimize(&f, &[0.0, 1.0], &FindimConfig::default()).unwrap();
        assert_eq!(r.termination, FindimTermination::Stationary);
        assert!(r.value <= 1.0 + 1e-9);
        // grid oracle: the global minimum value over the plane is 0
        let mut best = f64::INFINITY;
        for i in -40..=40 {
            for j in -40..=40 {
                best = best.min(f.value(&[i as f64 * 0.05, j as f64 * 0.05]).unwrap());
            }
        }
        assert!(r.value >= best - 1e-12);
        for w in r.iterations.windows(2) {
            assert!(w[1].value < w[0].value);
        }
    }

    #[test]
    fn document_round_trip() {
        let f = MinOfSmooth::from_json(r#"{"n": 2, "members": ["x1", "x2^2"]}"#).unwrap();
        assert_eq!(f.value(&[3.0, 1.5]).unwrap(), 2.25);
        assert!(MinOfSmooth::from_json(r#"{"n": 1, "members": ["x2"]}"#).is_err());
        assert!(MinOfSmooth::from_json(r#"{"n": 1, "members": []}"#).is_err());
    }
}
