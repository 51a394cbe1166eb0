//! Steepest superdifferential descent on `I(x, z)`.
//!
//! Each iteration builds the descent direction `G_k`, minimizes
//! `m(α) = I((x, z)_k + α·G_k)` over `α ≥ 0` and moves to the minimizer.
//! The loop ends at an (approximately) stationary point, when `I` drops
//! below the global-certificate threshold, or when the budget runs out.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::{total, Components, NodeError};
use crate::grid::{l2_norm, Grid, GridError, Trajectory};
use crate::problem::{Diagnostic, Problem};
use crate::superdiff::{direction, SuperdiffConfig, SuperdiffError};

const GOLDEN: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("problem is invalid: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("bad solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Eval(#[from] NodeError),
    #[error(transparent)]
    Superdiff(#[from] SuperdiffError),
    #[error("iteration {iteration}: functional is not finite ({value})")]
    NonFinite { iteration: usize, value: f64 },
}

/// Bracketing and golden-section parameters for the exact line search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub alpha_init: f64,
    pub alpha_max: f64,
    pub growth: f64,
    /// Relative golden-section tolerance; the bracket is refined until its
    /// width is below `gs_tol·(1 + α)`.
    pub gs_tol: f64,
    /// Smallest decrease of `m` accepted as progress.
    pub min_decrease: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig { alpha_init: 1e-2, alpha_max: 64.0, growth: 2.0, gs_tol: 1e-10, min_decrease: 1e-15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid_n: usize,
    pub eps_stat: f64,
    pub tol_global: f64,
    pub max_iter: usize,
    pub line_search: LineSearchConfig,
    pub activity_tol: f64,
    pub eps_h: f64,
    pub vertex_limit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grid_n: 11,
            eps_stat: 1e-6,
            tol_global: 1e-8,
            max_iter: 2000,
            line_search: LineSearchConfig::default(),
            activity_tol: 1e-9,
            eps_h: 1e-12,
            vertex_limit: 4096,
        }
    }
}

impl SolverConfig {
    pub fn superdiff(&self) -> SuperdiffConfig {
        SuperdiffConfig {
            activity_tol: self.activity_tol,
            eps_h: self.eps_h,
            eps_stat: self.eps_stat,
            vertex_limit: self.vertex_limit,
        }
    }

    pub fn check(&self) -> Result<(), SolveError> {
        let ls = &self.line_search;
        let positive = [
            ("eps_stat", self.eps_stat),
            ("tol_global", self.tol_global),
            ("activity_tol", self.activity_tol),
            ("eps_h", self.eps_h),
            ("alpha_init", ls.alpha_init),
            ("alpha_max", ls.alpha_max),
            ("gs_tol", ls.gs_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SolveError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.grid_n < 2 {
            return Err(SolveError::Config(format!("grid_n must be at least 2, got {}", self.grid_n)));
        }
        if !(ls.growth > 1.0) {
            return Err(SolveError::Config(format!("growth must exceed 1, got {}", ls.growth)));
        }
        if ls.alpha_init > ls.alpha_max {
            return Err(SolveError::Config("alpha_init exceeds alpha_max".into()));
        }
        if self.vertex_limit == 0 {
            return Err(SolveError::Config("vertex_limit must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a one-dimensional minimization along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSearchOutcome {
    /// `value = m(alpha) < m(0)`.
    Step { alpha: f64, value: f64 },
    /// No `α ∈ (0, alpha_max]` improved `m(0)` by more than `min_decrease`.
    NoDecrease,
}

/// Approximately minimizes `m` over `[0, alpha_max]`, given `m0 = m(0)`.
///
/// Finds a first decreasing trial step (halving `alpha_init` if needed), grows
/// it geometrically while `m` keeps decreasing, then refines the resulting
/// bracket by golden section. The returned point always beats `m0`.
pub fn minimize_along<E>(
    mut m: impl FnMut(f64) -> Result<f64, E>,
    m0: f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome, E> {
    let improves = |v: f64| v < m0 - cfg.min_decrease;
    let mut a = cfg.alpha_init.min(cfg.alpha_max);
    let mut ma = m(a)?;
    let (lo, hi);
    if improves(ma) {
        let mut prev = 0.0;
        loop {
            if a >= cfg.alpha_max {
                lo = prev;
                hi = a;
                break;
            }
            let b = (a * cfg.growth).min(cfg.alpha_max);
            let mb = m(b)?;
            if mb < ma {
                prev = a;
                a = b;
                ma = mb;
            } else {
                lo = prev;
                hi = b;
                break;
            }
        }
    } else {
        // shrink until the first improving step
        loop {
            a *= 0.5;
            if a < f64::MIN_POSITIVE.sqrt() * cfg.alpha_init {
                return Ok(LineSearchOutcome::NoDecrease);
            }
            ma = m(a)?;
            if improves(ma) {
                break;
            }
        }
        lo = 0.0;
        hi = 2.0 * a;
    }

    let (mut left, mut right) = (lo, hi);
    let mut c = right - GOLDEN * (right - left);
    let mut d = left + GOLDEN * (right - left);
    let mut mc = m(c)?;
    let mut md = m(d)?;
    let (mut best_alpha, mut best_value) = (a, ma);
    while right - left > cfg.gs_tol * (1.0 + 0.5 * (left + right)) {
        if mc < md {
            right = d;
            d = c;
            md = mc;
            c = right - GOLDEN * (right - left);
            mc = m(c)?;
        } else {
            left = c;
            c = d;
            mc = md;
            d = left + GOLDEN * (right - left);
            md = m(d)?;
        }
    }
    for (alpha, value) in [(c, mc), (d, md)] {
        if value < best_value && alpha > 0.0 {
            best_alpha = alpha;
            best_value = value;
        }
    }
    Ok(LineSearchOutcome::Step { alpha: best_alpha, value: best_value })
}

/// Exact line search of `I` along the unit direction `dir` (`N × 2n`).
pub fn line_search(
    p: &Problem,
    grid: &Grid,
    traj: &Trajectory,
    dir: ArrayView2<f64>,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome, NodeError> {
    if dir.iter().all(|&v| v == 0.0) {
        return Ok(LineSearchOutcome::NoDecrease);
    }
    let m0 = total(p, grid, traj)?.total();
    minimize_along(|alpha| total(p, grid, &traj.stepped(alpha, dir)).map(|c| c.total()), m0, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `‖w̄‖ ≤ eps_stat`.
    Stationary,
    /// `I ≤ tol_global`: the trajectory solves the problem to that accuracy.
    GlobalCertificate,
    MaxIter,
    /// The line search found no decrease; numerically stationary.
    LineSearchFailure,
}

/// One iterate. `alpha` is the step taken from it, absent for the last one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    #[serde(rename = "I")]
    pub value: f64,
    pub phi: f64,
    pub chi: f64,
    pub omega: f64,
    pub upsilon: f64,
    pub norm_wbar: f64,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResiduals {
    /// `x_i(0) − x0_i` for every coordinate.
    pub left: Vec<f64>,
    /// `x_j(T) − xT_j` for each fixed coordinate, in problem order.
    pub right: Vec<IndexedResidual>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexedResidual {
    pub index: usize,
    pub residual: f64,
}

impl BoundaryResiduals {
    pub fn max_abs(&self) -> f64 {
        self.left.iter().copied().chain(self.right.iter().map(|r| r.residual)).fold(0.0, |a, v| a.max(v.abs()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DescentReport {
    pub grid_n: usize,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    /// Whether the final `I` is within `tol_global` of zero, which upgrades a
    /// stationary point to a solution.
    pub certificate: bool,
    pub initial_value: f64,
    pub final_value: f64,
    pub final_components: Components,
    pub boundary_residuals: BoundaryResiduals,
    pub surface_residual_max: f64,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

pub fn boundary_residuals(p: &Problem, traj: &Trajectory) -> BoundaryResiduals {
    let last = traj.nodes() - 1;
    BoundaryResiduals {
        left: (0..p.n).map(|i| traj.x[[0, i]] - p.x0[i]).collect(),
        right: p
            .fixed_end
            .iter()
            .map(|e| IndexedResidual { index: e.index, residual: traj.x[[last, e.index - 1]] - e.value })
            .collect(),
    }
}

/// `max_k max_i |s_i(x(t_k))|`.
pub fn surface_residual_max(p: &Problem, traj: &Trajectory) -> Result<f64, NodeError> {
    let mut worst = 0.0f64;
    for k in 0..traj.nodes() {
        let x = traj.x.row(k).to_vec();
        for (i, s) in p.surface.iter().enumerate() {
            let v = s.eval(&x).map_err(|source| NodeError { node: k, index: i + 1, source })?;
            worst = worst.max(v.abs());
        }
    }
    Ok(worst)
}

fn record(k: usize, c: &Components, norm_wbar: f64, alpha: Option<f64>) -> IterationRecord {
    IterationRecord {
        k,
        value: c.total(),
        phi: c.phi,
        chi: c.chi,
        omega: c.omega,
        upsilon: c.upsilon,
        norm_wbar,
        alpha,
    }
}

fn check_finite(iteration: usize, c: &Components) -> Result<(), SolveError> {
    let v = c.total();
    if v.is_finite() {
        Ok(())
    } else {
        Err(SolveError::NonFinite { iteration, value: v })
    }
}

/// Runs the descent from `initial` (the zero trajectory when `None`).
pub fn solve(p: &Problem, cfg: &SolverConfig, initial: Option<Trajectory>) -> Result<DescentReport, SolveError> {
    cfg.check()?;
    let diagnostics = p.validate();
    if !diagnostics.is_empty() {
        return Err(SolveError::Invalid(diagnostics));
    }
    let grid = Grid::new(cfg.grid_n, p.horizon)?;
    let mut traj = initial.unwrap_or_else(|| Trajectory::zeros(&grid, p.n));
    traj.check(&grid, p.n)?;
    let sd = cfg.superdiff();

    let start_norm = l2_norm(&grid, traj.stacked().view()).max(1.0);
    let mut warned = false;
    let mut components = total(p, &grid, &traj)?;
    check_finite(0, &components)?;
    let initial_value = components.total();
    let mut iterations = Vec::new();
    let mut k = 0;
    let termination = loop {
        let dir = direction(p, &grid, &traj, &sd)?;
        log::debug!("iteration {k}: I = {:e}, norm_wbar = {:e}", components.total(), dir.norm_wbar);
        if components.total() <= cfg.tol_global {
            iterations.push(record(k, &components, dir.norm_wbar, None));
            break Termination::GlobalCertificate;
        }
        if dir.is_stationary() {
            iterations.push(record(k, &components, dir.norm_wbar, None));
            break Termination::Stationary;
        }
        if k >= cfg.max_iter {
            iterations.push(record(k, &components, dir.norm_wbar, None));
            break Termination::MaxIter;
        }
        match line_search(p, &grid, &traj, dir.g.view(), &cfg.line_search)? {
            LineSearchOutcome::NoDecrease => {
                iterations.push(record(k, &components, dir.norm_wbar, None));
                break Termination::LineSearchFailure;
            }
            LineSearchOutcome::Step { alpha, .. } => {
                iterations.push(record(k, &components, dir.norm_wbar, Some(alpha)));
                traj = traj.stepped(alpha, dir.g.view());
                components = total(p, &grid, &traj)?;
                check_finite(k + 1, &components)?;
            }
        }
        k += 1;
        if !warned && l2_norm(&grid, traj.stacked().view()) > 1e6 * start_norm {
            log::warn!("iterate norm grew more than 1e6 times since the start; the level set may be unbounded");
            warned = true;
        }
    };

    let final_value = components.total();
    Ok(DescentReport {
        grid_n: grid.nodes(),
        iterations,
        termination,
        certificate: final_value <= cfg.tol_global,
        initial_value,
        final_value,
        final_components: components,
        boundary_residuals: boundary_residuals(p, &traj),
        surface_residual_max: surface_residual_max(p, &traj)?,
        trajectory: traj,
    })
}
