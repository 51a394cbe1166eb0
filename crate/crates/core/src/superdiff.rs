//! Pointwise superdifferential of `I` at the grid nodes and the steepest
//! (superdifferential) descent direction built from it.
//!
//! At each node the superdifferential is a polytope in `R^{2n}` (x-slot then
//! z-slot): a base vector plus the Minkowski sum of convex hulls contributed
//! by max-terms whose active set has more than one member. The descent
//! direction is `G = −w̄ / ‖w̄‖_{L²}` where `w̄(t_k)` is the point of the node
//! polytope farthest from the origin.
//!
//! All gradients are taken with respect to the trapezoid-weighted `L²` inner
//! product used by [`l2_norm`], so that for the discretized functional
//! `dI/dG = Σ_k w_k min_{v∈P_k} ⟨v, G_k⟩ = −‖w̄‖` holds exactly away from kinks.

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::ExprError;
use crate::functionals::{
    consistency_residual, endpoint_residuals, node_penalties, NodeError, PenaltyPoint,
};
use crate::grid::{l2_norm, Grid, Trajectory};
use crate::problem::{FixedEnd, Problem, Psi};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuperdiffError {
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(
        "node {node}: superdifferential has {count} candidate vertices (limit {limit}); \
         raise the vertex limit or the activity tolerance"
    )]
    VertexLimit { node: usize, count: u128, limit: usize },
    #[error("node {node}: non-finite value in the superdifferential")]
    NonFinite { node: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperdiffConfig {
    /// Relative activity tolerance: a member is active when within
    /// `activity_tol·(1 + |max|)` of the maximum.
    pub activity_tol: f64,
    /// Below this penalty value a row contributes nothing.
    pub eps_h: f64,
    /// `‖w̄‖` at or below this is treated as stationary.
    pub eps_stat: f64,
    /// Largest number of vertex candidates enumerated at a single node.
    pub vertex_limit: usize,
}

impl Default for SuperdiffConfig {
    fn default() -> Self {
        SuperdiffConfig { activity_tol: 1e-9, eps_h: 1e-12, eps_stat: 1e-6, vertex_limit: 4096 }
    }
}

/// `base + Σ_f co(factors[f])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperdiffNode {
    pub base: Vec<f64>,
    pub factors: Vec<Vec<Vec<f64>>>,
}

/// Farthest vertex and the factor choice that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub point: Vec<f64>,
    pub choice: Vec<usize>,
}

impl SuperdiffNode {
    pub fn zeros(dim: usize) -> SuperdiffNode {
        SuperdiffNode { base: vec![0.0; dim], factors: Vec::new() }
    }

    pub fn vertex_count(&self) -> u128 {
        self.factors.iter().map(|f| f.len() as u128).product()
    }

    /// `base + Σ_f factors[f][choice[f]]`, summed in factor order.
    pub fn vertex(&self, choice: &[usize]) -> Vec<f64> {
        let mut v = self.base.clone();
        for (factor, &c) in self.factors.iter().zip(choice) {
            for (acc, x) in v.iter_mut().zip(&factor[c]) {
                *acc += x;
            }
        }
        v
    }

    /// `min_{v ∈ P} ⟨v, d⟩`; the minimum over a Minkowski sum splits by factor.
    pub fn min_pairing(&self, d: &[f64]) -> f64 {
        let dot = |a: &[f64]| a.iter().zip(d).map(|(x, y)| x * y).sum::<f64>();
        let mut value = dot(&self.base);
        for factor in &self.factors {
            value += factor.iter().map(|v| dot(v)).fold(f64::INFINITY, f64::min);
        }
        value
    }
}

/// Vertex of the node polytope with the largest euclidean norm.
///
/// Enumerates the Cartesian product of factor choices in lexicographic order
/// and keeps the first maximizer, so ties go to the smallest choice tuple.
pub fn farthest_vertex(node: &SuperdiffNode, limit: usize) -> Result<Vertex, SuperdiffError> {
    let count = node.vertex_count();
    if count > limit as u128 {
        return Err(SuperdiffError::VertexLimit { node: 0, count, limit });
    }
    let sizes: Vec<usize> = node.factors.iter().map(|f| f.len()).collect();
    let mut choice = vec![0usize; sizes.len()];
    let mut best = Vertex { point: node.vertex(&choice), choice: choice.clone() };
    let mut best_norm = norm2(&best.point);
    if sizes.contains(&0) {
        return Ok(best);
    }
    loop {
        let mut pos = sizes.len();
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            choice[pos] += 1;
            if choice[pos] < sizes[pos] {
                break;
            }
            choice[pos] = 0;
        }
        let point = node.vertex(&choice);
        let norm = norm2(&point);
        if norm > best_norm {
            best_norm = norm;
            best = Vertex { point, choice: choice.clone() };
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// z-slot gradient of `χ`: the endpoint residual on each fixed coordinate,
/// constant in time.
pub fn grad_chi(grid: &Grid, traj: &Trajectory, fixed_end: &[FixedEnd], x0: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; traj.dim()];
    for (e, r) in fixed_end.iter().zip(endpoint_residuals(grid, traj, fixed_end, x0)) {
        out[e.index - 1] = r;
    }
    out
}

/// x-slot gradient of `ω`: `Σ_i s_i(x)·∇s_i(x)` at every node.
pub fn grad_omega(p: &Problem, grid: &Grid, traj: &Trajectory) -> Result<Array2<f64>, NodeError> {
    let n = traj.dim();
    let mut out = Array2::zeros((grid.nodes(), n));
    for k in 0..grid.nodes() {
        let x = traj.x.row(k).to_vec();
        for (i, s) in p.surface.iter().enumerate() {
            let (v, g) = s.value_and_grad(&x).map_err(|source| NodeError { node: k, index: i + 1, source })?;
            for j in 0..n {
                out[[k, j]] += v * g[j];
            }
        }
    }
    Ok(out)
}

/// Gradient of `υ`, `N × 2n`.
///
/// The x-slot is the residual `r = x − x0 − ∫_0^t z`. The z-slot is the
/// adjoint of the cumulative trapezoid, `−(1/w_m) Σ_k w_k C_km r_k`, which
/// equals the reverse cumulative trapezoid `−∫_t^T r` at interior nodes and
/// differs from it by `h/2·r` at the two end nodes.
pub fn grad_upsilon(grid: &Grid, traj: &Trajectory, x0: &[f64]) -> Array2<f64> {
    let r = consistency_residual(grid, traj, x0);
    let (nodes, n) = r.dim();
    let h = grid.step();
    let w = grid.weights();
    let mut out = Array2::zeros((nodes, 2 * n));
    out.slice_mut(s![.., ..n]).assign(&r);
    for j in 0..n {
        // suffix[m] = Σ_{k ≥ m} w_k r_k
        let mut suffix = vec![0.0; nodes + 1];
        for k in (0..nodes).rev() {
            suffix[k] = suffix[k + 1] + w[k] * r[[k, j]];
        }
        out[[0, n + j]] = -(0.5 * h * suffix[1]) / w[0];
        for m in 1..nodes {
            let acc = 0.5 * h * w[m] * r[[m, j]] + h * suffix[m + 1];
            out[[m, n + j]] = -acc / w[m];
        }
    }
    out
}

/// Contribution of row `i` (0-based) to the node superdifferential of `½h_i²`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowContribution {
    pub base: Vec<f64>,
    pub factors: Vec<Vec<Vec<f64>>>,
    /// Active-set size of each max-term with a positive coefficient, empty
    /// when the row is satisfied.
    pub active_sizes: Vec<usize>,
}

pub fn phi_node_superdiff(
    p: &Problem,
    i: usize,
    x: &[f64],
    pp: &PenaltyPoint,
    cfg: &SuperdiffConfig,
) -> Result<RowContribution, ExprError> {
    let n = p.n;
    let mut out = RowContribution { base: vec![0.0; 2 * n], factors: Vec::new(), active_sizes: Vec::new() };
    if !(pp.h > cfg.eps_h) {
        return Ok(out);
    }
    let row = &p.rows[i];
    let psi = pp.psi_star.value();
    let h = pp.h;
    out.base[n + i] += h * psi;
    for (j, a) in row.linear.iter().enumerate() {
        out.base[j] -= h * psi * a;
    }
    for term in &row.terms {
        if term.coeff == 0.0 {
            continue;
        }
        let values = term.members.iter().map(|f| f.eval(x).map(|v| v * psi)).collect::<Result<Vec<_>, _>>()?;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = max - cfg.activity_tol * (1.0 + max.abs());
        let mut factor = Vec::new();
        for (member, &v) in term.members.iter().zip(&values) {
            if v >= threshold {
                let g = member.grad(x)?;
                let mut vec = vec![0.0; 2 * n];
                for (slot, gj) in vec.iter_mut().zip(&g) {
                    *slot = -h * term.coeff * psi * gj;
                }
                factor.push(vec);
            }
        }
        out.active_sizes.push(factor.len());
        if factor.len() == 1 {
            for (b, v) in out.base.iter_mut().zip(&factor[0]) {
                *b += v;
            }
        } else {
            out.factors.push(factor);
        }
    }
    Ok(out)
}

/// Per-node, per-row record for the diagnostic dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowActivity {
    pub h: f64,
    pub psi_star: Psi,
    /// Number of vertex candidates the row contributes (product of active-set
    /// sizes); 0 when the row is satisfied.
    pub active: usize,
}

fn build_node(
    p: &Problem,
    traj: &Trajectory,
    k: usize,
    upsilon_row: &[f64],
    omega_row: &[f64],
    chi_z: &[f64],
    cfg: &SuperdiffConfig,
) -> Result<(SuperdiffNode, Vec<RowActivity>), NodeError> {
    let n = p.n;
    let mut node = SuperdiffNode { base: upsilon_row.to_vec(), factors: Vec::new() };
    for j in 0..n {
        node.base[j] += omega_row[j];
        node.base[n + j] += chi_z[j];
    }
    let x = traj.x.row(k).to_vec();
    let penalties = node_penalties(p, traj, k)?;
    let mut activity = Vec::with_capacity(n);
    for (i, pp) in penalties.iter().enumerate() {
        let c = phi_node_superdiff(p, i, &x, pp, cfg).map_err(|source| NodeError { node: k, index: i + 1, source })?;
        for (b, v) in node.base.iter_mut().zip(&c.base) {
            *b += v;
        }
        let active = if pp.h > cfg.eps_h { c.active_sizes.iter().product() } else { 0 };
        node.factors.extend(c.factors);
        activity.push(RowActivity { h: pp.h, psi_star: pp.psi_star, active });
    }
    Ok((node, activity))
}

/// Node polytopes for the whole trajectory, with per-row activity records.
pub fn node_superdiffs(
    p: &Problem,
    grid: &Grid,
    traj: &Trajectory,
    cfg: &SuperdiffConfig,
) -> Result<(Vec<SuperdiffNode>, Vec<Vec<RowActivity>>), SuperdiffError> {
    let ups = grad_upsilon(grid, traj, &p.x0);
    let om = grad_omega(p, grid, traj)?;
    let chi_z = grad_chi(grid, traj, &p.fixed_end, &p.x0);
    let built = (0..grid.nodes())
        .into_par_iter()
        .map(|k| {
            let ups_row = ups.row(k).to_vec();
            let om_row = om.row(k).to_vec();
            build_node(p, traj, k, &ups_row, &om_row, &chi_z, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(built.into_iter().unzip())
}

#[derive(Debug, Clone)]
pub struct Direction {
    /// `N × 2n` descent direction; unit `L²` norm unless stationary.
    pub g: Array2<f64>,
    /// The farthest selector `w̄`, `N × 2n`.
    pub wbar: Array2<f64>,
    pub norm_wbar: f64,
    pub nodes: Vec<SuperdiffNode>,
    pub activity: Vec<Vec<RowActivity>>,
}

impl Direction {
    pub fn is_stationary(&self) -> bool {
        self.g.iter().all(|&v| v == 0.0)
    }
}

pub fn direction(p: &Problem, grid: &Grid, traj: &Trajectory, cfg: &SuperdiffConfig) -> Result<Direction, SuperdiffError> {
    let (nodes, activity) = node_superdiffs(p, grid, traj, cfg)?;
    let dim = 2 * p.n;
    let vertices = nodes
        .par_iter()
        .enumerate()
        .map(|(k, node)| {
            let v = farthest_vertex(node, cfg.vertex_limit).map_err(|e| match e {
                SuperdiffError::VertexLimit { count, limit, .. } => SuperdiffError::VertexLimit { node: k, count, limit },
                other => other,
            })?;
            if v.point.iter().any(|x| !x.is_finite()) {
                return Err(SuperdiffError::NonFinite { node: k });
            }
            Ok(v.point)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut wbar = Array2::zeros((grid.nodes(), dim));
    for (k, v) in vertices.iter().enumerate() {
        for (c, x) in v.iter().enumerate() {
            wbar[[k, c]] = *x;
        }
    }
    let norm_wbar = l2_norm(grid, wbar.view());
    let g = if norm_wbar > cfg.eps_stat { wbar.mapv(|v| -v / norm_wbar) } else { Array2::zeros(wbar.raw_dim()) };
    Ok(Direction { g, wbar, norm_wbar, nodes, activity })
}

/// `Σ_k w_k min_{v ∈ P_k} ⟨v, d_k⟩`, the directional derivative of the
/// discretized `I` along `d` given the node polytopes.
pub fn directional_derivative(grid: &Grid, nodes: &[SuperdiffNode], d: ArrayView2<f64>) -> f64 {
    let w = grid.weights();
    nodes
        .iter()
        .enumerate()
        .map(|(k, node)| w[k] * node.min_pairing(&d.row(k).to_vec()))
        .sum()
}
