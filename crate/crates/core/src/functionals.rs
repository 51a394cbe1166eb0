//! The penalty functional `I = φ + χ + ω + υ` on a discretized trajectory.
//!
//! * `φ = ½∫ Σ_i h_i²` where `h_i` is the distance from `z_i` to `F_i(x)`;
//! * `χ = ½ Σ_{j∈J} (x0_j + ∫z_j − xT_j)²`;
//! * `ω = ½∫ Σ_i s_i(x)²`;
//! * `υ = ½∫ |x − x0 − ∫_0^t z|²`.
//!
//! `I = 0` exactly when the trajectory solves the boundary-value problem.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::ExprError;
use crate::grid::{cum_integral, integral, Grid, Trajectory};
use crate::problem::{FixedEnd, InclusionRow, Interval, Problem, Psi};

/// An expression failed at a specific grid node.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluation failed at node {node} (row/component {index}): {source}")]
pub struct NodeError {
    pub node: usize,
    pub index: usize,
    pub source: ExprError,
}

/// Distance of `z_i` from `F_i(x)` at one node, with its maximizing `ψ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyPoint {
    pub h: f64,
    /// Meaningful only when `h > 0`; `Plus` by convention otherwise.
    pub psi_star: Psi,
    pub bounds: Interval,
}

impl PenaltyPoint {
    pub fn from_bounds(bounds: Interval, z: f64) -> PenaltyPoint {
        let above = z - bounds.hi;
        let below = bounds.lo - z;
        let h = 0.0f64.max(above).max(below);
        let psi_star = if h > 0.0 && below > above { Psi::Minus } else { Psi::Plus };
        PenaltyPoint { h, psi_star, bounds }
    }
}

pub fn penalty(row: &InclusionRow, x: &[f64], z_i: f64) -> Result<PenaltyPoint, ExprError> {
    Ok(PenaltyPoint::from_bounds(row.interval_bounds(x)?, z_i))
}

/// Penalty of every row at node `k`.
pub fn node_penalties(p: &Problem, traj: &Trajectory, k: usize) -> Result<Vec<PenaltyPoint>, NodeError> {
    let x = traj.x.row(k).to_vec();
    p.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            penalty(row, &x, traj.z[[k, i]]).map_err(|source| NodeError { node: k, index: i + 1, source })
        })
        .collect()
}

pub fn phi(p: &Problem, grid: &Grid, traj: &Trajectory) -> Result<f64, NodeError> {
    let mut sq = Array1::zeros(grid.nodes());
    for k in 0..grid.nodes() {
        sq[k] = node_penalties(p, traj, k)?.iter().map(|pp| pp.h * pp.h).sum::<f64>();
    }
    Ok(0.5 * integral(grid, sq.view()))
}

/// `x(t) − x0 − ∫_0^t z` at every node.
pub fn consistency_residual(grid: &Grid, traj: &Trajectory, x0: &[f64]) -> Array2<f64> {
    let mut r = &traj.x - &cum_integral(grid, traj.z.view());
    for mut row in r.rows_mut() {
        for (v, a) in row.iter_mut().zip(x0) {
            *v -= a;
        }
    }
    r
}

pub fn upsilon(grid: &Grid, traj: &Trajectory, x0: &[f64]) -> f64 {
    let r = consistency_residual(grid, traj, x0);
    let sq: Array1<f64> = r.rows().into_iter().map(|row| row.dot(&row)).collect();
    0.5 * integral(grid, sq.view())
}

/// `x0_j + ∫_0^T z_j − xT_j` for each fixed endpoint, in `fixed_end` order.
pub fn endpoint_residuals(grid: &Grid, traj: &Trajectory, fixed_end: &[FixedEnd], x0: &[f64]) -> Vec<f64> {
    fixed_end
        .iter()
        .map(|e| {
            let j = e.index - 1;
            x0[j] + integral(grid, traj.z.column(j)) - e.value
        })
        .collect()
}

pub fn chi(grid: &Grid, traj: &Trajectory, fixed_end: &[FixedEnd], x0: &[f64]) -> f64 {
    0.5 * endpoint_residuals(grid, traj, fixed_end, x0).iter().map(|r| r * r).sum::<f64>()
}

pub fn omega(p: &Problem, grid: &Grid, traj: &Trajectory) -> Result<f64, NodeError> {
    let mut sq = Array1::zeros(grid.nodes());
    for k in 0..grid.nodes() {
        let x = traj.x.row(k).to_vec();
        for (i, s) in p.surface.iter().enumerate() {
            let v = s.eval(&x).map_err(|source| NodeError { node: k, index: i + 1, source })?;
            sq[k] += v * v;
        }
    }
    Ok(0.5 * integral(grid, sq.view()))
}

/// The four parts of `I`, kept apart to localize infeasibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub phi: f64,
    pub chi: f64,
    pub omega: f64,
    pub upsilon: f64,
}

impl Components {
    pub fn total(&self) -> f64 {
        self.phi + self.chi + self.omega + self.upsilon
    }
}

pub fn total(p: &Problem, grid: &Grid, traj: &Trajectory) -> Result<Components, NodeError> {
    Ok(Components {
        phi: phi(p, grid, traj)?,
        chi: chi(grid, traj, &p.fixed_end, &p.x0),
        omega: omega(p, grid, traj)?,
        upsilon: upsilon(grid, traj, &p.x0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::problem::from_interval_form;
    use ndarray::Array2;

    fn example1() -> Problem {
        Problem {
            n: 2,
            horizon: 1.0,
            rows: from_interval_form(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[2.0, 2.0]).unwrap(),
            x0: vec![0.0, 1.0],
            fixed_end: vec![FixedEnd { index: 1, value: 0.0 }, FixedEnd { index: 2, value: 2.0 }],
            surface: vec![Expr::parse("x1", 2).unwrap()],
        }
    }

    // max over ψ ∈ {-1, 1} of max{0, zψ − c(F, ψ)} with c(F, 1) = hi, c(F, -1) = -lo
    fn brute_force(bounds: Interval, z: f64) -> (f64, Option<Psi>) {
        let cands = [(z - bounds.hi, Psi::Plus), (-z + bounds.lo, Psi::Minus)];
        let mut best = (0.0, None);
        for (v, psi) in cands {
            if v > best.0 {
                best = (v, Some(psi));
            }
        }
        best
    }

    #[test]
    fn penalty_outside_above_and_below() {
        let b = Interval { lo: -1.0, hi: 2.5 };
        for (z, h, psi) in [(3.0, 0.5, Psi::Plus), (-2.0, 1.0, Psi::Minus)] {
            let pp = PenaltyPoint::from_bounds(b, z);
            let (bh, bpsi) = brute_force(b, z);
            assert_eq!(pp.h, bh);
            assert_eq!(Some(pp.psi_star), bpsi);
            assert_eq!((pp.h, pp.psi_star), (h, psi));
        }
        let inside = PenaltyPoint::from_bounds(b, 0.3);
        assert_eq!(inside.h, 0.0);
        assert_eq!(inside.psi_star, Psi::Plus);
    }

    #[test]
    fn phi_of_frozen_row() {
        let p = Problem {
            n: 1,
            horizon: 1.0,
            rows: vec![InclusionRow { linear: vec![0.0], terms: vec![] }],
            x0: vec![0.0],
            fixed_end: vec![],
            surface: vec![],
        };
        let g = Grid::new(5, 1.0).unwrap();
        let mut t = Trajectory::zeros(&g, 1);
        t.z.fill(1.0);
        assert!((phi(&p, &g, &t).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn example1_zero_trajectory_parts() {
        let p = example1();
        for n in [2, 6, 37] {
            let g = Grid::new(n, 1.0).unwrap();
            let t = Trajectory::zeros(&g, 2);
            let c = total(&p, &g, &t).unwrap();
            assert_eq!(c.phi, 0.0);
            assert_eq!(c.omega, 0.0);
            assert!((c.upsilon - 0.5).abs() < 1e-12);
            assert!((c.chi - 0.5).abs() < 1e-12);
            assert!((c.total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn consistent_pair_has_no_upsilon() {
        let g = Grid::new(7, 2.0).unwrap();
        let z = Array2::from_shape_fn((7, 2), |(k, j)| (k as f64).sin() + j as f64);
        let x0 = [0.3, -0.7];
        let mut x = cum_integral(&g, z.view());
        for mut row in x.rows_mut() {
            row[0] += x0[0];
            row[1] += x0[1];
        }
        let t = Trajectory::new(x, z).unwrap();
        assert!(upsilon(&g, &t, &x0) < 1e-30);
    }

    #[test]
    fn chi_vanishes_when_integral_hits_target() {
        let g = Grid::new(4, 1.0).unwrap();
        let mut t = Trajectory::zeros(&g, 2);
        t.z.column_mut(1).fill(1.0);
        let p = example1();
        assert!(chi(&g, &t, &p.fixed_end, &p.x0).abs() < 1e-30);
    }

    #[test]
    fn omega_of_constant_offset() {
        let p = example1();
        let g = Grid::new(4, 1.0).unwrap();
        let mut t = Trajectory::zeros(&g, 2);
        t.x.column_mut(0).fill(1.0);
        assert!((omega(&p, &g, &t).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn evaluation_errors_name_the_node() {
        let p = Problem {
            n: 1,
            horizon: 1.0,
            rows: vec![InclusionRow { linear: vec![0.0], terms: vec![] }],
            x0: vec![0.0],
            fixed_end: vec![],
            surface: vec![Expr::parse("1/x1", 1).unwrap()],
        };
        let g = Grid::new(3, 1.0).unwrap();
        let mut t = Trajectory::zeros(&g, 1);
        t.x[[0, 0]] = 1.0;
        t.x[[2, 0]] = 1.0;
        let err = omega(&p, &g, &t).unwrap_err();
        assert_eq!(err.node, 1);
        assert_eq!(err.source, ExprError::DivisionByZero);
    }
}
