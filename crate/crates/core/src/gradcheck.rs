//! Finite-difference check of the analytic directional derivative of `I`.
//!
//! At a trajectory where every max-term of every violated row has a clear
//! winner, `I` is differentiable and its derivative along `d` must match a
//! central difference. Rows with `h = 0` do not matter: `½h²` is `C¹` there.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::functionals::{node_penalties, total, NodeError};
use crate::grid::{l2_norm, Grid, Trajectory};
use crate::problem::Problem;
use crate::superdiff::{directional_derivative, node_superdiffs, SuperdiffConfig, SuperdiffError, SuperdiffNode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckConfig {
    /// Number of accepted random trajectories.
    pub samples: usize,
    pub directions: usize,
    /// Entries are perturbed by uniform noise in `[-amplitude, amplitude]`.
    pub amplitude: f64,
    pub fd_step: f64,
    /// Smallest accepted activity margin.
    pub margin: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Give up after this many draws per requested sample.
    pub attempts_per_sample: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            samples: 100,
            directions: 10,
            amplitude: 2.0,
            fd_step: 1e-6,
            margin: 1e-6,
            tolerance: 1e-3,
            seed: 0,
            attempts_per_sample: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub sample: usize,
    pub direction: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub samples: usize,
    pub skipped: usize,
    pub comparisons: usize,
    pub max_rel_error: f64,
    pub worst: Option<Comparison>,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Smallest gap between the largest and second-largest member value of any
/// max-term in a violated row, over all nodes. Infinite when no such term
/// has two members.
pub fn activity_margin(p: &Problem, traj: &Trajectory) -> Result<f64, NodeError> {
    let mut margin = f64::INFINITY;
    for k in 0..traj.nodes() {
        let x = traj.x.row(k).to_vec();
        for (i, pp) in node_penalties(p, traj, k)?.iter().enumerate() {
            if pp.h <= 0.0 {
                continue;
            }
            let psi = pp.psi_star.value();
            for term in &p.rows[i].terms {
                if term.coeff == 0.0 || term.members.len() < 2 {
                    continue;
                }
                let mut values = term
                    .members
                    .iter()
                    .map(|f| f.eval(&x).map(|v| v * psi))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|source| NodeError { node: k, index: i + 1, source })?;
                values.sort_by(|a, b| b.total_cmp(a));
                margin = margin.min(values[0] - values[1]);
            }
        }
    }
    Ok(margin)
}

/// Uniform noise in `[-a, a]` on every entry, added to `base`.
pub fn random_trajectory(base: &Trajectory, amplitude: f64, rng: &mut impl Rng) -> Trajectory {
    let mut t = base.clone();
    for v in t.x.iter_mut().chain(t.z.iter_mut()) {
        *v += rng.gen_range(-amplitude..=amplitude);
    }
    t
}

/// Random `N × 2n` direction with unit `L²` norm.
pub fn random_direction(grid: &Grid, n: usize, rng: &mut impl Rng) -> Array2<f64> {
    loop {
        let d = Array2::from_shape_fn((grid.nodes(), 2 * n), |_| rng.gen_range(-1.0..=1.0));
        let norm = l2_norm(grid, d.view());
        if norm > 1e-3 {
            return d / norm;
        }
    }
}

fn split(d: ArrayView2<f64>, n: usize) -> (ArrayView2<f64>, ArrayView2<f64>) {
    d.split_at(ndarray::Axis(1), n)
}

/// `(I(traj + εd) − I(traj − εd)) / 2ε`.
pub fn central_difference(p: &Problem, grid: &Grid, traj: &Trajectory, d: ArrayView2<f64>, eps: f64) -> Result<f64, NodeError> {
    let (dx, dz) = split(d, p.n);
    let shift = |s: f64| Trajectory { x: &traj.x + &(&dx * s), z: &traj.z + &(&dz * s) };
    let plus = total(p, grid, &shift(eps))?.total();
    let minus = total(p, grid, &shift(-eps))?.total();
    Ok((plus - minus) / (2.0 * eps))
}

/// Checks random trajectories around `base` with the analytic derivative
/// supplied by `derivative` (normally [`directional_derivative`]).
pub fn check_with<D>(
    p: &Problem,
    grid: &Grid,
    base: &Trajectory,
    cfg: &GradCheckConfig,
    sd: &SuperdiffConfig,
    derivative: D,
) -> Result<GradCheckReport, SuperdiffError>
where
    D: Fn(&Grid, &[SuperdiffNode], ArrayView2<f64>) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut accepted = 0;
    let mut skipped = 0;
    let mut comparisons = 0;
    let mut worst: Option<Comparison> = None;
    let max_draws = cfg.samples.saturating_mul(cfg.attempts_per_sample).max(cfg.samples);
    while accepted < cfg.samples && accepted + skipped < max_draws {
        let traj = if cfg.amplitude > 0.0 { random_trajectory(base, cfg.amplitude, &mut rng) } else { base.clone() };
        if activity_margin(p, &traj)? <= cfg.margin {
            skipped += 1;
            continue;
        }
        let (nodes, _) = node_superdiffs(p, grid, &traj, sd)?;
        for j in 0..cfg.directions {
            let d = random_direction(grid, p.n, &mut rng);
            let analytic = derivative(grid, &nodes, d.view());
            let fd = central_difference(p, grid, &traj, d.view(), cfg.fd_step)?;
            let c = Comparison {
                sample: accepted,
                direction: j,
                analytic,
                finite_difference: fd,
                rel_error: relative_error(analytic, fd),
            };
            comparisons += 1;
            if worst.is_none_or(|w| !(c.rel_error <= w.rel_error)) {
                worst = Some(c);
            }
        }
        accepted += 1;
    }
    let max_rel_error = worst.map_or(0.0, |w| w.rel_error);
    Ok(GradCheckReport {
        samples: accepted,
        skipped,
        comparisons,
        max_rel_error,
        worst,
        tolerance: cfg.tolerance,
        passed: accepted == cfg.samples && max_rel_error <= cfg.tolerance,
    })
}

pub fn check(
    p: &Problem,
    grid: &Grid,
    base: &Trajectory,
    cfg: &GradCheckConfig,
    sd: &SuperdiffConfig,
) -> Result<GradCheckReport, SuperdiffError> {
    check_with(p, grid, base, cfg, sd, directional_derivative)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::problem::{from_interval_form, FixedEnd};

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

    #[test]
    fn zero_trajectory_of_example1() {
        let p = example1();
        let g = Grid::new(6, 1.0).unwrap();
        let base = Trajectory::zeros(&g, 2);
        let cfg = GradCheckConfig { samples: 1, amplitude: 0.0, ..GradCheckConfig::default() };
        let r = check(&p, &g, &base, &cfg, &SuperdiffConfig::default()).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error <= 1e-5, "{}", r.max_rel_error);
    }

    #[test]
    fn random_trajectories_pass() {
        let p = example1();
        let g = Grid::new(6, 1.0).unwrap();
        let base = Trajectory::zeros(&g, 2);
        let cfg = GradCheckConfig { samples: 10, directions: 3, seed: 7, ..GradCheckConfig::default() };
        let r = check(&p, &g, &base, &cfg, &SuperdiffConfig::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn corrupted_derivative_fails() {
        let p = example1();
        let g = Grid::new(6, 1.0).unwrap();
        let base = Trajectory::zeros(&g, 2);
        let cfg = GradCheckConfig { samples: 5, directions: 3, seed: 3, ..GradCheckConfig::default() };
        let r = check_with(&p, &g, &base, &cfg, &SuperdiffConfig::default(), |g, nodes, d| {
            1.01 * directional_derivative(g, nodes, d)
        })
        .unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 5e-3);
    }

    #[test]
    fn margin_detects_ties() {
        let p = example1();
        let g = Grid::new(3, 1.0).unwrap();
        let mut t = Trajectory::zeros(&g, 2);
        // row 1 violated with x1 = 0, so the |x1| members tie
        t.x.column_mut(1).fill(1.0);
        t.z.column_mut(0).fill(10.0);
        assert_eq!(activity_margin(&p, &t).unwrap(), 0.0);
        t.x.column_mut(0).fill(0.25);
        assert!((activity_margin(&p, &t).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn relative_error_rule() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
