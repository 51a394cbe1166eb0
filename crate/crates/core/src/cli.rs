//! Command-line front end: `solve`, `evaluate`, `check-gradient`, `findim`.
//!
//! Exit codes: 0 success, 1 solver non-convergence or failed check, 2 input
//! error. Errors are reported on stderr as a single JSON object.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::descent::{solve, DescentReport, SolveError, SolverConfig};
use crate::findim::{minimize, FindimConfig, FindimError, FindimTermination, MinOfSmooth};
use crate::functionals::total;
use crate::gradcheck::{check, GradCheckConfig};
use crate::grid::{Grid, GridError, Trajectory};
use crate::problem::{Diagnostic, Problem, ProblemError};
use crate::superdiff::{node_superdiffs, SuperdiffError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "difincl", version, about = "Boundary-value problems for differential inclusions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the descent and write trajectory.csv, report.json and plot.csv.
    Solve(SolveArgs),
    /// Print the functional and its parts for a trajectory.
    Evaluate(EvaluateArgs),
    /// Compare analytic directional derivatives with finite differences.
    CheckGradient(CheckGradientArgs),
    /// Minimize a pointwise minimum of smooth functions on R^n.
    Findim(FindimArgs),
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Problem description (JSON).
    #[arg(long)]
    pub problem: PathBuf,
    /// Number of grid nodes.
    #[arg(long, default_value_t = 11)]
    pub grid_n: usize,
    /// Trajectory CSV used as starting point (zero trajectory otherwise).
    #[arg(long)]
    pub initial: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub input: ProblemArgs,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_stat: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_global: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 64.0)]
    pub alpha_max: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub alpha_init: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub gs_tol: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub activity_tol: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub eps_h: f64,
    #[arg(long, default_value_t = 4096)]
    pub vertex_limit: usize,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Also write per-node, per-row activity of the final trajectory.
    #[arg(long)]
    pub diagnostics: bool,
}

impl SolveArgs {
    pub fn config(&self) -> SolverConfig {
        let mut cfg = SolverConfig {
            grid_n: self.input.grid_n,
            eps_stat: self.eps_stat,
            tol_global: self.tol_global,
            max_iter: self.max_iter,
            activity_tol: self.activity_tol,
            eps_h: self.eps_h,
            vertex_limit: self.vertex_limit,
            ..SolverConfig::default()
        };
        cfg.line_search.alpha_max = self.alpha_max;
        cfg.line_search.alpha_init = self.alpha_init;
        cfg.line_search.gs_tol = self.gs_tol;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: ProblemArgs,
}

#[derive(Debug, Args)]
pub struct CheckGradientArgs {
    #[command(flatten)]
    pub input: ProblemArgs,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 10)]
    pub directions: usize,
    /// Half-width of the uniform perturbation added to the base trajectory.
    #[arg(long, default_value_t = 2.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub fd_step: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub margin: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    pub activity_tol: f64,
}

#[derive(Debug, Args)]
pub struct FindimArgs {
    /// JSON file `{"n": .., "members": [..]}`.
    #[arg(long)]
    pub problem: PathBuf,
    /// Starting point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub start: Vec<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_stat: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub activity_tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// Write findim.csv here instead of printing the iterate log.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Superdiff(#[from] SuperdiffError),
    #[error(transparent)]
    Findim(#[from] FindimError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Output(String),
}

#[derive(Serialize)]
struct ErrorReport {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    diagnostics: Vec<Diagnostic>,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Problem(_) | CliError::Grid(_) | CliError::Io { .. } => EXIT_INPUT,
            CliError::Solve(SolveError::Invalid(_) | SolveError::Config(_) | SolveError::Grid(_)) => EXIT_INPUT,
            CliError::Findim(FindimError::Eval(_)) => EXIT_NOT_CONVERGED,
            CliError::Findim(_) => EXIT_INPUT,
            CliError::Solve(_) | CliError::Superdiff(_) | CliError::Output(_) => EXIT_NOT_CONVERGED,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Problem(ProblemError::Invalid(_)) | CliError::Solve(SolveError::Invalid(_)) => "validation",
            CliError::Io { .. } | CliError::Problem(ProblemError::Io { .. }) | CliError::Findim(FindimError::Io { .. }) => "io",
            CliError::Problem(_) | CliError::Findim(FindimError::Json(_) | FindimError::Member { .. }) => "parse",
            CliError::Grid(_) | CliError::Solve(SolveError::Grid(_)) => "trajectory",
            CliError::Solve(SolveError::Config(_)) | CliError::Findim(FindimError::Invalid(_)) => "config",
            CliError::Output(_) => "output",
            _ => "solver",
        }
    }

    fn to_json(&self) -> String {
        let diagnostics = match self {
            CliError::Problem(ProblemError::Invalid(d)) | CliError::Solve(SolveError::Invalid(d)) => d.clone(),
            _ => Vec::new(),
        };
        let report = ErrorReport { error: self.kind(), message: self.to_string(), diagnostics };
        serde_json::to_string(&report).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }
}

fn output_err(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli.command, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn execute(command: &Command, out: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Solve(a) => solve_cmd(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::CheckGradient(a) => check_gradient_cmd(a, out),
        Command::Findim(a) => findim_cmd(a, out),
    }
}

fn load_input(a: &ProblemArgs) -> Result<(Problem, Grid, Trajectory), CliError> {
    let p = Problem::load(&a.problem)?;
    let diagnostics = p.validate();
    if !diagnostics.is_empty() {
        return Err(ProblemError::Invalid(diagnostics).into());
    }
    let grid = Grid::new(a.grid_n, p.horizon)?;
    let traj = match &a.initial {
        Some(path) => Trajectory::read_csv(&grid, p.n, path)?,
        None => Trajectory::zeros(&grid, p.n),
    };
    Ok((p, grid, traj))
}

fn write_line(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(io_err("stdout"))
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    problem: &'a Path,
    config: &'a SolverConfig,
    #[serde(flatten)]
    report: &'a DescentReport,
}

fn solve_cmd(a: &SolveArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (p, grid, initial) = load_input(&a.input)?;
    let cfg = a.config();
    let report = solve(&p, &cfg, Some(initial))?;

    fs::create_dir_all(&a.out_dir).map_err(io_err(format!("cannot create {}", a.out_dir.display())))?;
    report.trajectory.write_csv(&grid, a.out_dir.join("trajectory.csv"))?;
    let json = serde_json::to_string_pretty(&SolveOutput { problem: &a.input.problem, config: &cfg, report: &report })
        .map_err(output_err)?;
    fs::write(a.out_dir.join("report.json"), json).map_err(io_err("cannot write report.json"))?;
    write_plot(&p, &grid, &report.trajectory, &a.out_dir.join("plot.csv"))?;
    if a.diagnostics {
        write_diagnostics(&p, &grid, &report.trajectory, &cfg, &a.out_dir.join("diagnostics.csv"))?;
    }

    write_line(
        out,
        &format!(
            "{:?} after {} iterations: I = {:e} (initial {:e}), certificate {}",
            report.termination,
            report.iterations.len() - 1,
            report.final_value,
            report.initial_value,
            if report.certificate { "holds" } else { "failed" }
        ),
    )?;
    Ok(if report.certificate { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// `t`, `x_i`, `z_i` and the bounds `l_i`, `u_i` of `F_i(x(t))`.
fn write_plot(p: &Problem, grid: &Grid, traj: &Trajectory, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(output_err)?;
    let n = p.n;
    let mut header = vec!["t".to_string()];
    for prefix in ["x", "z", "l", "u"] {
        header.extend((1..=n).map(|i| format!("{prefix}{i}")));
    }
    w.write_record(&header).map_err(output_err)?;
    for k in 0..grid.nodes() {
        let x = traj.x.row(k).to_vec();
        let mut rec = vec![format!("{:?}", grid.t(k))];
        rec.extend(x.iter().map(|v| format!("{v:?}")));
        rec.extend(traj.z.row(k).iter().map(|v| format!("{v:?}")));
        let mut bounds = Vec::with_capacity(n);
        for (i, row) in p.rows.iter().enumerate() {
            bounds.push(row.interval_bounds(&x).map_err(|source| {
                SolveError::Eval(crate::functionals::NodeError { node: k, index: i + 1, source })
            })?);
        }
        rec.extend(bounds.iter().map(|b| format!("{:?}", b.lo)));
        rec.extend(bounds.iter().map(|b| format!("{:?}", b.hi)));
        w.write_record(&rec).map_err(output_err)?;
    }
    w.flush().map_err(io_err("cannot write plot.csv"))
}

fn write_diagnostics(p: &Problem, grid: &Grid, traj: &Trajectory, cfg: &SolverConfig, path: &Path) -> Result<(), CliError> {
    let (_, activity) = node_superdiffs(p, grid, traj, &cfg.superdiff())?;
    let mut w = csv::Writer::from_path(path).map_err(output_err)?;
    w.write_record(["k", "t", "row", "h", "psi_star", "active_vertices"]).map_err(output_err)?;
    for (k, rows) in activity.iter().enumerate() {
        for (i, r) in rows.iter().enumerate() {
            w.write_record([
                k.to_string(),
                format!("{:?}", grid.t(k)),
                (i + 1).to_string(),
                format!("{:?}", r.h),
                format!("{}", r.psi_star.value()),
                r.active.to_string(),
            ])
            .map_err(output_err)?;
        }
    }
    w.flush().map_err(io_err("cannot write diagnostics.csv"))
}

fn evaluate_cmd(a: &EvaluateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (p, grid, traj) = load_input(&a.input)?;
    let c = total(&p, &grid, &traj).map_err(SolveError::from)?;
    #[derive(Serialize)]
    struct Evaluation {
        #[serde(rename = "I")]
        value: f64,
        #[serde(flatten)]
        components: crate::functionals::Components,
    }
    let json = serde_json::to_string(&Evaluation { value: c.total(), components: c })
        .map_err(output_err)?;
    write_line(out, &json)?;
    Ok(EXIT_OK)
}

fn check_gradient_cmd(a: &CheckGradientArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (p, grid, base) = load_input(&a.input)?;
    let cfg = GradCheckConfig {
        samples: a.samples,
        directions: a.directions,
        amplitude: a.amplitude,
        fd_step: a.fd_step,
        margin: a.margin,
        tolerance: a.tolerance,
        seed: a.seed,
        ..GradCheckConfig::default()
    };
    let sd = crate::superdiff::SuperdiffConfig { activity_tol: a.activity_tol, ..Default::default() };
    let report = check(&p, &grid, &base, &cfg, &sd)?;
    let json = serde_json::to_string(&report).map_err(output_err)?;
    write_line(out, &json)?;
    write_line(out, &format!("max relative error {:e} ({})", report.max_rel_error, if report.passed { "pass" } else { "FAIL" }))?;
    Ok(if report.passed { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn findim_cmd(a: &FindimArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let f = MinOfSmooth::load(&a.problem)?;
    let cfg = FindimConfig { eps_stat: a.eps_stat, activity_tol: a.activity_tol, max_iter: a.max_iter, ..FindimConfig::default() };
    let report = minimize(&f, &a.start, &cfg)?;
    match &a.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(format!("cannot create {}", dir.display())))?;
            let file = fs::File::create(dir.join("findim.csv")).map_err(io_err("cannot create findim.csv"))?;
            report.write_csv(file).map_err(output_err)?;
            write_line(out, &format!("{:?} after {} steps: value {:e}", report.termination, report.steps(), report.value))?;
        }
        None => report.write_csv(&mut *out).map_err(output_err)?,
    }
    Ok(if report.termination == FindimTermination::Stationary { EXIT_OK } else { EXIT_NOT_CONVERGED })
}
