//! Uniform time mesh, trajectory storage and trapezoidal quadrature.
//!
//! Both `x` and `z` are stored at the nodes and read as piecewise-linear
//! functions of time, so every integral here is the trapezoidal rule.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("trajectory shape mismatch: {0}")]
    Shape(String),
    #[error("trajectory file: {0}")]
    Csv(#[from] csv::Error),
    #[error("trajectory file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    nodes: usize,
    horizon: f64,
}

impl Grid {
    pub fn new(nodes: usize, horizon: f64) -> Result<Grid, GridError> {
        if nodes < 2 {
            return Err(GridError::TooFewNodes(nodes));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GridError::BadHorizon(horizon));
        }
        Ok(Grid { nodes, horizon })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.horizon / (self.nodes - 1) as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        if k + 1 == self.nodes {
            self.horizon
        } else {
            k as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nodes).map(|k| self.t(k)).collect()
    }

    /// Trapezoid weights: `h/2` at the ends, `h` inside.
    pub fn weights(&self) -> Array1<f64> {
        let h = self.step();
        let mut w = Array1::from_elem(self.nodes, h);
        w[0] = h / 2.0;
        w[self.nodes - 1] = h / 2.0;
        w
    }
}

/// Cumulative trapezoid `∫_0^{t_k} z` for every column; row 0 is zero.
pub fn cum_integral(grid: &Grid, z: ArrayView2<f64>) -> Array2<f64> {
    let h = grid.step();
    let mut out = Array2::zeros(z.raw_dim());
    for k in 1..z.nrows() {
        for j in 0..z.ncols() {
            out[[k, j]] = out[[k - 1, j]] + 0.5 * h * (z[[k - 1, j]] + z[[k, j]]);
        }
    }
    out
}

pub fn integral(grid: &Grid, f: ArrayView1<f64>) -> f64 {
    let h = grid.step();
    let n = f.len();
    let mut acc = 0.5 * (f[0] + f[n - 1]);
    for k in 1..n - 1 {
        acc += f[k];
    }
    acc * h
}

/// `sqrt(∫ |w(t)|² dt)` with the squared row norm integrated by trapezoid.
pub fn l2_norm(grid: &Grid, w: ArrayView2<f64>) -> f64 {
    let sq: Array1<f64> = w.map_axis(Axis(1), |row| row.dot(&row));
    integral(grid, sq.view()).sqrt()
}

/// Continuous piecewise-linear interpolant through node samples.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear {
    grid: Grid,
    samples: Vec<f64>,
}

/// Interpolant of `samples` on `grid`. Queries outside `[0, T]` clamp to the
/// endpoint values.
pub fn interpolate(grid: &Grid, samples: &[f64]) -> Result<PiecewiseLinear, GridError> {
    if samples.len() != grid.nodes() {
        return Err(GridError::Shape(format!("{} samples for {} nodes", samples.len(), grid.nodes())));
    }
    Ok(PiecewiseLinear { grid: *grid, samples: samples.to_vec() })
}

impl PiecewiseLinear {
    pub fn eval(&self, t: f64) -> f64 {
        let last = self.samples.len() - 1;
        if !(t > 0.0) {
            return self.samples[0];
        }
        if t >= self.grid.horizon() {
            return self.samples[last];
        }
        let pos = t / self.grid.step();
        let nearest = (pos.round() as usize).min(last);
        if self.grid.t(nearest) == t {
            return self.samples[nearest];
        }
        let k = (pos.floor() as usize).min(last - 1);
        let frac = pos - k as f64;
        self.samples[k] + frac * (self.samples[k + 1] - self.samples[k])
    }
}

/// Phase values `x` and free derivative values `z` at the grid nodes, both
/// `N × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
}

impl Trajectory {
    pub fn zeros(grid: &Grid, n: usize) -> Trajectory {
        Trajectory { x: Array2::zeros((grid.nodes(), n)), z: Array2::zeros((grid.nodes(), n)) }
    }

    pub fn new(x: Array2<f64>, z: Array2<f64>) -> Result<Trajectory, GridError> {
        if x.dim() != z.dim() {
            return Err(GridError::Shape(format!("x is {:?} but z is {:?}", x.dim(), z.dim())));
        }
        Ok(Trajectory { x, z })
    }

    pub fn nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn check(&self, grid: &Grid, n: usize) -> Result<(), GridError> {
        if self.x.dim() != (grid.nodes(), n) || self.z.dim() != (grid.nodes(), n) {
            return Err(GridError::Shape(format!(
                "expected {}×{n} arrays, got x {:?} and z {:?}",
                grid.nodes(),
                self.x.dim(),
                self.z.dim()
            )));
        }
        if self.x.iter().chain(self.z.iter()).any(|v| !v.is_finite()) {
            return Err(GridError::Shape("trajectory contains non-finite entries".into()));
        }
        Ok(())
    }

    /// `(x, z) + alpha·step` where `step` is `N × 2n` laid out as `[x | z]`.
    pub fn stepped(&self, alpha: f64, step: ArrayView2<f64>) -> Trajectory {
        let n = self.dim();
        let mut next = self.clone();
        next.x.scaled_add(alpha, &step.slice(s![.., ..n]));
        next.z.scaled_add(alpha, &step.slice(s![.., n..]));
        next
    }

    /// `[x | z]` as one `N × 2n` array.
    pub fn stacked(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[self.x.view(), self.z.view()]).expect("same row count")
    }

    pub fn write_csv(&self, grid: &Grid, path: impl AsRef<Path>) -> Result<(), GridError> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_records(grid, &mut w)?;
        w.flush().map_err(|e| GridError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self, grid: &Grid) -> Result<String, GridError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        self.write_records(grid, &mut w)?;
        let bytes = w.into_inner().map_err(|e| GridError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| GridError::Format(e.to_string()))
    }

    fn write_records<W: std::io::Write>(&self, grid: &Grid, w: &mut csv::Writer<W>) -> Result<(), GridError> {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("z{i}")));
        w.write_record(&header)?;
        for k in 0..self.nodes() {
            let mut rec = vec![format!("{:?}", grid.t(k))];
            rec.extend(self.x.row(k).iter().map(|v| format!("{v:?}")));
            rec.extend(self.z.row(k).iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        Ok(())
    }

    /// Reads a trajectory CSV (`t, x1..xn, z1..zn`) and places it on `grid`.
    ///
    /// Files whose node times coincide with the grid are taken verbatim; any
    /// other uniform file covering `[0, T]` is resampled by linear
    /// interpolation.
    pub fn read_csv(grid: &Grid, n: usize, path: impl AsRef<Path>) -> Result<Trajectory, GridError> {
        let reader = csv::Reader::from_path(path)?;
        Self::read_from(grid, n, reader)
    }

    pub fn from_csv_str(grid: &Grid, n: usize, text: &str) -> Result<Trajectory, GridError> {
        Self::read_from(grid, n, csv::Reader::from_reader(text.as_bytes()))
    }

    fn read_from<R: std::io::Read>(grid: &Grid, n: usize, mut reader: csv::Reader<R>) -> Result<Trajectory, GridError> {
        let headers = reader.headers()?.clone();
        let mut expected = vec!["t".to_string()];
        expected.extend((1..=n).map(|i| format!("x{i}")));
        expected.extend((1..=n).map(|i| format!("z{i}")));
        let got: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
        if got != expected {
            return Err(GridError::Format(format!("header {got:?}, expected {expected:?}")));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| GridError::Format(format!("`{f}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(vals);
        }
        if rows.len() < 2 {
            return Err(GridError::Format("need at least 2 rows".into()));
        }
        let file_grid = Grid::new(rows.len(), rows[rows.len() - 1][0])?;
        for (k, row) in rows.iter().enumerate() {
            if (row[0] - file_grid.t(k)).abs() > 1e-9 * (1.0 + file_grid.horizon()) {
                return Err(GridError::Format(format!("row {} time {} is not on a uniform mesh", k + 1, row[0])));
            }
        }
        if (file_grid.horizon() - grid.horizon()).abs() > 1e-9 * (1.0 + grid.horizon()) {
            return Err(GridError::Format(format!(
                "file covers [0, {}], problem horizon is {}",
                file_grid.horizon(),
                grid.horizon()
            )));
        }
        let mut x = Array2::zeros((grid.nodes(), n));
        let mut z = Array2::zeros((grid.nodes(), n));
        for col in 0..2 * n {
            let samples: Vec<f64> = rows.iter().map(|r| r[col + 1]).collect();
            let target = if col < n { &mut x } else { &mut z };
            let c = col % n;
            if file_grid.nodes() == grid.nodes() {
                for k in 0..grid.nodes() {
                    target[[k, c]] = samples[k];
                }
            } else {
                let interp = interpolate(&file_grid, &samples)?;
                for k in 0..grid.nodes() {
                    target[[k, c]] = interp.eval(grid.t(k));
                }
            }
        }
        let traj = Trajectory { x, z };
        traj.check(grid, n)?;
        Ok(traj)
    }
}
