//! Discretized curves on `[0, T*]` and the two structural operators acting on
//! them: the prefix integral `I(f)[x] = ∫₀ˣ f` and the clamped left-shift
//! semigroup `e^{tA}`.
//!
//! A [`Curve`] stores nodal values on a uniform [`Grid`]; between nodes it is
//! the piecewise-linear interpolant. With that representative the trapezoid
//! rule is the exact integral, and a shift by a whole number of cells is an
//! index move, which is what the simulation uses by default.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to decide whether a time is a whole number of cells.
const ALIGN_TOL: f64 = 1e-9;

/// Uniform grid of `n_nodes` points on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    n_nodes: usize,
    horizon: f64,
}

impl Grid {
    pub fn new(n_nodes: usize, horizon: f64) -> Result<Self> {
        if n_nodes < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {n_nodes}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { n_nodes, horizon })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dx(&self) -> f64 {
        self.horizon / (self.n_nodes - 1) as f64
    }

    /// Position of node `k`. The last node sits exactly at the horizon.
    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.n_nodes {
            self.horizon
        } else {
            k as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes).map(|k| self.node(k))
    }

    /// Number of whole cells spanned by `t`, if `t` is grid-aligned.
    pub fn aligned_cells(&self, t: f64) -> Option<usize> {
        let cells = t / self.dx();
        let rounded = cells.round();
        if rounded >= 0.0 && (cells - rounded).abs() <= ALIGN_TOL * rounded.max(1.0) {
            Some(rounded as usize)
        } else {
            None
        }
    }
}

/// Element of the discretized `H¹(0, T*)`: nodal values on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    grid: Grid,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::InvalidArgument(format!(
                "expected {} nodal values, got {}",
                grid.n_nodes(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value at node {k}")));
        }
        Ok(Self { grid, values })
    }

    /// Curve with `values[k] = f(node k)`.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().map(f).collect())
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.n_nodes()])
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.n_nodes()] }
    }

    /// Build from raw values without the finiteness check; used on hot paths
    /// where the caller has already checked.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_nodes());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `f[x]`: linear interpolant, clamped to `[0, T*]`.
    pub fn eval(&self, x: f64) -> f64 {
        interpolate(&self.values, self.grid.dx(), x)
    }

    /// Value at the right end, `f[T*]`.
    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Linear combination `a·self + b·other` on the same grid.
    pub fn axpby(&self, a: f64, other: &Curve, b: f64) -> Result<Curve> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Curve::new(self.grid, values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_json(&self) -> CurveJson {
        CurveJson { horizon: self.grid.horizon(), values: self.values.clone() }
    }

    pub fn from_json(json: CurveJson) -> Result<Self> {
        let grid = Grid::new(json.values.len(), json.horizon)?;
        Self::new(grid, json.values)
    }

    /// Write `(x, value)` rows with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "value"])?;
        for (x, v) in self.grid.nodes().zip(&self.values) {
            w.write_record([x.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read `(x, value)` rows. The `x` column must describe a uniform grid
    /// starting at 0.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for record in rdr.records() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "curve csv rows need 2 columns, got {}",
                    record.len()
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}")))
            };
            xs.push(parse(&record[0])?);
            vs.push(parse(&record[1])?);
        }
        let horizon = *xs
            .last()
            .ok_or_else(|| Error::InvalidArgument("empty curve csv".into()))?;
        let grid = Grid::new(xs.len(), horizon)?;
        for (k, x) in xs.iter().enumerate() {
            if (x - grid.node(k)).abs() > ALIGN_TOL * horizon.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "csv abscissa {x} at row {k} is not on a uniform grid starting at 0"
                )));
            }
        }
        Self::new(grid, vs)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Resample onto another grid by linear interpolation (clamped at the ends).
    pub fn resample(&self, grid: Grid) -> Result<Curve> {
        Curve::from_fn(grid, |x| self.eval(x))
    }
}

/// JSON form of a curve: `{"horizon": T*, "values": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveJson {
    pub horizon: f64,
    pub values: Vec<f64>,
}

pub(crate) fn interpolate(values: &[f64], dx: f64, x: f64) -> f64 {
    let last = values.len() - 1;
    if x <= 0.0 {
        return values[0];
    }
    let pos = x / dx;
    if pos >= last as f64 {
        return values[last];
    }
    let k = pos.floor() as usize;
    let w = pos - k as f64;
    if w == 0.0 {
        values[k]
    } else {
        (1.0 - w) * values[k] + w * values[k + 1]
    }
}

/// Cumulative trapezoid rule into `out`; `out[0] = 0`.
pub(crate) fn prefix_integral_into(values: &[f64], dx: f64, out: &mut [f64]) {
    debug_assert_eq!(values.len(), out.len());
    let half = 0.5 * dx;
    let mut acc = 0.0;
    out[0] = 0.0;
    for k in 1..values.len() {
        acc += half * (values[k - 1] + values[k]);
        out[k] = acc;
    }
}

/// `I(f)[x] = ∫₀ˣ f[s] ds`, exact for the piecewise-linear representative.
pub fn integrate_prefix(f: &Curve) -> Curve {
    let mut out = vec![0.0; f.values.len()];
    prefix_integral_into(&f.values, f.grid.dx(), &mut out);
    Curve::from_raw(f.grid, out)
}

/// Shift `values` left by `t` in place: `h[x] = f[x + t]`, clamped to `f[T*]`
/// past the right end.
pub(crate) fn shift_in_place(values: &mut [f64], dx: f64, t: f64) {
    let n = values.len();
    let last = values[n - 1];
    let cells = t / dx;
    let whole = cells.round();
    if (cells - whole).abs() <= ALIGN_TOL * whole.max(1.0) {
        let s = whole as usize;
        if s == 0 {
            return;
        }
        if s >= n - 1 {
            values.fill(last);
            return;
        }
        values.copy_within(s.., 0);
        values[n - s..].fill(last);
        return;
    }
    let s = cells.floor() as usize;
    let w = cells - s as f64;
    // Reading index k + s + 1 >= k keeps the in-place update valid left to right.
    for k in 0..n {
        let i = k + s;
        values[k] = if i + 1 < n {
            (1.0 - w) * values[i] + w * values[i + 1]
        } else {
            last
        };
    }
}

/// The clamped shift semigroup `e^{tA}` applied to `f`.
pub fn shift_semigroup(f: &Curve, t: f64) -> Result<Curve> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("shift time must be a finite t >= 0, got {t}")));
    }
    let mut values = f.values.clone();
    shift_in_place(&mut values, f.grid.dx(), t);
    Ok(Curve::from_raw(f.grid, values))
}

/// Nodal derivative: central differences inside, second-order one-sided
/// differences at both ends. Exact on polynomials of degree two.
pub fn derivative(f: &Curve) -> Curve {
    let v = &f.values;
    let n = v.len();
    let dx = f.grid.dx();
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx);
    for k in 1..n - 1 {
        out[k] = (v[k + 1] - v[k - 1]) / (2.0 * dx);
    }
    out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * dx);
    Curve::from_raw(f.grid, out)
}

/// Trapezoid L² norm of the nodal values.
pub fn l2_norm(f: &Curve) -> f64 {
    l2_norm_raw(&f.values, f.grid.dx())
}

pub(crate) fn l2_norm_raw(v: &[f64], dx: f64) -> f64 {
    let n = v.len();
    let inner: f64 = v.iter().map(|x| x * x).sum::<f64>() - 0.5 * (v[0] * v[0] + v[n - 1] * v[n - 1]);
    (dx * inner.max(0.0)).sqrt()
}

/// L² norm of the forward-difference derivative (exact for the interpolant).
pub fn derivative_l2_norm(f: &Curve) -> f64 {
    derivative_l2_norm_raw(&f.values, f.grid.dx())
}

pub(crate) fn derivative_l2_norm_raw(v: &[f64], dx: f64) -> f64 {
    let s: f64 = v.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    (s / dx).sqrt()
}

/// Discrete `H¹` norm: `sqrt(|f|²_{L²} + |f'|²_{L²})`.
pub fn h1_norm(f: &Curve) -> f64 {
    h1_norm_raw(&f.values, f.grid.dx())
}

pub(crate) fn h1_norm_raw(v: &[f64], dx: f64) -> f64 {
    let a = l2_norm_raw(v, dx);
    let b = derivative_l2_norm_raw(v, dx);
    (a * a + b * b).sqrt()
}

pub fn sup_norm(f: &Curve) -> f64 {
    sup_norm_raw(&f.values)
}

pub(crate) fn sup_norm_raw(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
