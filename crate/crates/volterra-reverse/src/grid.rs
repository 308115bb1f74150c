//! Uniform time grids and functions sampled on them.
//!
//! All discretizations in this crate share one convention: the interval
//! `[0, T]` is split into `n` cells `[t_j, t_{j+1})` with `t_k = T*k/n`.
//! A [`GridFunction`] holds one value per cell (the left-endpoint value
//! `f(t_j)` unless stated otherwise); a [`NodePath`] holds one value per
//! node `t_0..t_n` and is used for cumulative processes with `path(0) = 0`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Result, VolterraError};

/// Uniform partition of `[0, T]` into `n` cells.
///
/// Nodes are computed as `T*k/n` so that `node(n) == T` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(VolterraError::Domain(format!(
                "horizon must be a positive finite real, got {horizon}"
            )));
        }
        if n < 2 {
            return Err(VolterraError::Domain(format!("need n >= 2 steps, got {n}")));
        }
        Ok(Self { horizon, n })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh `Δ = T/n`.
    pub fn step(&self) -> f64 {
        self.horizon / self.n as f64
    }

    /// Node `t_k = T*k/n`, `k = 0..=n`.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n);
        self.horizon * k as f64 / self.n as f64
    }

    /// Left endpoint of cell `j` (equals `node(j)`).
    pub fn cell_left(&self, j: usize) -> f64 {
        self.node(j)
    }

    /// Midpoint of cell `j`.
    pub fn cell_mid(&self, j: usize) -> f64 {
        self.horizon * (j as f64 + 0.5) / self.n as f64
    }

    /// The sub-grid `[0, t_m]` sharing this grid's mesh.
    pub fn prefix(&self, m: usize) -> Result<TimeGrid> {
        if m < 2 || m > self.n {
            return Err(VolterraError::Contract(format!(
                "horizon index {m} outside 2..={}",
                self.n
            )));
        }
        TimeGrid::new(self.node(m), m)
    }

    /// Snap `lambda*T` (`lambda` in `[0,1]`) to the nearest node index.
    pub fn snap_lambda(&self, lambda: f64) -> usize {
        let m = (lambda * self.n as f64).round();
        (m.max(0.0) as usize).min(self.n)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n == other.n && self.horizon == other.horizon
    }
}

/// A function sampled on the cells of a [`TimeGrid`], with `d` components.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: TimeGrid,
    /// `n x d`, row `j` is the value on cell `j`.
    values: Array2<f64>,
}

impl GridFunction {
    pub fn new(grid: TimeGrid, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != grid.n() {
            return Err(VolterraError::Contract(format!(
                "expected {} cell values, got {}",
                grid.n(),
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(VolterraError::Contract("need at least one component".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VolterraError::Contract("grid function contains non-finite entries".into()));
        }
        Ok(Self { grid, values })
    }

    /// Scalar (d = 1) function from per-cell values.
    pub fn scalar(grid: TimeGrid, values: Array1<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(grid, values.into_shape_with_order((n, 1)).expect("reshape"))
    }

    /// Scalar function sampled at cell left endpoints.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::scalar(grid, Array1::from_shape_fn(grid.n(), |j| f(grid.cell_left(j))))
    }

    pub fn constant(grid: TimeGrid, c: f64) -> Self {
        Self::scalar(grid, Array1::from_elem(grid.n(), c)).expect("constant is finite")
    }

    /// Indicator of the cell-index window `[lo, hi)`.
    pub fn indicator(grid: TimeGrid, lo: usize, hi: usize) -> Self {
        Self::scalar(
            grid,
            Array1::from_shape_fn(grid.n(), |j| if j >= lo && j < hi { 1.0 } else { 0.0 }),
        )
        .expect("indicator is finite")
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// View of a single component.
    pub fn component(&self, c: usize) -> ArrayView1<'_, f64> {
        self.values.column(c)
    }

    /// The only component of a scalar function.
    pub fn scalar_values(&self) -> ArrayView1<'_, f64> {
        assert_eq!(self.dim(), 1, "scalar_values on multi-component function");
        self.values.column(0)
    }

    /// L^p norm with the flat cell quadrature `(Δ Σ |f|^p)^{1/p}` (scalar only).
    pub fn lp_norm(&self, p: f64) -> f64 {
        let d = self.grid.step();
        (self
            .scalar_values()
            .iter()
            .map(|v| v.abs().powf(p) * d)
            .sum::<f64>())
        .powf(1.0 / p)
    }
}

/// A path sampled on the nodes `t_0..t_n` (cumulative processes; `n+1` rows).
#[derive(Debug, Clone)]
pub struct NodePath {
    grid: TimeGrid,
    /// `(n+1) x d`.
    values: Array2<f64>,
}

impl NodePath {
    pub fn new(grid: TimeGrid, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != grid.n() + 1 {
            return Err(VolterraError::Contract(format!(
                "expected {} node values, got {}",
                grid.n() + 1,
                values.nrows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VolterraError::Contract("node path contains non-finite entries".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn scalar(grid: TimeGrid, values: Array1<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(grid, values.into_shape_with_order((n, 1)).expect("reshape"))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn scalar_values(&self) -> ArrayView1<'_, f64> {
        assert_eq!(self.dim(), 1, "scalar_values on multi-component path");
        self.values.column(0)
    }
}
