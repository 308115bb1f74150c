//! Finite-dimensional operator algebra: time reversal, restriction
//! projections, adjoints, causality and strict causality, traces.
//!
//! Operators act on cell-sampled grid functions, `(Vf)(cell i) = Σ_j M[i,j] f(cell j)`,
//! with quadrature weights folded into the matrix. On the forward resolution
//! of identity, causality is exactly lower-triangularity; on the reversed
//! one, upper-triangularity. Multi-component functions are mapped blockwise
//! (the same matrix on each component).

use std::io::Write;
use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Result, VolterraError};
use crate::grid::{GridFunction, NodePath, TimeGrid};
use crate::output::format_f64;

/// Which resolution of identity a causality statement refers to.
///
/// Forward: `e_λ f = f·1_{[0, λT]}`. Reversed: `ě_λ f = f·1_{[(1-λ)T, T]}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Forward,
    Reversed,
}

/// Matrix representation of a linear map on grid functions.
#[derive(Debug)]
pub struct DiscreteOperator {
    grid: TimeGrid,
    matrix: Array2<f64>,
    causal_forward: OnceLock<(bool, f64)>,
    causal_reversed: OnceLock<(bool, f64)>,
}

impl Clone for DiscreteOperator {
    fn clone(&self) -> Self {
        let out = Self::new(self.grid, self.matrix.clone()).expect("clone of valid operator");
        if let Some(v) = self.causal_forward.get() {
            let _ = out.causal_forward.set(*v);
        }
        if let Some(v) = self.causal_reversed.get() {
            let _ = out.causal_reversed.set(*v);
        }
        out
    }
}

impl DiscreteOperator {
    pub fn new(grid: TimeGrid, matrix: Array2<f64>) -> Result<Self> {
        let n = grid.n();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(VolterraError::Contract(format!(
                "operator matrix must be {n}x{n}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(VolterraError::Contract("operator matrix has non-finite entries".into()));
        }
        Ok(Self {
            grid,
            matrix,
            causal_forward: OnceLock::new(),
            causal_reversed: OnceLock::new(),
        })
    }

    pub fn identity(grid: TimeGrid) -> Self {
        Self::new(grid, Array2::eye(grid.n())).expect("identity is valid")
    }

    pub fn zero(grid: TimeGrid) -> Self {
        Self::new(grid, Array2::zeros((grid.n(), grid.n()))).expect("zero is valid")
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Apply to every component of a grid function.
    pub fn apply(&self, f: &GridFunction) -> GridFunction {
        assert!(self.grid.same_as(f.grid()), "operator/function grid mismatch");
        let out = self.matrix.dot(f.values());
        GridFunction::new(self.grid, out).expect("finite image")
    }

    pub fn apply_vec(&self, v: &ArrayView1<f64>) -> Array1<f64> {
        self.matrix.dot(v)
    }

    /// L² adjoint. Uniform cell weights make this the plain transpose.
    pub fn adjoint(&self) -> Self {
        Self::new(self.grid, self.matrix.t().to_owned()).expect("transpose is valid")
    }

    /// `V̌ = τ V τ`: conjugation by the cell-mirror permutation.
    pub fn reversed(&self) -> Self {
        let n = self.grid.n();
        let m = Array2::from_shape_fn((n, n), |(i, j)| self.matrix[(n - 1 - i, n - 1 - j)]);
        Self::new(self.grid, m).expect("permuted entries are finite")
    }

    /// Composition `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        assert!(self.grid.same_as(&other.grid), "grid mismatch in composition");
        Self::new(self.grid, self.matrix.dot(&other.matrix)).expect("product is finite")
    }

    /// Restriction to the sub-grid `[0, t_m]` (principal `m x m` block).
    ///
    /// For the kernel families built in this crate the entries are local in
    /// their indices, so this is exactly the operator built on the sub-grid.
    pub fn principal_submatrix(&self, m: usize) -> Result<Self> {
        let sub = self.grid.prefix(m)?;
        let mat = self.matrix.slice(ndarray::s![..m, ..m]).to_owned();
        Self::new(sub, mat)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diag().sum()
    }

    /// `(trace(V^k))_{k=1..=kmax}`.
    pub fn trace_powers(&self, kmax: usize) -> Vec<f64> {
        let mut traces = Vec::with_capacity(kmax);
        let mut power = self.matrix.clone();
        traces.push(power.diag().sum());
        for _ in 1..kmax {
            power = power.dot(&self.matrix);
            traces.push(power.diag().sum());
        }
        traces
    }

    /// Causality for the given resolution: `E_λ V E_λ = E_λ V` at every
    /// node-aligned λ. Equivalent to a triangularity scan; returns the
    /// predicate and the largest violating entry. Cached.
    pub fn is_causal(&self, resolution: Resolution) -> (bool, f64) {
        let cache = match resolution {
            Resolution::Forward => &self.causal_forward,
            Resolution::Reversed => &self.causal_reversed,
        };
        *cache.get_or_init(|| {
            let n = self.grid.n();
            let mut worst = 0.0_f64;
            for i in 0..n {
                for j in 0..n {
                    let violates = match resolution {
                        Resolution::Forward => j > i,
                        Resolution::Reversed => j < i,
                    };
                    if violates {
                        worst = worst.max(self.matrix[(i, j)].abs());
                    }
                }
            }
            (worst <= 1e-12, worst)
        })
    }

    /// Strict causality search over dyadic partitions down to the grid floor.
    ///
    /// Succeeds at the first (coarsest) dyadic level whose diagonal blocks
    /// all have spectral norm `< eps`; per the quasi-nilpotence theorem this
    /// is the regime where traces of all powers vanish.
    pub fn is_strictly_causal(&self, resolution: Resolution, eps: f64) -> StrictCausality {
        let (causal, violation) = self.is_causal(resolution);
        if !causal {
            return StrictCausality {
                passed: false,
                partition: Vec::new(),
                largest_block_norm: f64::INFINITY,
                causal,
                causality_violation: violation,
            };
        }
        let n = self.grid.n();
        let max_level = (usize::BITS - (n - 1).leading_zeros()) as usize; // ceil(log2 n)
        let mut best_norm = f64::INFINITY;
        for level in 0..=max_level {
            let blocks = 1usize << level;
            let mut bounds: Vec<usize> = (0..=blocks)
                .map(|b| ((b as f64 / blocks as f64) * n as f64).round() as usize)
                .collect();
            bounds.dedup();
            let mut worst = 0.0_f64;
            for w in bounds.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let block = self.matrix.slice(ndarray::s![lo..hi, lo..hi]);
                worst = worst.max(spectral_norm(&block.to_owned()));
                if worst >= eps {
                    break;
                }
            }
            best_norm = best_norm.min(worst);
            if worst < eps {
                return StrictCausality {
                    passed: true,
                    partition: bounds,
                    largest_block_norm: worst,
                    causal,
                    causality_violation: violation,
                };
            }
        }
        StrictCausality {
            passed: false,
            partition: Vec::new(),
            largest_block_norm: best_norm,
            causal,
            causality_violation: violation,
        }
    }

    /// CSV dump, row-major, with a `# n=<n> T=<T>` comment header.
    pub fn dump_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# n={} T={}", self.grid.n(), format_f64(self.grid.horizon()))?;
        for row in self.matrix.rows() {
            let line: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Outcome of the strict-causality search.
#[derive(Debug, Clone)]
pub struct StrictCausality {
    pub passed: bool,
    /// Node indices bounding the first passing dyadic partition.
    pub partition: Vec<usize>,
    pub largest_block_norm: f64,
    pub causal: bool,
    pub causality_violation: f64,
}

/// Largest singular value by power iteration on `MᵀM` (fixed 100-iteration
/// cap, 1e-10 residual; deterministic start vector).
pub fn spectral_norm(m: &Array2<f64>) -> f64 {
    let (rows, cols) = (m.nrows(), m.ncols());
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows == 1 && cols == 1 {
        return m[(0, 0)].abs();
    }
    let mut v = Array1::from_elem(cols, 1.0 / (cols as f64).sqrt());
    let mut sigma = 0.0_f64;
    for _ in 0..100 {
        let w = m.dot(&v);
        let u = m.t().dot(&w);
        let norm = u.dot(&u).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        let done = (next - sigma).abs() <= 1e-10 * next.max(1.0);
        sigma = next;
        v = u / norm;
        if done {
            break;
        }
    }
    sigma
}

/// The mirror permutation `(τf)(cell j) = f(cell n-1-j)` as an operator.
pub fn reverse_op(grid: TimeGrid) -> DiscreteOperator {
    let n = grid.n();
    let m = Array2::from_shape_fn((n, n), |(i, j)| if j == n - 1 - i { 1.0 } else { 0.0 });
    DiscreteOperator::new(grid, m).expect("permutation is valid")
}

/// Cell-mirror reversal of a grid function.
pub fn reverse(f: &GridFunction) -> GridFunction {
    let n = f.grid().n();
    let vals = Array2::from_shape_fn((n, f.dim()), |(j, c)| f.values()[(n - 1 - j, c)]);
    GridFunction::new(*f.grid(), vals).expect("mirror of finite values")
}

/// Projection of the resolution of identity at level λ (snapped to the
/// nearest node): forward keeps cells in `[0, λT)`, reversed keeps cells in
/// `[(1-λ)T, T)`.
pub fn projection(resolution: Resolution, lambda: f64, grid: TimeGrid) -> DiscreteOperator {
    let n = grid.n();
    let m = grid.snap_lambda(lambda.clamp(0.0, 1.0));
    let mat = Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j {
            return 0.0;
        }
        let keep = match resolution {
            Resolution::Forward => j < m,
            Resolution::Reversed => j >= n - m,
        };
        if keep {
            1.0
        } else {
            0.0
        }
    });
    DiscreteOperator::new(grid, mat).expect("projection is valid")
}

/// Projection selecting the cell-index window `[lo, hi)` (node-aligned times).
pub fn window_projection(lo: usize, hi: usize, grid: TimeGrid) -> DiscreteOperator {
    let n = grid.n();
    let mat = Array2::from_shape_fn(
        (n, n),
        |(i, j)| if i == j && j >= lo && j < hi { 1.0 } else { 0.0 },
    );
    DiscreteOperator::new(grid, mat).expect("projection is valid")
}

/// Path-level time reversal `Θ_T`: `ω̌(t_k) = ω(T) - ω(t_{n-k})`.
///
/// Requires `ω(0) = 0`; the reversed path again starts at 0 and its
/// increments are the time-mirrored increments of `ω`.
pub fn path_reversal_theta(path: &NodePath) -> Result<NodePath> {
    let n = path.grid().n();
    for c in 0..path.dim() {
        if path.values()[(0, c)] != 0.0 {
            return Err(VolterraError::Contract(format!(
                "Θ_T requires ω(0) = 0, got {} in component {c}",
                path.values()[(0, c)]
            )));
        }
    }
    let vals = Array2::from_shape_fn((n + 1, path.dim()), |(k, c)| {
        path.values()[(n, c)] - path.values()[(n - k, c)]
    });
    NodePath::new(*path.grid(), vals)
}
