//! Uniform partitions of `I = [0,1)`, step-function fields on `I` and
//! `I x I`, graphon sampling and `L^2` geometry.
//!
//! Cell `k` (zero-based) is the half-open interval `[k/N, (k+1)/N)`; a point
//! `x` belongs to cell `floor(N x)`. All norms are exact for step functions
//! since midpoint quadrature integrates constants exactly.

use crate::quadrature::GaussLegendre;
use crate::{Error, Result};
use std::sync::Arc;

/// Uniform partition of `[0,1)` into `N` half-open cells of measure `1/N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitGrid {
    n: usize,
}

impl UnitGrid {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "grid needs at least one cell");
        UnitGrid { n }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Index of the cell containing `x`, i.e. `floor(N x)`, clamped so that
    /// the excluded right endpoint `x = 1` maps to the last cell.
    pub fn cell_of(&self, x: f64) -> usize {
        ((x * self.n as f64) as usize).min(self.n - 1)
    }

    pub fn cell_bounds(&self, k: usize) -> (f64, f64) {
        let h = self.cell_width();
        (k as f64 * h, (k + 1) as f64 * h)
    }

    pub fn cell_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.cell_width()
    }
}

/// Piecewise-constant field `u: I -> R^d`, the embedding of node states
/// `(phi_1, ..., phi_N)`. Values are stored contiguously, `dim` components
/// per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction1D {
    pub grid: UnitGrid,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl StepFunction1D {
    pub fn new(grid: UnitGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for N={} d={}, got {}",
                grid.len() * dim,
                grid.len(),
                dim,
                values.len()
            )));
        }
        Ok(StepFunction1D { grid, dim, values })
    }

    pub fn constant(grid: UnitGrid, dim: usize, value: f64) -> Self {
        StepFunction1D {
            grid,
            dim,
            values: vec![value; grid.len() * dim],
        }
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Value at a point, component slice of the containing cell.
    pub fn at(&self, x: f64) -> &[f64] {
        self.cell(self.grid.cell_of(x))
    }

    /// `||u||_{L^2(I)}^2 = (1/N) sum_k |u_k|^2`.
    pub fn l2_norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.values {
            acc += v * v;
        }
        acc / self.grid.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        // per-cell Euclidean length of the d-vector
        (0..self.grid.len())
            .map(|k| {
                self.cell(k)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Refine to a grid of `m` cells, `N | m`; values are replicated.
    pub fn refine(&self, m: usize) -> Result<StepFunction1D> {
        let n = self.grid.len();
        if m % n != 0 {
            return Err(Error::GridMismatch(format!("{} does not divide {}", n, m)));
        }
        let r = m / n;
        let mut values = Vec::with_capacity(m * self.dim);
        for k in 0..n {
            for _ in 0..r {
                values.extend_from_slice(self.cell(k));
            }
        }
        StepFunction1D::new(UnitGrid::new(m), self.dim, values)
    }
}

/// Piecewise-constant kernel `K: I x I -> R`, the embedding of edge weights
/// `(kappa_kl)`. Row-major: entry `(k, l)` at index `k * N + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction2D {
    pub grid: UnitGrid,
    pub values: Vec<f64>,
}

impl StepFunction2D {
    pub fn new(grid: UnitGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for N={}, got {}",
                grid.len() * grid.len(),
                grid.len(),
                values.len()
            )));
        }
        Ok(StepFunction2D { grid, values })
    }

    pub fn constant(grid: UnitGrid, value: f64) -> Self {
        StepFunction2D {
            grid,
            values: vec![value; grid.len() * grid.len()],
        }
    }

    pub fn entry(&self, k: usize, l: usize) -> f64 {
        self.values[k * self.grid.len() + l]
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        self.entry(self.grid.cell_of(x), self.grid.cell_of(y))
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[k * n..(k + 1) * n]
    }

    /// `||K||_{L^2(I^2)}^2 = (1/N^2) sum_{k,l} K_{kl}^2`.
    pub fn l2_norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.values {
            acc += v * v;
        }
        acc / (self.grid.len() * self.grid.len()) as f64
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn refine(&self, m: usize) -> Result<StepFunction2D> {
        let n = self.grid.len();
        if m % n != 0 {
            return Err(Error::GridMismatch(format!("{} does not divide {}", n, m)));
        }
        let r = m / n;
        let mut values = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                values[i * m + j] = self.entry(i / r, j / r);
            }
        }
        StepFunction2D::new(UnitGrid::new(m), values)
    }
}

/// A limiting kernel `W` on `I x I`: analytic with a declared sup-norm bound,
/// or a high-resolution sample.
#[derive(Clone)]
pub enum Graphon {
    Analytic {
        eval: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        sup_bound: f64,
    },
    Sampled(StepFunction2D),
}

impl Graphon {
    pub fn analytic<F>(eval: F, sup_bound: f64) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Graphon::Analytic {
            eval: Arc::new(eval),
            sup_bound,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Graphon::Analytic { eval, .. } => eval(x, y),
            Graphon::Sampled(s) => s.at(x, y),
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            Graphon::Analytic { sup_bound, .. } => *sup_bound,
            Graphon::Sampled(s) => s.sup_norm(),
        }
    }
}

impl std::fmt::Debug for Graphon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Graphon::Analytic { sup_bound, .. } => {
                write!(f, "Graphon::Analytic {{ sup_bound: {} }}", sup_bound)
            }
            Graphon::Sampled(s) => write!(f, "Graphon::Sampled {{ n: {} }}", s.grid.len()),
        }
    }
}

/// Embed node states and edge weights as step functions: `u = phi_k` on
/// `I_k` and `K = kappa_kl` on `I_k x I_l`.
pub fn embed(
    phi: &[f64],
    dim: usize,
    kappa: &[f64],
    n: usize,
) -> Result<(StepFunction1D, StepFunction2D)> {
    let grid = UnitGrid::new(n);
    let u = StepFunction1D::new(grid, dim, phi.to_vec())?;
    let k = StepFunction2D::new(grid, kappa.to_vec())?;
    Ok((u, k))
}

/// Cell averages of a 2D integrand: entry `(k,l) = N^2 int_{I_k x I_l} w`,
/// by tensor Gauss-Legendre quadrature of the given order per cell.
pub fn cell_average_2d<F>(w: F, grid: UnitGrid, order: usize) -> Result<StepFunction2D>
where
    F: Fn(f64, f64) -> f64,
{
    let n = grid.len();
    let rule = GaussLegendre::new(order);
    let mut values = vec![0.0; n * n];
    for k in 0..n {
        let (ax, bx) = grid.cell_bounds(k);
        for l in 0..n {
            let (ay, by) = grid.cell_bounds(l);
            let mut acc = 0.0;
            for (x, wx) in rule.mapped(ax, bx) {
                for (y, wy) in rule.mapped(ay, by) {
                    let v = w(x, y);
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "integrand at ({x}, {y}) in cell ({k}, {l})"
                        )));
                    }
                    acc += wx * wy * v;
                }
            }
            // average = integral / cell area
            values[k * n + l] = acc * (n * n) as f64;
        }
    }
    StepFunction2D::new(grid, values)
}

/// Cell averages of a scalar 1D integrand: entry `k = N int_{I_k} f`.
pub fn cell_average_1d<F>(f: F, grid: UnitGrid, order: usize) -> Result<StepFunction1D>
where
    F: Fn(f64) -> f64,
{
    let n = grid.len();
    let rule = GaussLegendre::new(order);
    let mut values = vec![0.0; n];
    for (k, slot) in values.iter_mut().enumerate() {
        let (a, b) = grid.cell_bounds(k);
        let v = rule.integrate(a, b, &f) * n as f64;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("integrand in cell {k}")));
        }
        *slot = v;
    }
    StepFunction1D::new(grid, 1, values)
}

/// Sample a graphon onto a grid by cell averaging (the `L^2`-orthogonal
/// projection onto step functions).
pub fn project_graphon(w: &Graphon, grid: UnitGrid, order: usize) -> Result<StepFunction2D> {
    match w {
        Graphon::Analytic { eval, .. } => cell_average_2d(|x, y| eval(x, y), grid, order),
        Graphon::Sampled(s) => {
            if s.grid.len() % grid.len() == 0 {
                restrict_2d(s, grid.len())
            } else {
                cell_average_2d(|x, y| s.at(x, y), grid, order)
            }
        }
    }
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(mut a: usize, mut b: usize) -> usize {
        while b != 0 {
            let t = a % b;
            a = b;
            b = t;
        }
        a
    }
    a / gcd(a, b) * b
}

/// `L^2(I)` distance between two step functions, via the least common grid
/// refinement when the grids differ.
pub fn l2_distance_1d(a: &StepFunction1D, b: &StepFunction1D) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(format!(
            "state dimensions {} vs {}",
            a.dim, b.dim
        )));
    }
    let m = lcm(a.grid.len(), b.grid.len());
    let (ra, rb) = (m / a.grid.len(), m / b.grid.len());
    let mut acc = 0.0;
    for i in 0..m {
        let va = a.cell(i / ra);
        let vb = b.cell(i / rb);
        for (x, y) in va.iter().zip(vb) {
            let d = x - y;
            acc += d * d;
        }
    }
    Ok((acc / m as f64).sqrt())
}

/// `L^2(I^2)` distance between two step kernels.
pub fn l2_distance_2d(a: &StepFunction2D, b: &StepFunction2D) -> Result<f64> {
    let m = lcm(a.grid.len(), b.grid.len());
    let (ra, rb) = (m / a.grid.len(), m / b.grid.len());
    let mut acc = 0.0;
    for i in 0..m {
        let ia = i / ra;
        let ib = i / rb;
        for j in 0..m {
            let d = a.entry(ia, j / ra) - b.entry(ib, j / rb);
            acc += d * d;
        }
    }
    Ok((acc / (m * m) as f64).sqrt())
}

/// `L^2(I)` distance between a scalar step function and a continuous
/// function, by per-cell Gauss quadrature of the squared deviation.
pub fn l2_distance_1d_fn<F>(a: &StepFunction1D, f: F, order: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if a.dim != 1 {
        return Err(Error::DimensionMismatch(
            "function comparison requires d = 1".into(),
        ));
    }
    let rule = GaussLegendre::new(order);
    let mut acc = 0.0;
    for k in 0..a.grid.len() {
        let (lo, hi) = a.grid.cell_bounds(k);
        let c = a.values[k];
        acc += rule.integrate(lo, hi, |x| {
            let d = c - f(x);
            d * d
        });
    }
    Ok(acc.sqrt())
}

/// `L^2(I^2)` distance between a step kernel and a continuous kernel.
pub fn l2_distance_2d_fn<F>(a: &StepFunction2D, f: F, order: usize) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let rule = GaussLegendre::new(order);
    let n = a.grid.len();
    let mut acc = 0.0;
    for k in 0..n {
        let (ax, bx) = a.grid.cell_bounds(k);
        for l in 0..n {
            let (ay, by) = a.grid.cell_bounds(l);
            let c = a.entry(k, l);
            for (x, wx) in rule.mapped(ax, bx) {
                for (y, wy) in rule.mapped(ay, by) {
                    let d = c - f(x, y);
                    acc += wx * wy * d * d;
                }
            }
        }
    }
    Ok(acc.sqrt())
}

/// Restrict a fine step function to a coarser grid with `N | M`; the coarse
/// value is the mean of the covered fine values (`L^2` projection).
pub fn restrict_1d(fine: &StepFunction1D, n: usize) -> Result<StepFunction1D> {
    let m = fine.grid.len();
    if m % n != 0 {
        return Err(Error::GridMismatch(format!("{n} does not divide {m}")));
    }
    let r = m / n;
    let d = fine.dim;
    let mut values = vec![0.0; n * d];
    for k in 0..n {
        for i in 0..r {
            let src = fine.cell(k * r + i);
            for (c, v) in values[k * d..(k + 1) * d].iter_mut().zip(src) {
                *c += v;
            }
        }
        for c in values[k * d..(k + 1) * d].iter_mut() {
            *c /= r as f64;
        }
    }
    StepFunction1D::new(UnitGrid::new(n), d, values)
}

/// 2D analogue of [`restrict_1d`].
pub fn restrict_2d(fine: &StepFunction2D, n: usize) -> Result<StepFunction2D> {
    let m = fine.grid.len();
    if m % n != 0 {
        return Err(Error::GridMismatch(format!("{n} does not divide {m}")));
    }
    let r = m / n;
    let mut values = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            let mut acc = 0.0;
            for i in 0..r {
                for j in 0..r {
                    acc += fine.entry(k * r + i, l * r + j);
                }
            }
            values[k * n + l] = acc / (r * r) as f64;
        }
    }
    StepFunction2D::new(UnitGrid::new(n), values)
}
