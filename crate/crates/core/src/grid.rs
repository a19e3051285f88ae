//! Uniform periodic grids on the unit torus and the fields sampled on them.
//!
//! Every field stores one real sample per cell center `((i + 1/2) dx, (j + 1/2) dy)`,
//! laid out row-major (`j` is the row, `i` the column). The same samples are read
//! as finite-volume cell averages by the solver and as DFT collocation values by
//! the spectral operators.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    nx: usize,
    ny: usize,
}

impl TorusGrid {
    /// Both counts must be even and at least 4 so that the Nyquist mode is well defined.
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 4 || ny < 4 || !nx.is_multiple_of(2) || !ny.is_multiple_of(2) {
            return Err(Error::InvalidGrid { nx, ny });
        }
        Ok(Self { nx, ny })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    pub fn cell_measure(&self) -> f64 {
        self.dx() * self.dy()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy()]
    }

    /// Cell centers in storage order.
    pub fn centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| self.center(i, j)))
    }

    pub(crate) fn ensure_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )));
        }
        Ok(())
    }
}

fn check_samples(grid: &TorusGrid, values: &[f64], what: &str) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::InvalidValue(format!(
            "{what}: expected {} samples, got {}",
            grid.len(),
            values.len()
        )));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "{what}: non-finite sample at index {k}"
        )));
    }
    Ok(())
}

/// Fields that can be combined linearly; used by time differencing and interpolation.
pub trait LinearField: Clone {
    /// `sum_k c_k f_k`. The slice must be non-empty and share one grid.
    fn linear_combination(terms: &[(f64, &Self)]) -> Self;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        check_samples(&grid, &values, "scalar field")?;
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self::from_raw(grid, vec![value; grid.len()])
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self::from_raw(grid, grid.centers().map(f).collect())
    }

    /// Samples `f(k)` at every flat cell index `k`.
    pub fn from_fn_indexed(grid: TorusGrid, f: impl FnMut(usize) -> f64) -> Self {
        Self::from_raw(grid, (0..grid.len()).map(f).collect())
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        integrate(self)
    }

    /// Cyclic shift by whole cells: `out(i, j) = self(i - di, j - dj)`.
    pub fn shifted(&self, di: usize, dj: usize) -> Self {
        let g = self.grid;
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                out[g.index((i + di) % g.nx(), (j + dj) % g.ny())] = self.values[g.index(i, j)];
            }
        }
        Self::from_raw(g, out)
    }
}

impl LinearField for ScalarField {
    fn linear_combination(terms: &[(f64, &Self)]) -> Self {
        let grid = terms[0].1.grid;
        let mut out = vec![0.0; grid.len()];
        for (c, f) in terms {
            for (o, v) in out.iter_mut().zip(&f.values) {
                *o += c * v;
            }
        }
        Self::from_raw(grid, out)
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: f64) -> ScalarField {
        self.map(|a| a * rhs)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|a| -a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: TorusGrid, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        check_samples(&grid, &x, "vector field (x)")?;
        check_samples(&grid, &y, "vector field (y)")?;
        Ok(Self { grid, x, y })
    }

    pub(crate) fn from_raw(grid: TorusGrid, x: Vec<f64>, y: Vec<f64>) -> Self {
        debug_assert_eq!(x.len(), grid.len());
        debug_assert_eq!(y.len(), grid.len());
        Self { grid, x, y }
    }

    pub fn from_components(x: ScalarField, y: ScalarField) -> Result<Self> {
        x.grid.ensure_same(&y.grid)?;
        Ok(Self::from_raw(x.grid, x.values, y.values))
    }

    pub fn constant(grid: TorusGrid, value: [f64; 2]) -> Self {
        Self::from_raw(grid, vec![value[0]; grid.len()], vec![value[1]; grid.len()])
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, [0.0, 0.0])
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let (x, y) = grid.centers().map(f).map(|[a, b]| (a, b)).unzip();
        Self::from_raw(grid, x, y)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn at(&self, k: usize) -> [f64; 2] {
        [self.x[k], self.y[k]]
    }

    pub fn component(&self, c: usize) -> ScalarField {
        let v = if c == 0 { &self.x } else { &self.y };
        ScalarField::from_raw(self.grid, v.clone())
    }

    pub fn into_components(self) -> (ScalarField, ScalarField) {
        (
            ScalarField::from_raw(self.grid, self.x),
            ScalarField::from_raw(self.grid, self.y),
        )
    }

    pub fn map(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let (x, y) = (0..self.grid.len())
            .map(|k| f(self.at(k)))
            .map(|[a, b]| (a, b))
            .unzip();
        Self::from_raw(self.grid, x, y)
    }

    /// Pointwise `f(k, value)` with access to the cell index.
    pub fn map_indexed(&self, f: impl Fn(usize, [f64; 2]) -> [f64; 2]) -> Self {
        let (x, y) = (0..self.grid.len())
            .map(|k| f(k, self.at(k)))
            .map(|[a, b]| (a, b))
            .unzip();
        Self::from_raw(self.grid, x, y)
    }

    pub fn scale_by(&self, s: &ScalarField) -> Self {
        self.map_indexed(|k, [a, b]| [a * s.values[k], b * s.values[k]])
    }

    pub fn norm(&self) -> ScalarField {
        ScalarField::from_raw(
            self.grid,
            self.x
                .iter()
                .zip(&self.y)
                .map(|(a, b)| a.hypot(*b))
                .collect(),
        )
    }

    pub fn dot(&self, other: &VectorField) -> ScalarField {
        ScalarField::from_raw(
            self.grid,
            (0..self.grid.len())
                .map(|k| self.x[k] * other.x[k] + self.y[k] * other.y[k])
                .collect(),
        )
    }

    pub fn max_norm(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }

    /// Spatial mean of each component.
    pub fn mean(&self) -> [f64; 2] {
        let n = self.grid.len() as f64;
        [
            self.x.iter().sum::<f64>() / n,
            self.y.iter().sum::<f64>() / n,
        ]
    }

    pub fn shifted(&self, di: usize, dj: usize) -> Self {
        let (x, y) = self.clone().into_components();
        let (x, y) = (x.shifted(di, dj), y.shifted(di, dj));
        Self::from_raw(self.grid, x.values, y.values)
    }
}

impl LinearField for VectorField {
    fn linear_combination(terms: &[(f64, &Self)]) -> Self {
        let grid = terms[0].1.grid;
        let mut x = vec![0.0; grid.len()];
        let mut y = vec![0.0; grid.len()];
        for (c, f) in terms {
            for k in 0..grid.len() {
                x[k] += c * f.x[k];
                y[k] += c * f.y[k];
            }
        }
        Self::from_raw(grid, x, y)
    }
}

impl Add for &VectorField {
    type Output = VectorField;
    fn add(self, rhs: &VectorField) -> VectorField {
        VectorField::linear_combination(&[(1.0, self), (1.0, rhs)])
    }
}

impl Sub for &VectorField {
    type Output = VectorField;
    fn sub(self, rhs: &VectorField) -> VectorField {
        VectorField::linear_combination(&[(1.0, self), (-1.0, rhs)])
    }
}

impl Mul<f64> for &VectorField {
    type Output = VectorField;
    fn mul(self, rhs: f64) -> VectorField {
        VectorField::linear_combination(&[(rhs, self)])
    }
}

/// A symmetric traceless 2x2 matrix `[[p, s], [s, -p]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTraceless2 {
    pub p: f64,
    pub s: f64,
}

impl SymTraceless2 {
    pub const ZERO: Self = Self { p: 0.0, s: 0.0 };

    pub fn new(p: f64, s: f64) -> Self {
        Self { p, s }
    }

    /// Traceless part of `a ⊗ b + b ⊗ a`, halved: the symmetrized traceless outer product.
    pub fn sym_outer(a: [f64; 2], b: [f64; 2]) -> Self {
        Self {
            p: 0.5 * (a[0] * b[0] - a[1] * b[1]),
            s: 0.5 * (a[0] * b[1] + a[1] * b[0]),
        }
    }

    /// Larger eigenvalue, `sqrt(p^2 + s^2)`.
    #[inline]
    pub fn lambda_max(&self) -> f64 {
        self.p.hypot(self.s)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            p: c * self.p,
            s: c * self.s,
        }
    }

    /// Frobenius norm of the full 2x2 matrix.
    pub fn frobenius(&self) -> f64 {
        (2.0 * (self.p * self.p + self.s * self.s)).sqrt()
    }
}

impl Add for SymTraceless2 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.p + rhs.p, self.s + rhs.s)
    }
}

impl Sub for SymTraceless2 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.p - rhs.p, self.s - rhs.s)
    }
}

/// Larger eigenvalue of the traceless matrix `[[p, s], [s, -p]]`.
pub fn lambda_max_traceless(a: SymTraceless2) -> Result<f64> {
    if !a.p.is_finite() || !a.s.is_finite() {
        return Err(Error::InvalidValue(format!(
            "traceless matrix entries must be finite, got ({}, {})",
            a.p, a.s
        )));
    }
    Ok(a.lambda_max())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymTracelessField {
    grid: TorusGrid,
    p: Vec<f64>,
    s: Vec<f64>,
}

impl SymTracelessField {
    pub fn new(grid: TorusGrid, p: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        check_samples(&grid, &p, "traceless field (p)")?;
        check_samples(&grid, &s, "traceless field (s)")?;
        Ok(Self { grid, p, s })
    }

    pub(crate) fn from_raw(grid: TorusGrid, p: Vec<f64>, s: Vec<f64>) -> Self {
        debug_assert_eq!(p.len(), grid.len());
        debug_assert_eq!(s.len(), grid.len());
        Self { grid, p, s }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::from_raw(grid, vec![0.0; grid.len()], vec![0.0; grid.len()])
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn([f64; 2]) -> SymTraceless2) -> Self {
        let (p, s) = grid.centers().map(f).map(|a| (a.p, a.s)).unzip();
        Self::from_raw(grid, p, s)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    #[inline]
    pub fn at(&self, k: usize) -> SymTraceless2 {
        SymTraceless2::new(self.p[k], self.s[k])
    }

    pub fn lambda_max(&self) -> ScalarField {
        ScalarField::from_raw(
            self.grid,
            self.p
                .iter()
                .zip(&self.s)
                .map(|(p, s)| p.hypot(*s))
                .collect(),
        )
    }

    /// Spatial mean of `(p, s)`.
    pub fn mean(&self) -> [f64; 2] {
        let n = self.grid.len() as f64;
        [
            self.p.iter().sum::<f64>() / n,
            self.s.iter().sum::<f64>() / n,
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.p
            .iter()
            .chain(&self.s)
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

impl LinearField for SymTracelessField {
    fn linear_combination(terms: &[(f64, &Self)]) -> Self {
        let grid = terms[0].1.grid;
        let mut p = vec![0.0; grid.len()];
        let mut s = vec![0.0; grid.len()];
        for (c, f) in terms {
            for k in 0..grid.len() {
                p[k] += c * f.p[k];
                s[k] += c * f.s[k];
            }
        }
        Self::from_raw(grid, p, s)
    }
}

impl Add for &SymTracelessField {
    type Output = SymTracelessField;
    fn add(self, rhs: &SymTracelessField) -> SymTracelessField {
        SymTracelessField::linear_combination(&[(1.0, self), (1.0, rhs)])
    }
}

impl Sub for &SymTracelessField {
    type Output = SymTracelessField;
    fn sub(self, rhs: &SymTracelessField) -> SymTracelessField {
        SymTracelessField::linear_combination(&[(1.0, self), (-1.0, rhs)])
    }
}

/// Integral over the unit torus, i.e. the sample mean.
pub fn integrate(f: &ScalarField) -> f64 {
    f.values.iter().sum::<f64>() / f.values.len() as f64
}

/// Pointwise traceless part of `q ⊗ q / h`.
pub fn tensor_apply(q: &VectorField, h: &ScalarField) -> Result<SymTracelessField> {
    q.grid.ensure_same(&h.grid)?;
    if let Some(k) = h.values.iter().position(|&v| v <= 0.0 || v.is_nan()) {
        return Err(Error::Positivity(format!(
            "height must be positive, found {} at cell {k}",
            h.values[k]
        )));
    }
    let n = q.grid.len();
    let mut p = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b, hk) = (q.x[k], q.y[k], h.values[k]);
        p.push((a * a - b * b) / (2.0 * hk));
        s.push(a * b / hk);
    }
    Ok(SymTracelessField::from_raw(q.grid, p, s))
}

/// Fields sampled on uniform time nodes `t_k = k T / K`, `K >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField<F> {
    times: Vec<f64>,
    slices: Vec<F>,
}

impl<F> SpaceTimeField<F> {
    pub fn new(t_final: f64, slices: Vec<F>) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        if slices.len() < 3 {
            return Err(Error::InvalidValue(format!(
                "need at least 3 time nodes, got {}",
                slices.len()
            )));
        }
        let k = (slices.len() - 1) as f64;
        let times = (0..slices.len()).map(|i| t_final * i as f64 / k).collect();
        Ok(Self { times, slices })
    }

    pub fn from_fn(t_final: f64, nodes: usize, f: impl FnMut(usize, f64) -> F) -> Result<Self> {
        let mut f = f;
        let k = nodes.saturating_sub(1).max(1) as f64;
        let slices = (0..nodes).map(|i| f(i, t_final * i as f64 / k)).collect();
        Self::new(t_final, slices)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[F] {
        &self.slices
    }

    pub fn slice(&self, k: usize) -> &F {
        &self.slices[k]
    }

    pub fn nodes(&self) -> usize {
        self.slices.len()
    }

    pub fn t_final(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn map<G>(&self, f: impl FnMut(&F) -> G) -> SpaceTimeField<G> {
        SpaceTimeField {
            times: self.times.clone(),
            slices: self.slices.iter().map(f).collect(),
        }
    }

    pub fn try_map<G>(&self, f: impl FnMut(&F) -> Result<G>) -> Result<SpaceTimeField<G>> {
        Ok(SpaceTimeField {
            times: self.times.clone(),
            slices: self.slices.iter().map(f).collect::<Result<_>>()?,
        })
    }

    pub fn into_slices(self) -> Vec<F> {
        self.slices
    }
}

impl<F: LinearField> SpaceTimeField<F> {
    /// Second-order time derivative: centered in the interior, one-sided three-point at the ends.
    pub fn time_derivative(&self) -> Self {
        let n = self.slices.len();
        let inv = 1.0 / self.dt();
        let s = &self.slices;
        let slices = (0..n)
            .map(|k| {
                if k == 0 {
                    F::linear_combination(&[
                        (-1.5 * inv, &s[0]),
                        (2.0 * inv, &s[1]),
                        (-0.5 * inv, &s[2]),
                    ])
                } else if k == n - 1 {
                    F::linear_combination(&[
                        (1.5 * inv, &s[n - 1]),
                        (-2.0 * inv, &s[n - 2]),
                        (0.5 * inv, &s[n - 3]),
                    ])
                } else {
                    F::linear_combination(&[(0.5 * inv, &s[k + 1]), (-0.5 * inv, &s[k - 1])])
                }
            })
            .collect();
        Self {
            times: self.times.clone(),
            slices,
        }
    }

    /// Linear interpolation between nodes, clamped to `[0, T]`.
    pub fn interpolate(&self, t: f64) -> F {
        let dt = self.dt();
        let n = self.slices.len();
        let pos = (t / dt).clamp(0.0, (n - 1) as f64);
        let k = (pos.floor() as usize).min(n - 2);
        let w = pos - k as f64;
        F::linear_combination(&[(1.0 - w, &self.slices[k]), (w, &self.slices[k + 1])])
    }
}

/// Trapezoid rule in time over per-node values.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}
