//! Periodic base grids, bounded fiber grids and grid scalar fields.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math::{self, Vec2, TAU};

/// Uniform periodic grid on T¹ or T², node `k` along an axis sits at `k·h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    dim: usize,
    n: [usize; 2],
}

impl TorusGrid {
    pub fn new(dim: usize, n: [usize; 2]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid("torus dimension must be 1 or 2"));
        }
        if n[0] < 8 || (dim == 2 && n[1] < 8) {
            return Err(invalid("each grid axis needs at least 8 nodes"));
        }
        let n = if dim == 1 { [n[0], 1] } else { n };
        Ok(TorusGrid { dim, n })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(2, [n, n])
    }

    pub fn circle(n: usize) -> Result<Self> {
        Self::new(1, [n, 1])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn shape(&self) -> [usize; 2] {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self, axis: usize) -> f64 {
        TAU / self.n[axis] as f64
    }

    /// The coarsest spacing over the active axes; tolerances scale with it.
    pub fn h(&self) -> f64 {
        if self.dim == 1 {
            self.spacing(0)
        } else {
            self.spacing(0).max(self.spacing(1))
        }
    }

    #[inline]
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx % self.n[0], idx / self.n[0]]
    }

    /// Flat index of a (possibly out-of-range) multi-index, wrapping each axis.
    #[inline]
    pub fn index(&self, i0: isize, i1: isize) -> usize {
        let a = i0.rem_euclid(self.n[0] as isize) as usize;
        let b = i1.rem_euclid(self.n[1] as isize) as usize;
        b * self.n[0] + a
    }

    #[inline]
    pub fn offset(&self, idx: usize, d: [isize; 2]) -> usize {
        let [i, j] = self.multi_index(idx);
        self.index(i as isize + d[0], j as isize + d[1])
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> Vec2 {
        let [i, j] = self.multi_index(idx);
        if self.dim == 1 {
            [i as f64 * self.spacing(0), 0.0]
        } else {
            [i as f64 * self.spacing(0), j as f64 * self.spacing(1)]
        }
    }

    /// Shortest periodic displacement from `a` to `b`.
    #[inline]
    pub fn displacement(&self, a: Vec2, b: Vec2) -> Vec2 {
        if self.dim == 1 {
            [math::periodic_delta(b[0] - a[0]), 0.0]
        } else {
            [math::periodic_delta(b[0] - a[0]), math::periodic_delta(b[1] - a[1])]
        }
    }

    #[inline]
    pub fn distance(&self, a: Vec2, b: Vec2) -> f64 {
        math::norm(self.displacement(a, b))
    }

    /// Reduces a point onto the fundamental domain.
    #[inline]
    pub fn wrap(&self, x: Vec2) -> Vec2 {
        if self.dim == 1 {
            [math::wrap_angle(x[0]), 0.0]
        } else {
            [math::wrap_angle(x[0]), math::wrap_angle(x[1])]
        }
    }

    pub fn nearest(&self, x: Vec2) -> usize {
        let i = math::round(math::wrap_angle(x[0]) / self.spacing(0)) as isize;
        let j = if self.dim == 1 {
            0
        } else {
            math::round(math::wrap_angle(x[1]) / self.spacing(1)) as isize
        };
        self.index(i, j)
    }

    /// Per-axis periodic index distance between two nodes, in cells (max norm).
    pub fn cell_distance(&self, a: usize, b: usize) -> usize {
        let ia = self.multi_index(a);
        let ib = self.multi_index(b);
        let mut best = 0;
        for axis in 0..self.dim {
            let n = self.n[axis];
            let d = ia[axis].abs_diff(ib[axis]);
            best = best.max(d.min(n - d));
        }
        best
    }

    /// Multilinear interpolation stencil: up to four `(node, weight)` pairs.
    pub fn stencil(&self, x: Vec2) -> [(usize, f64); 4] {
        let s0 = math::wrap_angle(x[0]) / self.spacing(0);
        let f0 = math::floor(s0);
        let t0 = s0 - f0;
        let i0 = f0 as isize;
        if self.dim == 1 {
            return [
                (self.index(i0, 0), 1.0 - t0),
                (self.index(i0 + 1, 0), t0),
                (0, 0.0),
                (0, 0.0),
            ];
        }
        let s1 = math::wrap_angle(x[1]) / self.spacing(1);
        let f1 = math::floor(s1);
        let t1 = s1 - f1;
        let i1 = f1 as isize;
        [
            (self.index(i0, i1), (1.0 - t0) * (1.0 - t1)),
            (self.index(i0 + 1, i1), t0 * (1.0 - t1)),
            (self.index(i0, i1 + 1), (1.0 - t0) * t1),
            (self.index(i0 + 1, i1 + 1), t0 * t1),
        ]
    }
}

/// Bounded fiber box `[-P, P]^n` sampled with `M` (odd) points per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberGrid {
    dim: usize,
    half_width: f64,
    m: usize,
}

impl FiberGrid {
    pub fn new(dim: usize, half_width: f64, m: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid("fiber dimension must be 1 or 2"));
        }
        if m < 5 || m % 2 == 0 {
            return Err(invalid("fiber resolution must be odd and at least 5"));
        }
        if !(half_width > 0.0) {
            return Err(invalid("fiber half-width must be positive"));
        }
        Ok(FiberGrid { dim, half_width, m })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.m - 1) as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        if self.dim == 1 {
            self.m
        } else {
            self.m * self.m
        }
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn axis_value(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.spacing()
    }

    #[inline]
    pub fn point(&self, idx: usize) -> Vec2 {
        if self.dim == 1 {
            [self.axis_value(idx), 0.0]
        } else {
            [self.axis_value(idx % self.m), self.axis_value(idx / self.m)]
        }
    }

    pub fn on_edge(&self, idx: usize) -> bool {
        let last = self.m - 1;
        if self.dim == 1 {
            idx == 0 || idx == last
        } else {
            let (a, b) = (idx % self.m, idx / self.m);
            a == 0 || a == last || b == 0 || b == last
        }
    }

    /// Multilinear scatter stencil for a fiber point clamped into the box.
    pub fn stencil(&self, v: Vec2) -> [(usize, f64); 4] {
        let sp = self.spacing();
        let last = (self.m - 1) as f64;
        let axis = |x: f64| {
            let s = ((x + self.half_width) / sp).clamp(0.0, last);
            let f = math::floor(s).min(last - 1.0);
            (f as usize, s - f)
        };
        let (i0, t0) = axis(v[0]);
        if self.dim == 1 {
            return [(i0, 1.0 - t0), (i0 + 1, t0), (0, 0.0), (0, 0.0)];
        }
        let (i1, t1) = axis(v[1]);
        let m = self.m;
        [
            (i1 * m + i0, (1.0 - t0) * (1.0 - t1)),
            (i1 * m + i0 + 1, t0 * (1.0 - t1)),
            ((i1 + 1) * m + i0, (1.0 - t0) * t1),
            ((i1 + 1) * m + i0 + 1, t0 * t1),
        ]
    }
}

/// Real values on the nodes of a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid("value count does not match grid node count"));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        ScalarField { grid, values: alloc::vec![value; grid.len()] }
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(Vec2) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.coord(k))).collect();
        ScalarField { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn mean(&self) -> f64 {
        math::ordered_sum(self.values.iter().copied()) / self.values.len() as f64
    }

    /// Shifts the field so that its minimum is zero.
    pub fn normalize_min(&mut self) {
        let m = self.min();
        for v in &mut self.values {
            *v -= m;
        }
    }

    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Periodic multilinear interpolation.
    pub fn interpolate(&self, x: Vec2) -> f64 {
        self.grid
            .stencil(x)
            .iter()
            .map(|&(k, w)| w * self.values[k])
            .fold(0.0, |a, b| a + b)
    }

    /// Central-difference gradient at a node.
    pub fn gradient(&self, idx: usize) -> Vec2 {
        let g = &self.grid;
        let mut out = [0.0; 2];
        for axis in 0..g.dim() {
            let mut d = [0isize; 2];
            d[axis] = 1;
            let fwd = self.values[g.offset(idx, d)];
            d[axis] = -1;
            let bwd = self.values[g.offset(idx, d)];
            out[axis] = (fwd - bwd) / (2.0 * g.spacing(axis));
        }
        out
    }

    /// Forward and backward one-sided differences at a node.
    pub fn one_sided_gradients(&self, idx: usize) -> (Vec2, Vec2) {
        let g = &self.grid;
        let here = self.values[idx];
        let mut fwd = [0.0; 2];
        let mut bwd = [0.0; 2];
        for axis in 0..g.dim() {
            let mut d = [0isize; 2];
            d[axis] = 1;
            fwd[axis] = (self.values[g.offset(idx, d)] - here) / g.spacing(axis);
            d[axis] = -1;
            bwd[axis] = (here - self.values[g.offset(idx, d)]) / g.spacing(axis);
        }
        (fwd, bwd)
    }

    /// True where the one-sided differences disagree by more than `jump`.
    pub fn is_kink(&self, idx: usize, jump: f64) -> bool {
        let (f, b) = self.one_sided_gradients(idx);
        (f[0] - b[0]).abs() > jump || (f[1] - b[1]).abs() > jump
    }
}
