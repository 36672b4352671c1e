//! Mather's α-function, shapes of fiberwise convex sublevel domains, and
//! realization of classes in a shape by smooth Lagrangian sections.
//!
//! `α(a)` is the critical value of `L − a·v`. On the stencil graph the shifted
//! weights are `w₀ − a·Δ`, so one graph serves every class and the discrete α
//! is a supremum of affine functions of `a`, hence exactly convex.

use alloc::vec;
use alloc::vec::Vec;

use crate::action::{build_action_graph, ActionGraph};
use crate::error::{invalid, Error, Result};
use crate::geometry::{section_max_h, LagrangianSection};
use crate::graph::{self, Digraph};
use crate::grid::TorusGrid;
use crate::math::{self, Vec2};
use crate::model::{Hamiltonian, Lagrangian, Shifted};
use crate::selector::mollify;
use crate::weakkam::{solve_weak_kam, WeakKamOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaOptions {
    /// Time step in cells of the base grid.
    pub tau_cells: f64,
    pub radius: usize,
    /// Fiber box half-width certifying the stencil velocities.
    pub half_width: f64,
}

impl Default for AlphaOptions {
    fn default() -> Self {
        AlphaOptions { tau_cells: 3.0, radius: 8, half_width: 3.0 }
    }
}

/// Stencil graph of `L` reused for every class, with a warm Howard policy.
#[derive(Debug, Clone)]
pub struct AlphaSolver {
    graph: ActionGraph,
    policy: Option<Vec<u32>>,
}

impl AlphaSolver {
    pub fn new<L: Lagrangian + ?Sized>(l: &L, grid: TorusGrid, opts: &AlphaOptions) -> Result<Self> {
        for axis in 0..grid.dim() {
            if 2 * opts.radius >= grid.shape()[axis] {
                return Err(invalid("stencil radius must be below half the grid"));
            }
        }
        let tau = opts.tau_cells * grid.h();
        Ok(AlphaSolver { graph: build_action_graph(l, grid, tau, opts.radius, opts.half_width)?, policy: None })
    }

    pub fn graph(&self) -> &ActionGraph {
        &self.graph
    }

    /// Weights `w₀ − a·Δ` of the shifted Lagrangian `L − a·v`.
    pub fn shifted_weights(&self, a: Vec2) -> Digraph {
        let g = *self.graph.grid();
        self.graph.base().map_weights(|u, v, w| w - math::dot(a, g.displacement(g.coord(u), g.coord(v))))
    }

    /// `α(a) = −(min cycle mean of w₀ − a·Δ)/τ`.
    pub fn alpha(&mut self, a: Vec2) -> Result<f64> {
        let w = self.shifted_weights(a);
        let cm = graph::min_cycle_mean(&w, None, self.policy.as_deref())?;
        let value = -cm.min_mean() / self.graph.tau();
        self.policy = Some(cm.policy);
        Ok(value)
    }
}

/// One-shot `α(a)` for `L`.
pub fn alpha_function<L: Lagrangian + ?Sized>(l: &L, a: Vec2, grid: TorusGrid, opts: &AlphaOptions) -> Result<f64> {
    AlphaSolver::new(l, grid, opts)?.alpha(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    In,
    Out,
    Indeterminate,
}

/// `a ∈ sh{H < h}` iff `α(a) < h`; never `In` within `tol` of the boundary.
pub fn shape_membership(alpha: f64, h: f64, tol: f64) -> Membership {
    if alpha < h - tol {
        Membership::In
    } else if alpha > h + tol {
        Membership::Out
    } else {
        Membership::Indeterminate
    }
}

/// Regular grid of classes over `[−w, w]^n` (`n` = base dimension).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassGrid {
    pub dim: usize,
    pub n: usize,
    pub half_width: f64,
}

impl ClassGrid {
    pub fn new(dim: usize, n: usize, half_width: f64) -> Result<Self> {
        if !(dim == 1 || dim == 2) || n < 3 || !(half_width > 0.0) {
            return Err(invalid("class grid needs dimension 1 or 2, n ≥ 3 and positive width"));
        }
        Ok(ClassGrid { dim, n, half_width })
    }

    pub fn len(&self) -> usize {
        if self.dim == 1 {
            self.n
        } else {
            self.n * self.n
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn axis(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.step()
    }

    pub fn class(&self, k: usize) -> Vec2 {
        if self.dim == 1 {
            [self.axis(k), 0.0]
        } else {
            [self.axis(k % self.n), self.axis(k / self.n)]
        }
    }

    pub fn on_edge(&self, k: usize) -> bool {
        let (i, j) = (k % self.n, k / self.n);
        let e = |t: usize| t == 0 || t + 1 == self.n;
        e(i) || (self.dim == 2 && e(j))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTable {
    pub classes: ClassGrid,
    pub values: Vec<f64>,
    /// Per-entry tolerance.
    pub tol: f64,
}

impl AlphaTable {
    /// Evaluates α over the class grid, warm-starting along a serpentine path.
    pub fn compute(solver: &mut AlphaSolver, classes: ClassGrid) -> Result<Self> {
        let mut values = vec![0.0; classes.len()];
        let rows = if classes.dim == 1 { 1 } else { classes.n };
        for j in 0..rows {
            for t in 0..classes.n {
                let i = if j % 2 == 0 { t } else { classes.n - 1 - t };
                let k = j * classes.n + i;
                values[k] = solver.alpha(classes.class(k))?;
            }
        }
        let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        Ok(AlphaTable { classes, values, tol: 1e-9 * scale })
    }

    pub fn min(&self) -> (f64, Vec2) {
        let (k, v) = self.values.iter().enumerate().fold((0, f64::INFINITY), |(bk, bv), (k, &v)| if v < bv { (k, v) } else { (bk, bv) });
        (v, self.classes.class(k))
    }

    pub fn sublevel(&self, h: f64) -> Vec<bool> {
        self.values.iter().map(|&v| v < h).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityAudit {
    pub pairs: usize,
    pub violations: usize,
    pub worst_excess: f64,
    pub pass: bool,
}

/// Midpoint test `α((a+b)/2) ≤ max(α(a), α(b)) + 2·tol` over sublevel pairs
/// whose midpoint is a class-grid node.
pub fn convexity_audit(table: &AlphaTable, h: f64) -> ConvexityAudit {
    let c = table.classes;
    let inside: Vec<usize> = (0..c.len()).filter(|&k| table.values[k] < h).collect();
    let idx = |k: usize| if c.dim == 1 { (k, 0) } else { (k % c.n, k / c.n) };
    let (mut pairs, mut violations, mut worst) = (0usize, 0usize, f64::NEG_INFINITY);
    for (s, &p) in inside.iter().enumerate() {
        for &q in &inside[s + 1..] {
            let ((i0, j0), (i1, j1)) = (idx(p), idx(q));
            if (i0 + i1) % 2 != 0 || (j0 + j1) % 2 != 0 {
                continue;
            }
            let mid = (j0 + j1) / 2 * c.n + (i0 + i1) / 2;
            let excess = table.values[mid] - table.values[p].max(table.values[q]);
            pairs += 1;
            worst = worst.max(excess);
            if excess > 2.0 * table.tol {
                violations += 1;
            }
        }
    }
    ConvexityAudit { pairs, violations, worst_excess: worst, pass: violations == 0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeResult {
    pub table: AlphaTable,
    pub level: f64,
    pub mask: Vec<bool>,
    /// Boundary of `{α < h}`: marching-squares polylines (two points in 1D).
    pub boundary: Vec<Vec<Vec2>>,
    pub audit: ConvexityAudit,
    pub alpha_min: f64,
    pub alpha_argmin: Vec2,
}

/// Shape `{a | α(a) < h}` on a class grid with its boundary and convexity audit.
pub fn shape_of_domain(solver: &mut AlphaSolver, h: f64, classes: ClassGrid) -> Result<ShapeResult> {
    let table = AlphaTable::compute(solver, classes)?;
    let mask = table.sublevel(h);
    if (0..classes.len()).any(|k| mask[k] && classes.on_edge(k)) {
        return Err(Error::GridTooSmall);
    }
    let boundary = if classes.dim == 1 { level_points(&table, h) } else { marching_squares(&table, h) };
    let audit = convexity_audit(&table, h);
    let (alpha_min, alpha_argmin) = table.min();
    Ok(ShapeResult { table, level: h, mask, boundary, audit, alpha_min, alpha_argmin })
}

fn crossing(a: Vec2, fa: f64, b: Vec2, fb: f64) -> Vec2 {
    let t = fa / (fa - fb);
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn level_points(table: &AlphaTable, h: f64) -> Vec<Vec<Vec2>> {
    let c = table.classes;
    let pts = (0..c.n - 1)
        .filter(|&i| (table.values[i] < h) != (table.values[i + 1] < h))
        .map(|i| crossing(c.class(i), table.values[i] - h, c.class(i + 1), table.values[i + 1] - h))
        .collect();
    vec![pts]
}

/// Level set `α = h` as polylines, chaining marching-squares segments.
pub fn marching_squares(table: &AlphaTable, h: f64) -> Vec<Vec<Vec2>> {
    let c = table.classes;
    let n = c.n;
    let f = |i: usize, j: usize| table.values[j * n + i] - h;
    let p = |i: usize, j: usize| [c.axis(i), c.axis(j)];
    // edges keyed so that neighbouring cells share crossing ids: horizontal
    // edge (i,j)-(i+1,j) is 2·(j·n+i), vertical edge (i,j)-(i,j+1) is 2·(j·n+i)+1
    let mut segs: Vec<(usize, usize)> = Vec::new();
    let mut points: Vec<(usize, Vec2)> = Vec::new();
    let mut point_of = |key: usize, a: (usize, usize), b: (usize, usize)| {
        if !points.iter().any(|&(k, _)| k == key) {
            points.push((key, crossing(p(a.0, a.1), f(a.0, a.1), p(b.0, b.1), f(b.0, b.1))));
        }
        key
    };
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let keys = [2 * (j * n + i), 2 * (j * n + i + 1) + 1, 2 * ((j + 1) * n + i), 2 * (j * n + i) + 1];
            let inside: Vec<bool> = corners.iter().map(|&(a, b)| f(a, b) < 0.0).collect();
            let mut cut = Vec::new();
            for e in 0..4 {
                if inside[e] != inside[(e + 1) % 4] {
                    cut.push(point_of(keys[e], corners[e], corners[(e + 1) % 4]));
                }
            }
            match cut.len() {
                2 => segs.push((cut[0], cut[1])),
                4 => {
                    // saddle cell: resolve by the centre value
                    let centre = 0.25 * corners.iter().map(|&(a, b)| f(a, b)).sum::<f64>();
                    if (centre < 0.0) == inside[0] {
                        segs.push((cut[0], cut[1]));
                        segs.push((cut[2], cut[3]));
                    } else {
                        segs.push((cut[3], cut[0]));
                        segs.push((cut[1], cut[2]));
                    }
                }
                _ => {}
            }
        }
    }
    let lookup = |key: usize| points.iter().find(|&&(k, _)| k == key).map(|&(_, v)| v).expect("crossing");
    let mut used = vec![false; segs.len()];
    let mut out = Vec::new();
    for s in 0..segs.len() {
        if used[s] {
            continue;
        }
        used[s] = true;
        let mut chain = vec![segs[s].0, segs[s].1];
        loop {
            let end = *chain.last().expect("nonempty");
            let next = (0..segs.len()).find(|&t| !used[t] && (segs[t].0 == end || segs[t].1 == end));
            match next {
                Some(t) => {
                    used[t] = true;
                    chain.push(if segs[t].0 == end { segs[t].1 } else { segs[t].0 });
                }
                None => break,
            }
        }
        out.push(chain.into_iter().map(lookup).collect());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealizationOptions {
    pub tau_cells: f64,
    pub radius: usize,
    pub half_width: f64,
    /// Mollification radii in cells, tried in order.
    pub radii_cells: [f64; 4],
}

impl Default for RealizationOptions {
    fn default() -> Self {
        RealizationOptions { tau_cells: 4.0, radius: 9, half_width: 3.0, radii_cells: [2.0, 4.0, 8.0, 16.0] }
    }
}

/// A smooth section of class `a` inside `{H < h}` with its verified energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub section: LagrangianSection,
    pub max_h: f64,
    pub radius: f64,
}

/// Mollified weak KAM solution of `L − a·v`, verified by evaluating `H` on `a + dΨ`.
pub fn section_realization<M>(model: &M, h: f64, a: Vec2, grid: TorusGrid, opts: &RealizationOptions) -> Result<Realization>
where
    M: Lagrangian + Hamiltonian,
{
    let shifted = Shifted::new(model, a, 0.0);
    let g = build_action_graph(&shifted, grid, opts.tau_cells * grid.h(), opts.radius, opts.half_width)?;
    let pair = solve_weak_kam(&g, &shifted, &WeakKamOptions::default())?;
    let mut best = f64::INFINITY;
    for &cells in &opts.radii_cells {
        let s = cells * grid.h();
        let section = LagrangianSection::new(a, mollify(&pair.u_minus, s));
        let max_h = section_max_h(model, &section);
        if max_h < h {
            return Ok(Realization { section, max_h, radius: s });
        }
        best = best.min(max_h);
    }
    Err(Error::VerificationFailed { achieved_max: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aubry::{mather_lp, phase_values, PhaseGrid, TransferChain};
    use crate::grid::{FiberGrid, ScalarField};
    use crate::model::QuadraticModel;

    #[test]
    fn flat_alpha_is_quadratic() {
        let grid = TorusGrid::square(64).unwrap();
        let mut solver = AlphaSolver::new(&QuadraticModel::flat(), grid, &AlphaOptions::default()).unwrap();
        for a in [[0.0, 0.0], [0.5, 0.0], [0.3, -0.7], [1.2, 0.0], [0.8, 0.8]] {
            let v = solver.alpha(a).unwrap();
            let exact = math::dot(a, a);
            assert!((v - exact).abs() <= 0.02 * (1.0 + exact), "a={a:?}: {v} vs {exact}");
            // reversibility: the graph is symmetric under v ↦ −v
            assert!((solver.alpha([-a[0], -a[1]]).unwrap() - v).abs() < 1e-12);
        }
        let shifted = Shifted::new(QuadraticModel::flat(), [0.0, 0.0], 0.3);
        let a = [0.4, 0.1];
        let plain = alpha_function(&QuadraticModel::flat(), a, grid, &AlphaOptions::default()).unwrap();
        let lowered = alpha_function(&shifted, a, grid, &AlphaOptions::default()).unwrap();
        assert!((lowered - plain - 0.3).abs() < 1e-9);
    }

    #[test]
    fn hamex_alpha_at_zero() {
        let grid = TorusGrid::square(32).unwrap();
        let opts = AlphaOptions { tau_cells: 4.0, radius: 9, half_width: 3.0 };
        let v = alpha_function(&QuadraticModel::hamex(), [0.0, 0.0], grid, &opts).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
        assert_eq!(shape_membership(v, 1.0, 1e-6), Membership::Indeterminate);
    }

    #[test]
    fn membership_examples() {
        assert_eq!(shape_membership(0.25, 1.0, 0.02), Membership::In);
        assert_ne!(shape_membership(1.0, 1.0, 0.02), Membership::In);
        assert_eq!(shape_membership(1.3, 1.0, 0.02), Membership::Out);
    }

    #[test]
    fn flat_shape_is_the_unit_disc() {
        let grid = TorusGrid::square(32).unwrap();
        let opts = AlphaOptions { tau_cells: 3.0, radius: 6, half_width: 3.0 };
        let mut solver = AlphaSolver::new(&QuadraticModel::flat(), grid, &opts).unwrap();
        let shape = shape_of_domain(&mut solver, 1.0, ClassGrid::new(2, 17, 1.5).unwrap()).unwrap();
        assert!(shape.audit.pass && shape.audit.pairs > 100);
        assert_eq!(shape.boundary.len(), 1);
        let ring = &shape.boundary[0];
        assert_eq!(ring.first(), ring.last());
        let dev = ring.iter().map(|p| (math::norm(*p) - 1.0).abs()).fold(0.0, f64::max);
        assert!(dev <= 0.05, "radial deviation {dev}");
        assert!(shape.alpha_min.abs() < 1e-9 && math::norm(shape.alpha_argmin) < 1e-12);
        // monotone in the level
        let lower = shape.table.sublevel(0.5);
        assert!(lower.iter().zip(&shape.mask).all(|(a, b)| !a || *b));

        let mut solver = AlphaSolver::new(&QuadraticModel::flat(), grid, &opts).unwrap();
        assert_eq!(shape_of_domain(&mut solver, 1.0, ClassGrid::new(2, 9, 0.8).unwrap()), Err(Error::GridTooSmall));
    }

    #[test]
    fn circle_shape_is_an_interval() {
        let grid = TorusGrid::circle(64).unwrap();
        let mut solver = AlphaSolver::new(&QuadraticModel::flat_half(1), grid, &AlphaOptions::default()).unwrap();
        // L = v²/2 gives α(a) = a²/2
        let shape = shape_of_domain(&mut solver, 0.5, ClassGrid::new(1, 41, 2.0).unwrap()).unwrap();
        let ends = &shape.boundary[0];
        assert_eq!(ends.len(), 2);
        assert!((ends[0][0] + 1.0).abs() < 0.02 && (ends[1][0] - 1.0).abs() < 0.02, "{ends:?}");
        assert!(shape.audit.pass);
    }

    #[test]
    fn marching_squares_on_a_known_level() {
        let classes = ClassGrid::new(2, 21, 2.0).unwrap();
        let values = (0..classes.len()).map(|k| {
            let a = classes.class(k);
            (a[0] / 1.5).powi(2) + a[1] * a[1]
        }).collect();
        let table = AlphaTable { classes, values, tol: 0.0 };
        let rings = marching_squares(&table, 1.0);
        assert_eq!(rings.len(), 1);
        for p in &rings[0] {
            let r = (p[0] / 1.5).powi(2) + p[1] * p[1];
            assert!((r - 1.0).abs() < 0.03, "{p:?}");
        }
    }

    #[test]
    fn alpha_dominates_the_mather_lower_bound() {
        // −min ∫L_a dμ over invariant measures is a lower bound for α(a)
        let grid = TorusGrid::circle(64).unwrap();
        let a = [0.4, 0.0];
        let m = Shifted::new(QuadraticModel::flat_half(1), a, 0.0);
        let alpha = alpha_function(&QuadraticModel::flat_half(1), a, grid, &AlphaOptions::default()).unwrap();
        let phase = PhaseGrid::new(grid, FiberGrid::new(1, 2.0, 9).unwrap()).unwrap();
        let chain = TransferChain::build(&m, phase, 0.5 * grid.h()).unwrap();
        let lv = phase_values(&m, &chain.phase);
        let sol = mather_lp(&chain, &lv, 1e-9).unwrap();
        assert!(alpha >= -sol.optimum - 1e-9, "{alpha} vs {}", -sol.optimum);
        assert!((alpha - 0.08).abs() < 0.01);
    }

    #[test]
    fn realizations() {
        let flat = QuadraticModel::flat();
        let grid = TorusGrid::square(16).unwrap();
        let r = section_realization(&flat, 1.0, [0.5, 0.0], grid, &RealizationOptions::default()).unwrap();
        assert!((r.max_h - 0.25).abs() < 1e-9);

        let hamex = QuadraticModel::hamex();
        let grid = TorusGrid::square(32).unwrap();
        let r = section_realization(&hamex, 1.1, [0.0, 0.0], grid, &RealizationOptions::default()).unwrap();
        assert!(r.max_h < 1.1);
        assert!(math::norm(r.section.liouville_class()) < 1e-12);
        let fail = section_realization(&hamex, 1.0, [0.0, 0.0], grid, &RealizationOptions::default());
        assert!(matches!(fail, Err(Error::VerificationFailed { achieved_max }) if achieved_max >= 1.0 - 1e-9));
    }

    #[test]
    fn cosine_family_touches_the_level() {
        // (1−t)² sin²x₁ + cos²x₁ ≤ 1 with equality exactly where sin x₁ = 0
        let grid = TorusGrid::square(32).unwrap();
        let hamex = QuadraticModel::hamex();
        for t in [0.25, 0.5, 0.75, 1.0] {
            let u = ScalarField::from_fn(grid, |x| -t * math::cos(x[0]));
            // exact differential instead of grid differences
            let max_h = (0..grid.len())
                .map(|k| {
                    let x = grid.coord(k);
                    Hamiltonian::value(&hamex, x, [t * math::sin(x[0]), 0.0])
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((max_h - 1.0).abs() < 1e-12);
            let section = LagrangianSection::new([0.0, 0.0], u);
            assert!(section_max_h(&hamex, &section) <= 1.0 + 1e-12);
        }
    }
}
