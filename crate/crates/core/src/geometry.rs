//! Legendre duality, energy, Hamiltonian flows and Lagrangian sections.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::grid::{FiberGrid, ScalarField, TorusGrid};
use crate::math::{self, Vec2};
use crate::model::{Hamiltonian, Lagrangian};

/// Convexity threshold for sampled fiber Hessians.
const MIN_CURVATURE: f64 = 1e-6;

fn solve2(m: [[f64; 2]; 2], r: Vec2, dim: usize) -> Option<Vec2> {
    if dim == 1 {
        return (m[0][0].abs() > 1e-300).then(|| [r[0] / m[0][0], 0.0]);
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 {
        return None;
    }
    Some([
        (m[1][1] * r[0] - m[0][1] * r[1]) / det,
        (m[0][0] * r[1] - m[1][0] * r[0]) / det,
    ])
}

fn inverse2(m: [[f64; 2]; 2], dim: usize) -> [[f64; 2]; 2] {
    if dim == 1 {
        return [[1.0 / m[0][0], 0.0], [0.0, 0.0]];
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

fn min_eigenvalue(m: [[f64; 2]; 2], dim: usize) -> f64 {
    if dim == 1 {
        m[0][0]
    } else {
        math::sym_eigenvalues(m).0
    }
}

/// Largest sampled value of `obj` on the fiber grid, its location and index.
fn grid_argmax(fiber: &FiberGrid, obj: impl Fn(Vec2) -> f64) -> (f64, Vec2, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for k in 0..fiber.len() {
        let val = obj(fiber.point(k));
        if val > best {
            best = val;
            arg = k;
        }
    }
    (best, fiber.point(arg), arg)
}

/// `max_w (y·w − f(w))` over the fiber box: grid argmax, then Newton on `∇f(w) = y`.
///
/// Returns `(value, argmax)`, or the offending edge point when the grid
/// maximizer touches the box boundary.
fn conjugate(
    dim: usize,
    fiber: &FiberGrid,
    y: Vec2,
    f: impl Fn(Vec2) -> f64,
    grad: impl Fn(Vec2) -> Vec2,
    hess: impl Fn(Vec2) -> [[f64; 2]; 2],
) -> core::result::Result<(f64, Vec2), Vec2> {
    let obj = |w: Vec2| math::dot(y, w) - f(w);
    let (best, w0, arg) = grid_argmax(fiber, obj);
    if fiber.on_edge(arg) {
        return Err(w0);
    }
    let mut w = w0;
    for _ in 0..20 {
        let g = math::sub(grad(w), y);
        let Some(step) = solve2(hess(w), g, dim) else { break };
        w = math::sub(w, step);
        if math::norm(step) < 1e-13 {
            break;
        }
    }
    let limit = fiber.half_width();
    let inside = w[0].abs() <= limit && w[1].abs() <= limit;
    let refined = obj(w);
    if inside && refined.is_finite() && refined >= best - 1e-12 {
        Ok((refined, w))
    } else {
        Ok((best, w0))
    }
}

fn sample_points(dim: usize) -> Vec<Vec2> {
    let grid = TorusGrid::new(dim, [8, 8]).expect("8 nodes per axis is valid");
    (0..grid.len()).map(|k| grid.coord(k)).collect()
}

/// The Hamiltonian of a Lagrangian, computed by fiberwise conjugation.
pub struct ConjugateHamiltonian<L> {
    lagrangian: L,
    fiber: FiberGrid,
}

impl<L: Lagrangian> ConjugateHamiltonian<L> {
    /// `H(x,p)` and the maximizing velocity `ℓ⁻¹(x,p)`.
    pub fn try_conjugate(&self, x: Vec2, p: Vec2) -> Result<(f64, Vec2)> {
        let l = &self.lagrangian;
        conjugate(
            l.dim(),
            &self.fiber,
            p,
            |v| l.value(x, v),
            |v| l.grad_v(x, v),
            |v| l.hess_v(x, v),
        )
        .map_err(|_| Error::ArgmaxOnBoundary { x, p })
    }

    pub fn try_value(&self, x: Vec2, p: Vec2) -> Result<f64> {
        self.try_conjugate(x, p).map(|(h, _)| h)
    }

    pub fn lagrangian(&self) -> &L {
        &self.lagrangian
    }

    pub fn fiber(&self) -> &FiberGrid {
        &self.fiber
    }

    fn argmax(&self, x: Vec2, p: Vec2) -> Vec2 {
        match self.try_conjugate(x, p) {
            Ok((_, v)) => v,
            Err(_) => grid_argmax(&self.fiber, |v| math::dot(p, v) - self.lagrangian.value(x, v)).1,
        }
    }
}

impl<L: Lagrangian> Hamiltonian for ConjugateHamiltonian<L> {
    fn dim(&self) -> usize {
        self.lagrangian.dim()
    }

    /// Falls back to the (lower-bound) grid maximum outside the certified box.
    fn value(&self, x: Vec2, p: Vec2) -> f64 {
        match self.try_conjugate(x, p) {
            Ok((h, _)) => h,
            Err(_) => grid_argmax(&self.fiber, |v| math::dot(p, v) - self.lagrangian.value(x, v)).0,
        }
    }

    fn grad_p(&self, x: Vec2, p: Vec2) -> Vec2 {
        self.argmax(x, p)
    }

    fn grad_x(&self, x: Vec2, p: Vec2) -> Vec2 {
        let v = self.argmax(x, p);
        math::scale(-1.0, self.lagrangian.grad_x(x, v))
    }

    fn hess_p(&self, x: Vec2, p: Vec2) -> [[f64; 2]; 2] {
        let v = self.argmax(x, p);
        inverse2(self.lagrangian.hess_v(x, v), self.dim())
    }
}

/// The Lagrangian of a Hamiltonian, computed by fiberwise conjugation.
pub struct ConjugateLagrangian<H> {
    hamiltonian: H,
    fiber: FiberGrid,
}

impl<H: Hamiltonian> ConjugateLagrangian<H> {
    pub fn try_conjugate(&self, x: Vec2, v: Vec2) -> Result<(f64, Vec2)> {
        let h = &self.hamiltonian;
        conjugate(
            h.dim(),
            &self.fiber,
            v,
            |p| h.value(x, p),
            |p| h.grad_p(x, p),
            |p| h.hess_p(x, p),
        )
        .map_err(|p| Error::ArgmaxOnBoundary { x, p })
    }
}

impl<H: Hamiltonian> Lagrangian for ConjugateLagrangian<H> {
    fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    fn value(&self, x: Vec2, v: Vec2) -> f64 {
        match self.try_conjugate(x, v) {
            Ok((l, _)) => l,
            Err(_) => f64::INFINITY,
        }
    }
}

fn check_lagrangian_convexity<L: Lagrangian>(l: &L, fiber: &FiberGrid) -> Result<()> {
    let dim = l.dim();
    for x in sample_points(dim) {
        for k in 0..fiber.len() {
            let v = fiber.point(k);
            let e = min_eigenvalue(l.hess_v(x, v), dim);
            if !(e > MIN_CURVATURE) {
                return Err(Error::ConvexityViolation { x, v, min_eigenvalue: e });
            }
        }
    }
    Ok(())
}

/// `H(x,p) = max_v (p·v − L(x,v))` over the fiber box.
///
/// The fiber Hessian of `L` is sampled first; individual evaluations report
/// [`Error::ArgmaxOnBoundary`] through [`ConjugateHamiltonian::try_value`].
pub fn legendre_transform<L: Lagrangian>(l: L, fiber: FiberGrid) -> Result<ConjugateHamiltonian<L>> {
    if fiber.dim() != l.dim() {
        return Err(invalid("fiber and model dimensions differ"));
    }
    check_lagrangian_convexity(&l, &fiber)?;
    Ok(ConjugateHamiltonian { lagrangian: l, fiber })
}

/// `L(x,v) = max_p (p·v − H(x,p))` over the fiber box.
pub fn inverse_conjugation<H: Hamiltonian>(h: H, fiber: FiberGrid) -> Result<ConjugateLagrangian<H>> {
    if fiber.dim() != h.dim() {
        return Err(invalid("fiber and model dimensions differ"));
    }
    let cert = convexity_check(&h, &TorusGrid::new(h.dim(), [8, 8])?, &fiber);
    if !cert.pass {
        return Err(Error::ConvexityViolation {
            x: cert.x,
            v: cert.p,
            min_eigenvalue: cert.min_eigenvalue,
        });
    }
    Ok(ConjugateLagrangian { hamiltonian: h, fiber })
}

/// The Legendre map `ℓ(x,v) = ∂L/∂v(x,v)`.
pub fn legendre_map<L: Lagrangian + ?Sized>(l: &L, x: Vec2, v: Vec2) -> Vec2 {
    l.grad_v(x, v)
}

/// `E(x,v) = ∂L/∂v(x,v)·v − L(x,v)`, for `|v| ≤ half_width`.
pub fn energy<L: Lagrangian + ?Sized>(l: &L, x: Vec2, v: Vec2, half_width: f64) -> Result<f64> {
    let speed = v[0].abs().max(v[1].abs());
    if speed > half_width {
        return Err(Error::OutOfBox { speed, half_width });
    }
    Ok(math::dot(l.grad_v(x, v), v) - l.value(x, v))
}

/// Sampled phase-space trajectory; base coordinates are reduced mod 2π.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub points: Vec<(Vec2, Vec2)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> (Vec2, Vec2) {
        *self.points.last().expect("trajectories hold their initial point")
    }
}

/// One classical fourth-order Runge–Kutta step of `ż = f(z)` for `z = (x, y)`.
#[inline]
pub fn rk4_step(f: &impl Fn(Vec2, Vec2) -> (Vec2, Vec2), x: Vec2, y: Vec2, dt: f64) -> (Vec2, Vec2) {
    let (a1, b1) = f(x, y);
    let (a2, b2) = f(math::add(x, math::scale(0.5 * dt, a1)), math::add(y, math::scale(0.5 * dt, b1)));
    let (a3, b3) = f(math::add(x, math::scale(0.5 * dt, a2)), math::add(y, math::scale(0.5 * dt, b2)));
    let (a4, b4) = f(math::add(x, math::scale(dt, a3)), math::add(y, math::scale(dt, b3)));
    let comb = |z: Vec2, k1: Vec2, k2: Vec2, k3: Vec2, k4: Vec2| {
        let s = [
            k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0],
            k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1],
        ];
        math::add(z, math::scale(dt / 6.0, s))
    };
    (comb(x, a1, a2, a3, a4), comb(y, b1, b2, b3, b4))
}

/// One RK4 step of an autonomous base vector field.
#[inline]
pub fn rk4_field_step(f: &impl Fn(Vec2) -> Vec2, x: Vec2, dt: f64) -> Vec2 {
    let k1 = f(x);
    let k2 = f(math::add(x, math::scale(0.5 * dt, k1)));
    let k3 = f(math::add(x, math::scale(0.5 * dt, k2)));
    let k4 = f(math::add(x, math::scale(dt, k3)));
    let s = [
        k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0],
        k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1],
    ];
    math::add(x, math::scale(dt / 6.0, s))
}

fn reduce(dim: usize, x: Vec2) -> Vec2 {
    if dim == 1 {
        [math::wrap_angle(x[0]), 0.0]
    } else {
        [math::wrap_angle(x[0]), math::wrap_angle(x[1])]
    }
}

/// Integrates `ẋ = ∂H/∂p, ṗ = −∂H/∂x` with RK4, monitoring `|H(z(t)) − H(z₀)| ≤ tol_e`.
///
/// A negative `t_end` integrates backward in time.
pub fn hamiltonian_flow<H: Hamiltonian + ?Sized>(
    h: &H,
    z0: (Vec2, Vec2),
    t_end: f64,
    dt: f64,
    tol_e: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt <= 1e-2) {
        return Err(invalid("flow step must lie in (0, 1e-2]"));
    }
    let steps = math::ceil(t_end.abs() / dt - 1e-9).max(0.0) as usize;
    let sdt = if t_end < 0.0 { -dt } else { dt };
    let dim = h.dim();
    let rhs = |x: Vec2, p: Vec2| (h.grad_p(x, p), math::scale(-1.0, h.grad_x(x, p)));
    let e0 = h.value(z0.0, z0.1);
    let (mut x, mut p) = (reduce(dim, z0.0), z0.1);
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    times.push(0.0);
    points.push((x, p));
    let mut worst = 0.0f64;
    for s in 1..=steps {
        let (nx, np) = rk4_step(&rhs, x, p, sdt);
        x = reduce(dim, nx);
        p = np;
        worst = worst.max((h.value(x, p) - e0).abs());
        if !(worst <= tol_e) {
            return Err(Error::EnergyDrift { drift: worst, tolerance: tol_e });
        }
        times.push(s as f64 * sdt);
        points.push((x, p));
    }
    Ok(Trajectory { dt, times, points })
}

/// A section `x ↦ a + dg(x)` of the cotangent bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianSection {
    pub class: Vec2,
    pub potential: ScalarField,
}

impl LagrangianSection {
    pub fn new(class: Vec2, potential: ScalarField) -> Self {
        LagrangianSection { class, potential }
    }

    pub fn zero(grid: TorusGrid) -> Self {
        LagrangianSection { class: [0.0; 2], potential: ScalarField::constant(grid, 0.0) }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.potential.grid()
    }

    /// `a + dg` at a node, `dg` by central differences.
    pub fn covector(&self, idx: usize) -> Vec2 {
        math::add(self.class, self.potential.gradient(idx))
    }

    /// `a` plus the grid mean of `dg`; equals `a` up to rounding for periodic `g`.
    pub fn liouville_class(&self) -> Vec2 {
        let n = self.grid().len();
        let mut s = [0.0; 2];
        for k in 0..n {
            s = math::add(s, self.potential.gradient(k));
        }
        math::add(self.class, math::scale(1.0 / n as f64, s))
    }
}

/// `x ↦ ∂H/∂p(x, a + dg(x))` at every node; fails where the field vanishes.
pub fn characteristic_field<H: Hamiltonian + ?Sized>(
    h: &H,
    section: &LagrangianSection,
    tol: f64,
) -> Result<Vec<Vec2>> {
    let grid = section.grid();
    let mut out = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let v = h.grad_p(grid.coord(k), section.covector(k));
        let magnitude = math::norm(v);
        if magnitude < tol {
            return Err(Error::VanishingField { node: k, magnitude });
        }
        out.push(v);
    }
    Ok(out)
}

/// Minimum sampled fiber-Hessian eigenvalue of a Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityCertificate {
    pub min_eigenvalue: f64,
    pub x: Vec2,
    pub p: Vec2,
    pub pass: bool,
}

pub fn convexity_check<H: Hamiltonian + ?Sized>(
    h: &H,
    grid: &TorusGrid,
    fiber: &FiberGrid,
) -> ConvexityCertificate {
    let dim = h.dim();
    let mut cert =
        ConvexityCertificate { min_eigenvalue: f64::INFINITY, x: [0.0; 2], p: [0.0; 2], pass: false };
    for i in 0..grid.len() {
        let x = grid.coord(i);
        for k in 0..fiber.len() {
            let p = fiber.point(k);
            let e = min_eigenvalue(h.hess_p(x, p), dim);
            if e < cert.min_eigenvalue {
                cert.min_eigenvalue = e;
                cert.x = x;
                cert.p = p;
            }
        }
    }
    cert.pass = cert.min_eigenvalue > MIN_CURVATURE;
    cert
}

/// `H(x, a + dg(x))` at every node.
pub fn section_energies<H: Hamiltonian + ?Sized>(h: &H, section: &LagrangianSection) -> Vec<f64> {
    let grid = section.grid();
    (0..grid.len()).map(|k| h.value(grid.coord(k), section.covector(k))).collect()
}

/// `max_x H(x, a + dg(x))` over grid nodes.
pub fn section_max_h<H: Hamiltonian + ?Sized>(h: &H, section: &LagrangianSection) -> f64 {
    section_energies(h, section).into_iter().fold(f64::NEG_INFINITY, f64::max)
}
