//! Tonelli Lagrangians, their Hamiltonians, and the bundled magnetic models.
//!
//! Derivatives default to central finite differences; models with closed forms
//! override them.

use crate::math::{self, Vec2};

const FD_GRAD: f64 = 1e-6;
const FD_HESS: f64 = 1e-4;

fn fd_grad(dim: usize, f: impl Fn(Vec2) -> f64, at: Vec2) -> Vec2 {
    let mut g = [0.0; 2];
    for (i, gi) in g.iter_mut().enumerate().take(dim) {
        let mut a = at;
        let mut b = at;
        a[i] += FD_GRAD;
        b[i] -= FD_GRAD;
        *gi = (f(a) - f(b)) / (2.0 * FD_GRAD);
    }
    g
}

fn fd_hess(dim: usize, f: impl Fn(Vec2) -> f64, at: Vec2) -> [[f64; 2]; 2] {
    let e = FD_HESS;
    let f0 = f(at);
    let shift = |i: usize, si: f64, j: usize, sj: f64| {
        let mut p = at;
        p[i] += si;
        p[j] += sj;
        f(p)
    };
    let mut h = [[0.0; 2]; 2];
    for i in 0..dim {
        h[i][i] = (shift(i, e, i, 0.0) - 2.0 * f0 + shift(i, -e, i, 0.0)) / (e * e);
    }
    if dim == 2 {
        let off = (shift(0, e, 1, e) - shift(0, e, 1, -e) - shift(0, -e, 1, e)
            + shift(0, -e, 1, -e))
            / (4.0 * e * e);
        h[0][1] = off;
        h[1][0] = off;
    }
    h
}

/// A fiberwise convex, superlinear Lagrangian on the tangent bundle of T¹ or T².
pub trait Lagrangian {
    fn dim(&self) -> usize;

    fn value(&self, x: Vec2, v: Vec2) -> f64;

    fn grad_v(&self, x: Vec2, v: Vec2) -> Vec2 {
        fd_grad(self.dim(), |w| self.value(x, w), v)
    }

    fn grad_x(&self, x: Vec2, v: Vec2) -> Vec2 {
        fd_grad(self.dim(), |y| self.value(y, v), x)
    }

    fn hess_v(&self, x: Vec2, v: Vec2) -> [[f64; 2]; 2] {
        fd_hess(self.dim(), |w| self.value(x, w), v)
    }
}

/// A fiberwise convex Hamiltonian on the cotangent bundle of T¹ or T².
pub trait Hamiltonian {
    fn dim(&self) -> usize;

    fn value(&self, x: Vec2, p: Vec2) -> f64;

    fn grad_p(&self, x: Vec2, p: Vec2) -> Vec2 {
        fd_grad(self.dim(), |q| self.value(x, q), p)
    }

    fn grad_x(&self, x: Vec2, p: Vec2) -> Vec2 {
        fd_grad(self.dim(), |y| self.value(y, p), x)
    }

    fn hess_p(&self, x: Vec2, p: Vec2) -> [[f64; 2]; 2] {
        fd_hess(self.dim(), |q| self.value(x, q), p)
    }
}

impl<T: Lagrangian + ?Sized> Lagrangian for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: Vec2, v: Vec2) -> f64 {
        (**self).value(x, v)
    }
    fn grad_v(&self, x: Vec2, v: Vec2) -> Vec2 {
        (**self).grad_v(x, v)
    }
    fn grad_x(&self, x: Vec2, v: Vec2) -> Vec2 {
        (**self).grad_x(x, v)
    }
    fn hess_v(&self, x: Vec2, v: Vec2) -> [[f64; 2]; 2] {
        (**self).hess_v(x, v)
    }
}

impl<T: Hamiltonian + ?Sized> Hamiltonian for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: Vec2, p: Vec2) -> f64 {
        (**self).value(x, p)
    }
    fn grad_p(&self, x: Vec2, p: Vec2) -> Vec2 {
        (**self).grad_p(x, p)
    }
    fn grad_x(&self, x: Vec2, p: Vec2) -> Vec2 {
        (**self).grad_x(x, p)
    }
    fn hess_p(&self, x: Vec2, p: Vec2) -> [[f64; 2]; 2] {
        (**self).hess_p(x, p)
    }
}

/// Magnetic potentials `A(x)` used by the bundled models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VectorPotential {
    Zero,
    /// `A = (sin x₁, cos x₁)`.
    Hamex,
    /// The unit field `(sin²x₁, 1)/√(1 + sin⁴x₁)`.
    Suspension,
    Constant(Vec2),
}

impl VectorPotential {
    pub fn eval(&self, x: Vec2) -> Vec2 {
        match *self {
            VectorPotential::Zero => [0.0, 0.0],
            VectorPotential::Hamex => [math::sin(x[0]), math::cos(x[0])],
            VectorPotential::Suspension => {
                let s = math::sin(x[0]);
                let q = s * s;
                let r = math::sqrt(1.0 + q * q);
                [q / r, 1.0 / r]
            }
            VectorPotential::Constant(c) => c,
        }
    }

    /// Derivative of `A` along `x₁` (every bundled potential is independent of `x₂`).
    pub fn d1(&self, x: Vec2) -> Vec2 {
        match *self {
            VectorPotential::Zero | VectorPotential::Constant(_) => [0.0, 0.0],
            VectorPotential::Hamex => [math::cos(x[0]), -math::sin(x[0])],
            VectorPotential::Suspension => {
                let s = math::sin(x[0]);
                let q = s * s;
                let dq = 2.0 * s * math::cos(x[0]);
                let r = math::sqrt(1.0 + q * q);
                let r3 = r * r * r;
                [dq / r3, -q * dq / r3]
            }
        }
    }
}

/// `L(x,v) = A(x)·v + m|v|²/2 − κ`, with Hamiltonian `H(x,p) = |p − A(x)|²/(2m) + κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticModel {
    pub dim: usize,
    pub mass: f64,
    pub potential: VectorPotential,
    pub kappa: f64,
}

impl QuadraticModel {
    /// `H = (p₁ − sin x₁)² + (p₂ − cos x₁)²` on T².
    pub fn hamex() -> Self {
        QuadraticModel { dim: 2, mass: 0.5, potential: VectorPotential::Hamex, kappa: 0.0 }
    }

    /// `H = |p − X(x)|²` with `X` the unit suspension field.
    pub fn twotwo() -> Self {
        QuadraticModel { dim: 2, mass: 0.5, potential: VectorPotential::Suspension, kappa: 0.0 }
    }

    /// `H = |p|²` on T², so `L = |v|²/4`.
    pub fn flat() -> Self {
        QuadraticModel { dim: 2, mass: 0.5, potential: VectorPotential::Zero, kappa: 0.0 }
    }

    /// `L = |v|²/2` on T² (or T¹ with `dim = 1`).
    pub fn flat_half(dim: usize) -> Self {
        QuadraticModel { dim, mass: 1.0, potential: VectorPotential::Zero, kappa: 0.0 }
    }

    fn a(&self, x: Vec2) -> Vec2 {
        let a = self.potential.eval(x);
        if self.dim == 1 {
            [a[0], 0.0]
        } else {
            a
        }
    }

    fn mask(&self, v: Vec2) -> Vec2 {
        if self.dim == 1 {
            [v[0], 0.0]
        } else {
            v
        }
    }

    fn id(&self, s: f64) -> [[f64; 2]; 2] {
        if self.dim == 1 {
            [[s, 0.0], [0.0, 0.0]]
        } else {
            [[s, 0.0], [0.0, s]]
        }
    }
}

impl Lagrangian for QuadraticModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: Vec2, v: Vec2) -> f64 {
        let v = self.mask(v);
        math::dot(self.a(x), v) + 0.5 * self.mass * math::dot(v, v) - self.kappa
    }

    fn grad_v(&self, x: Vec2, v: Vec2) -> Vec2 {
        math::add(self.a(x), math::scale(self.mass, self.mask(v)))
    }

    fn grad_x(&self, x: Vec2, v: Vec2) -> Vec2 {
        [math::dot(self.mask(self.potential.d1(x)), self.mask(v)), 0.0]
    }

    fn hess_v(&self, _x: Vec2, _v: Vec2) -> [[f64; 2]; 2] {
        self.id(self.mass)
    }
}

impl Hamiltonian for QuadraticModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: Vec2, p: Vec2) -> f64 {
        let q = math::sub(self.mask(p), self.a(x));
        math::dot(q, q) / (2.0 * self.mass) + self.kappa
    }

    fn grad_p(&self, x: Vec2, p: Vec2) -> Vec2 {
        math::scale(1.0 / self.mass, math::sub(self.mask(p), self.a(x)))
    }

    fn grad_x(&self, x: Vec2, p: Vec2) -> Vec2 {
        let q = math::sub(self.mask(p), self.a(x));
        [-math::dot(q, self.mask(self.potential.d1(x))) / self.mass, 0.0]
    }

    fn hess_p(&self, _x: Vec2, _p: Vec2) -> [[f64; 2]; 2] {
        self.id(1.0 / self.mass)
    }
}

/// `L_a(x,v) = L(x,v) − a·v − κ` together with `H_a(x,p) = H(x, p + a) + κ`.
///
/// The class shift `a` turns critical values into Mather's α-function; the
/// constant `κ` shifts every critical value by exactly `κ`.
#[derive(Debug, Clone, Copy)]
pub struct Shifted<M> {
    pub inner: M,
    pub class: Vec2,
    pub kappa: f64,
}

impl<M> Shifted<M> {
    pub fn new(inner: M, class: Vec2, kappa: f64) -> Self {
        Shifted { inner, class, kappa }
    }
}

impl<M: Lagrangian> Lagrangian for Shifted<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: Vec2, v: Vec2) -> f64 {
        self.inner.value(x, v) - math::dot(self.class, v) - self.kappa
    }
    fn grad_v(&self, x: Vec2, v: Vec2) -> Vec2 {
        math::sub(self.inner.grad_v(x, v), self.class)
    }
    fn grad_x(&self, x: Vec2, v: Vec2) -> Vec2 {
        self.inner.grad_x(x, v)
    }
    fn hess_v(&self, x: Vec2, v: Vec2) -> [[f64; 2]; 2] {
        self.inner.hess_v(x, v)
    }
}

impl<M: Hamiltonian> Hamiltonian for Shifted<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: Vec2, p: Vec2) -> f64 {
        self.inner.value(x, math::add(p, self.class)) + self.kappa
    }
    fn grad_p(&self, x: Vec2, p: Vec2) -> Vec2 {
        self.inner.grad_p(x, math::add(p, self.class))
    }
    fn grad_x(&self, x: Vec2, p: Vec2) -> Vec2 {
        self.inner.grad_x(x, math::add(p, self.class))
    }
    fn hess_p(&self, x: Vec2, p: Vec2) -> [[f64; 2]; 2] {
        self.inner.hess_p(x, math::add(p, self.class))
    }
}

/// A Lagrangian given by a closure; derivatives by finite differences.
#[derive(Clone, Copy)]
pub struct FnLagrangian<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(Vec2, Vec2) -> f64> Lagrangian for FnLagrangian<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: Vec2, v: Vec2) -> f64 {
        (self.f)(x, v)
    }
}

/// A Hamiltonian given by a closure; derivatives by finite differences.
#[derive(Clone, Copy)]
pub struct FnHamiltonian<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(Vec2, Vec2) -> f64> Hamiltonian for FnHamiltonian<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: Vec2, p: Vec2) -> f64 {
        (self.f)(x, p)
    }
}
