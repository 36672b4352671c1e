//! Generating functions quadratic at infinity and their homological minimax
//! graph selector, with periodic mollification.

use alloc::vec;
use alloc::vec::Vec;

use crate::aubry::NodeSetMask;
use crate::error::{invalid, Error, Result};
use crate::geometry::LagrangianSection;
use crate::grid::{ScalarField, TorusGrid};
use crate::math::{self, Vec2};

/// Trigonometric polynomial `c + Σ aⱼ cos(kⱼ·x) + bⱼ sin(kⱼ·x)` on the torus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrigPoly {
    pub constant: f64,
    pub modes: Vec<([i32; 2], f64, f64)>,
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        TrigPoly { constant: c, modes: Vec::new() }
    }

    pub fn value(&self, x: Vec2) -> f64 {
        self.modes.iter().fold(self.constant, |acc, &(k, a, b)| {
            let t = k[0] as f64 * x[0] + k[1] as f64 * x[1];
            acc + a * math::cos(t) + b * math::sin(t)
        })
    }

    pub fn grad(&self, x: Vec2) -> Vec2 {
        self.modes.iter().fold([0.0, 0.0], |acc, &(k, a, b)| {
            let t = k[0] as f64 * x[0] + k[1] as f64 * x[1];
            let d = -a * math::sin(t) + b * math::cos(t);
            [acc[0] + d * k[0] as f64, acc[1] + d * k[1] as f64]
        })
    }
}

/// `b(x) · ξ^power · g(ξ)` with the compactly supported bump `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpTerm {
    pub coefficient: TrigPoly,
    pub power: [u32; 2],
}

/// `S(x,ξ) = Q(ξ) + f(x) + Σ bⱼ(x) φⱼ(ξ)` with a constant diagonal form `Q` and
/// every `φⱼ` supported in `|ξ| ≤ ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gfqi {
    k: usize,
    q: [f64; 2],
    rho: f64,
    pub shift: TrigPoly,
    pub terms: Vec<BumpTerm>,
}

/// `g(ξ) = exp(1 − 1/(1 − |ξ|²/ρ²))` and its gradient.
fn bump(xi: Vec2, rho: f64) -> (f64, Vec2) {
    let u = (xi[0] * xi[0] + xi[1] * xi[1]) / (rho * rho);
    if u >= 1.0 {
        return (0.0, [0.0, 0.0]);
    }
    let g = math::exp(1.0 - 1.0 / (1.0 - u));
    let s = -2.0 * g / (rho * rho * (1.0 - u) * (1.0 - u));
    (g, [s * xi[0], s * xi[1]])
}

fn monomial(xi: Vec2, p: [u32; 2]) -> (f64, Vec2) {
    let pw = |v: f64, e: u32| if e == 0 { 1.0 } else { libm::pow(v, e as f64) };
    let d = |v: f64, e: u32| if e == 0 { 0.0 } else { e as f64 * pw(v, e - 1) };
    let (a, b) = (pw(xi[0], p[0]), pw(xi[1], p[1]));
    (a * b, [d(xi[0], p[0]) * b, a * d(xi[1], p[1])])
}

impl Gfqi {
    pub fn new(k: usize, q: [f64; 2], rho: f64) -> Result<Self> {
        if k != 1 && k != 2 {
            return Err(invalid("fiber dimension must be 1 or 2"));
        }
        if q[..k].iter().any(|&v| v == 0.0 || !v.is_finite()) {
            return Err(invalid("quadratic form must be nondegenerate"));
        }
        if !(rho > 0.0) {
            return Err(invalid("support radius must be positive"));
        }
        let q = if k == 1 { [q[0], 0.0] } else { q };
        Ok(Gfqi { k, q, rho, shift: TrigPoly::default(), terms: Vec::new() })
    }

    /// Bundled one-dimensional example over the circle: `Q = −ξ²`, `ρ = 2`,
    /// bump coefficients `−6 + 4cos x` and `0.8 sin x·ξ`. Its Lagrangian has a
    /// single branch near `x = 0`, three branches elsewhere, and the selector
    /// switches branches at `x = π`.
    pub fn multivalued_example() -> Self {
        let mut s = Gfqi::new(1, [-1.0, 0.0], 2.0).expect("valid form");
        s.terms.push(BumpTerm {
            coefficient: TrigPoly { constant: -6.0, modes: vec![([1, 0], 4.0, 0.0)] },
            power: [0, 0],
        });
        s.terms.push(BumpTerm { coefficient: TrigPoly { constant: 0.0, modes: vec![([1, 0], 0.0, 0.8)] }, power: [1, 0] });
        s
    }

    pub fn fiber_dim(&self) -> usize {
        self.k
    }

    pub fn form(&self) -> [f64; 2] {
        self.q
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Morse index of `Q`.
    pub fn index(&self) -> usize {
        self.q[..self.k].iter().filter(|&&v| v < 0.0).count()
    }

    pub fn quadratic(&self, xi: Vec2) -> f64 {
        self.q[0] * xi[0] * xi[0] + self.q[1] * xi[1] * xi[1]
    }

    /// `N` with `|Q(ξ)| ≥ N ⇒ |ξ| > ρ`, hence `S = Q + f` there.
    pub fn level(&self) -> f64 {
        let qmax = self.q[..self.k].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        1.01 * qmax * self.rho * self.rho
    }

    /// Half-width of the fiber box used by the filtration; it reaches `{Q ≤ −N}`
    /// along every negative axis.
    pub fn box_half_width(&self) -> f64 {
        let qmax = self.q[..self.k].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let qmin = self.q[..self.k].iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        1.2 * self.rho * math::sqrt(1.01 * qmax / qmin)
    }

    fn mask(&self, xi: Vec2) -> Vec2 {
        if self.k == 1 {
            [xi[0], 0.0]
        } else {
            xi
        }
    }

    pub fn value(&self, x: Vec2, xi: Vec2) -> f64 {
        let xi = self.mask(xi);
        let (g, _) = bump(xi, self.rho);
        let mut s = self.quadratic(xi) + self.shift.value(x);
        if g > 0.0 {
            for t in &self.terms {
                s += t.coefficient.value(x) * monomial(xi, t.power).0 * g;
            }
        }
        s
    }

    pub fn grad_xi(&self, x: Vec2, xi: Vec2) -> Vec2 {
        let xi = self.mask(xi);
        let (g, dg) = bump(xi, self.rho);
        let mut d = [2.0 * self.q[0] * xi[0], 2.0 * self.q[1] * xi[1]];
        if g > 0.0 {
            for t in &self.terms {
                let b = t.coefficient.value(x);
                let (m, dm) = monomial(xi, t.power);
                d[0] += b * (dm[0] * g + m * dg[0]);
                d[1] += b * (dm[1] * g + m * dg[1]);
            }
        }
        self.mask(d)
    }

    pub fn grad_x(&self, x: Vec2, xi: Vec2) -> Vec2 {
        let xi = self.mask(xi);
        let (g, _) = bump(xi, self.rho);
        let mut d = self.shift.grad(x);
        if g > 0.0 {
            for t in &self.terms {
                let db = t.coefficient.grad(x);
                let m = monomial(xi, t.power).0 * g;
                d[0] += db[0] * m;
                d[1] += db[1] * m;
            }
        }
        d
    }

    /// Fiber Hessian by central differences of the analytic gradient.
    pub fn hess_xi(&self, x: Vec2, xi: Vec2) -> [[f64; 2]; 2] {
        let e = 1e-5 * (1.0 + self.rho);
        let mut h = [[0.0; 2]; 2];
        for j in 0..self.k {
            let mut a = xi;
            let mut b = xi;
            a[j] += e;
            b[j] -= e;
            let (ga, gb) = (self.grad_xi(x, a), self.grad_xi(x, b));
            for i in 0..self.k {
                h[i][j] = (ga[i] - gb[i]) / (2.0 * e);
            }
        }
        if self.k == 2 {
            let s = 0.5 * (h[0][1] + h[1][0]);
            h[0][1] = s;
            h[1][0] = s;
        }
        h
    }

    /// Rank test for the transversality of `∂_ξS = 0` at `(x, ξ)`: the
    /// `k × (2 + k)` Jacobian `[∂_x∂_ξS | ∂_ξ²S]` must have full row rank.
    pub fn transversal(&self, x: Vec2, xi: Vec2, tol: f64) -> bool {
        let e = 1e-5;
        let mut rows = [[0.0; 4]; 2];
        for a in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += e;
            xm[a] -= e;
            let (gp, gm) = (self.grad_xi(xp, xi), self.grad_xi(xm, xi));
            for i in 0..self.k {
                rows[i][a] = (gp[i] - gm[i]) / (2.0 * e);
            }
        }
        let h = self.hess_xi(x, xi);
        for i in 0..self.k {
            rows[i][2] = h[i][0];
            rows[i][3] = h[i][1];
        }
        if self.k == 1 {
            return rows[0].iter().any(|v| v.abs() > tol);
        }
        // some 2×2 minor must be nonsingular
        (0..4).any(|a| (a + 1..4).any(|b| (rows[0][a] * rows[1][b] - rows[0][b] * rows[1][a]).abs() > tol))
    }

    /// Largest `|S − Q − f|` over `samples` points with `|ξ| > ρ` (zero by construction).
    pub fn infinity_defect(&self, x: Vec2, samples: usize) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..samples {
            let t = math::TAU * i as f64 / samples as f64;
            let r = self.rho * (1.0 + 2.0 * i as f64 / samples as f64) + 1e-9;
            let xi = self.mask([r * math::cos(t), r * math::sin(t)]);
            if math::norm(xi) <= self.rho {
                continue;
            }
            worst = worst.max((self.value(x, xi) - self.quadratic(xi) - self.shift.value(x)).abs());
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberCritical {
    pub xi: Vec2,
    pub value: f64,
    pub index: usize,
    /// `d_xS` at the critical point: the covector of the corresponding point of Λ.
    pub dx: Vec2,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorOptions {
    /// Fiber samples for the filtration when `k = 1`.
    pub resolution: usize,
    /// Fiber samples per axis for the filtration when `k = 2`.
    pub resolution_2d: usize,
    /// Samples per axis when bracketing critical points.
    pub bracket_resolution: usize,
    /// Relative change allowed under one fiber refinement.
    pub tol: f64,
    /// Smallest admissible `|eigenvalue|` of the fiber Hessian.
    pub tol_degenerate: f64,
}

impl Default for SelectorOptions {
    fn default() -> Self {
        SelectorOptions { resolution: 801, resolution_2d: 121, bracket_resolution: 400, tol: 1e-3, tol_degenerate: 1e-6 }
    }
}

fn classify(s: &Gfqi, x: Vec2, xi: Vec2, tol_degenerate: f64) -> FiberCritical {
    let hm = s.hess_xi(x, xi);
    let (index, degenerate) = if s.k == 1 {
        (usize::from(hm[0][0] < 0.0), hm[0][0].abs() < tol_degenerate)
    } else {
        let (e0, e1) = math::sym_eigenvalues(hm);
        (usize::from(e0 < 0.0) + usize::from(e1 < 0.0), e0.abs().min(e1.abs()) < tol_degenerate)
    };
    FiberCritical { xi, value: s.value(x, xi), index, dx: s.grad_x(x, xi), degenerate }
}

fn newton(s: &Gfqi, x: Vec2, start: Vec2) -> Option<Vec2> {
    let mut xi = start;
    for _ in 0..50 {
        let g = s.grad_xi(x, xi);
        if math::norm(g) < 1e-13 {
            return Some(xi);
        }
        let h = s.hess_xi(x, xi);
        let step = if s.k == 1 {
            if h[0][0] == 0.0 {
                return None;
            }
            [g[0] / h[0][0], 0.0]
        } else {
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            if det.abs() < 1e-300 {
                return None;
            }
            [(h[1][1] * g[0] - h[0][1] * g[1]) / det, (h[0][0] * g[1] - h[1][0] * g[0]) / det]
        };
        xi = math::sub(xi, step);
        if !(xi[0].is_finite() && xi[1].is_finite()) {
            return None;
        }
    }
    (math::norm(s.grad_xi(x, xi)) < 1e-9).then_some(xi)
}

/// All fiber critical points in `|ξ| ≤ ρ`, sorted by value.
pub fn fiber_critical_points(s: &Gfqi, x: Vec2, opts: &SelectorOptions) -> Vec<FiberCritical> {
    let r = s.rho;
    let m = opts.bracket_resolution.max(8);
    let step = 2.0 * r / m as f64;
    let mut found: Vec<Vec2> = Vec::new();
    let add = |xi: Vec2, found: &mut Vec<Vec2>| {
        if math::norm(xi) <= r * (1.0 + 1e-9) && !found.iter().any(|f| math::norm(math::sub(*f, xi)) < 1e-7) {
            found.push(xi);
        }
    };
    if s.k == 1 {
        let d = |t: f64| s.grad_xi(x, [t, 0.0])[0];
        let mut a = -r;
        let mut da = d(a);
        for i in 1..=m {
            let b = -r + i as f64 * step;
            let db = d(b);
            if da == 0.0 {
                add([a, 0.0], &mut found);
            } else if da * db < 0.0 {
                // safeguarded bisection, then Newton polish
                let (mut lo, mut hi, mut flo) = (a, b, da);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let fm = d(mid);
                    if fm == 0.0 || hi - lo < 1e-15 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if (fm < 0.0) == (flo < 0.0) {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                let root = newton(s, x, [0.5 * (lo + hi), 0.0]).unwrap_or([0.5 * (lo + hi), 0.0]);
                add(root, &mut found);
            }
            a = b;
            da = db;
        }
        if da == 0.0 {
            add([a, 0.0], &mut found);
        }
    } else {
        let n = m + 1;
        let coord = |i: usize| -r + i as f64 * step;
        let grads: Vec<Vec2> = (0..n * n).map(|k| s.grad_xi(x, [coord(k % n), coord(k / n)])).collect();
        for j in 0..m {
            for i in 0..m {
                let corners = [grads[j * n + i], grads[j * n + i + 1], grads[(j + 1) * n + i], grads[(j + 1) * n + i + 1]];
                let straddles = |c: usize| {
                    let lo = corners.iter().fold(f64::INFINITY, |a, g| a.min(g[c]));
                    let hi = corners.iter().fold(f64::NEG_INFINITY, |a, g| a.max(g[c]));
                    lo <= 0.0 && hi >= 0.0
                };
                if straddles(0) && straddles(1) {
                    let centre = [coord(i) + 0.5 * step, coord(j) + 0.5 * step];
                    if let Some(xi) = newton(s, x, centre) {
                        if (xi[0] - centre[0]).abs() <= 2.0 * step && (xi[1] - centre[1]).abs() <= 2.0 * step {
                            add(xi, &mut found);
                        }
                    }
                }
            }
        }
    }
    let mut out: Vec<FiberCritical> = found.into_iter().map(|xi| classify(s, x, xi, opts.tol_degenerate)).collect();
    out.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.xi[0].total_cmp(&b.xi[0])));
    out
}

/// Fiber box samples of `S_x` on `res` points per axis.
fn fiber_samples(s: &Gfqi, x: Vec2, res: usize) -> (Vec<f64>, Vec<Vec2>) {
    let l = s.box_half_width();
    let step = 2.0 * l / (res - 1) as f64;
    let coord = |i: usize| -l + i as f64 * step;
    let n = if s.k == 1 { res } else { res * res };
    let pts: Vec<Vec2> = (0..n)
        .map(|k| if s.k == 1 { [coord(k), 0.0] } else { [coord(k % res), coord(k / res)] })
        .collect();
    (pts.iter().map(|&p| s.value(x, p)).collect(), pts)
}

/// Raw filtration threshold on a sampled fiber box: the least `a` for which
/// the generator of `H_m(E^N, E^{−N})` lies in the image of `H_m(E^a, E^{−N})`.
///
/// `values` are samples on a `res`(×`res`) box, `ends[i]` tags samples of
/// `{Q ≤ −N}` by the sign of their negative-axis coordinate.
pub fn filtration_threshold(values: &[f64], k: usize, res: usize, m: usize, ends: &[i8]) -> f64 {
    match m {
        0 => values.iter().copied().fold(f64::INFINITY, f64::min),
        1 => union_find_threshold(values, k, res, ends),
        // planar case: the boundary loop of the box dies in H₁(E^a) only once
        // every interior sample is in the sublevel set
        _ => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn find(parent: &mut [u32], mut i: usize) -> usize {
    while parent[i] as usize != i {
        let p = parent[i] as usize;
        parent[i] = parent[p];
        i = p;
    }
    i
}

/// Increasing-value merge until the two ends of `{Q ≤ −N}` share a component.
fn union_find_threshold(values: &[f64], k: usize, res: usize, ends: &[i8]) -> f64 {
    let n = values.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]).then(a.cmp(&b)));
    let mut parent: Vec<u32> = (0..n as u32).collect();
    let mut tags: Vec<u8> = ends.iter().map(|&e| if e > 0 { 1 } else if e < 0 { 2 } else { 0 }).collect();
    let mut active = vec![false; n];
    for &v in &order {
        let v = v as usize;
        active[v] = true;
        let mut nbrs = [usize::MAX; 4];
        if k == 1 {
            if v > 0 {
                nbrs[0] = v - 1;
            }
            if v + 1 < n {
                nbrs[1] = v + 1;
            }
        } else {
            let (i, j) = (v % res, v / res);
            if i > 0 {
                nbrs[0] = v - 1;
            }
            if i + 1 < res {
                nbrs[1] = v + 1;
            }
            if j > 0 {
                nbrs[2] = v - res;
            }
            if j + 1 < res {
                nbrs[3] = v + res;
            }
        }
        let mut root = find(&mut parent, v);
        for &w in nbrs.iter().filter(|&&w| w != usize::MAX && active[w]) {
            let rw = find(&mut parent, w);
            if rw != root {
                let (keep, drop) = if rw < root { (rw, root) } else { (root, rw) };
                parent[drop] = keep as u32;
                tags[keep] |= tags[drop];
                root = keep;
            }
        }
        if tags[root] == 3 {
            return values[v];
        }
    }
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn end_tags(s: &Gfqi, pts: &[Vec2]) -> Vec<i8> {
    let n_level = s.level();
    let neg = (0..s.k).find(|&i| s.q[i] < 0.0);
    pts.iter()
        .map(|&p| match neg {
            Some(a) if s.quadratic(p) <= -n_level => {
                if p[a] > 0.0 {
                    1
                } else {
                    -1
                }
            }
            _ => 0,
        })
        .collect()
}

/// Raw sampled filtration value of the selector at `x`.
pub fn raw_selector_value(s: &Gfqi, x: Vec2, res: usize) -> f64 {
    let (vals, pts) = fiber_samples(s, x, res);
    filtration_threshold(&vals, s.k, res, s.index(), &end_tags(s, &pts))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorValue {
    pub value: f64,
    /// Filtration threshold on the refined fiber grid.
    pub raw: f64,
    /// Critical point whose value the threshold was snapped to.
    pub critical: Option<FiberCritical>,
}

/// `Φ(x) = inf{a | A_x ∈ Image(I_{a,x})}`, snapped to the nearest critical value.
pub fn selector_value(s: &Gfqi, x: Vec2, opts: &SelectorOptions) -> Result<SelectorValue> {
    let res = if s.k == 1 { opts.resolution } else { opts.resolution_2d } | 1;
    let coarse = raw_selector_value(s, x, res);
    let fine = raw_selector_value(s, x, 2 * res - 1);
    let change = (coarse - fine).abs();
    if change > opts.tol * (1.0 + fine.abs()) {
        return Err(Error::ResolutionTooCoarse { change });
    }
    let crits = fiber_critical_points(s, x, opts);
    let critical = crits
        .iter()
        .copied()
        .filter(|c| (c.value - fine).abs() <= 2.0 * opts.tol * (1.0 + fine.abs()))
        .min_by(|a, b| (a.value - fine).abs().total_cmp(&(b.value - fine).abs()));
    Ok(SelectorValue { value: critical.map_or(fine, |c| c.value), raw: fine, critical })
}

/// Graph selector sampled on a base grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorField {
    pub phi: ScalarField,
    /// Nodes where `S_x` is Morse with pairwise distinct critical values.
    pub x0: NodeSetMask,
    /// `d_xS` at the selected critical point, on `X₀`.
    pub covectors: Vec<Option<Vec2>>,
    pub selected: Vec<Option<FiberCritical>>,
    /// Sampled Λ: every fiber critical point as `(node, d_xS)`.
    pub lambda: Vec<(usize, Vec2)>,
    pub lipschitz: f64,
    pub max_critical_dx: f64,
    pub class: Vec2,
}

pub fn graph_selector(s: &Gfqi, grid: TorusGrid, opts: &SelectorOptions) -> Result<SelectorField> {
    let n = grid.len();
    let mut phi = Vec::with_capacity(n);
    let mut selected = Vec::with_capacity(n);
    let mut crits = Vec::with_capacity(n);
    for k in 0..n {
        let x = grid.coord(k);
        let sv = selector_value(s, x, opts)?;
        phi.push(sv.value);
        selected.push(sv.critical);
        crits.push(fiber_critical_points(s, x, opts));
    }
    let (lo, hi) = crits.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c.value), b.max(c.value)));
    let tol_gap = 1e-6 * if hi > lo { hi - lo } else { 1.0 };
    let x0 = NodeSetMask::from_fn(grid, tol_gap, |k| {
        let c = &crits[k];
        selected[k].is_some() && c.iter().all(|p| !p.degenerate) && c.windows(2).all(|w| w[1].value - w[0].value > tol_gap)
    });
    let covectors = (0..n).map(|k| if x0.mask[k] { selected[k].map(|c| c.dx) } else { None }).collect();
    let lambda: Vec<(usize, Vec2)> = crits.iter().enumerate().flat_map(|(k, c)| c.iter().map(move |p| (k, p.dx))).collect();
    let max_critical_dx = lambda.iter().fold(0.0f64, |m, (_, p)| m.max(math::norm(*p)));
    let phi = ScalarField::new(grid, phi)?;
    let lipschitz = lipschitz_estimate(&phi);
    Ok(SelectorField { phi, x0, covectors, selected, lambda, lipschitz, max_critical_dx, class: [0.0, 0.0] })
}

/// Largest slope of a field between neighbouring nodes (axis and diagonal).
pub fn lipschitz_estimate(f: &ScalarField) -> f64 {
    let g = f.grid();
    let dirs: &[[isize; 2]] = if g.dim() == 1 { &[[1, 0]] } else { &[[1, 0], [0, 1], [1, 1], [1, -1]] };
    let mut best = 0.0f64;
    for k in 0..g.len() {
        for &d in dirs {
            let j = g.offset(k, d);
            let dist = g.distance(g.coord(k), g.coord(j));
            if dist > 0.0 {
                best = best.max((f.get(k) - f.get(j)).abs() / dist);
            }
        }
    }
    best
}

impl SelectorField {
    /// `dΦ(x)` by differences along the selected branch: central when both
    /// neighbours continue the selected critical point, one-sided otherwise.
    pub fn derivative(&self, k: usize) -> Vec2 {
        let g = self.phi.grid();
        let mut out = [0.0, 0.0];
        let same = |a: usize, b: usize| match (self.selected[a], self.selected[b]) {
            (Some(p), Some(q)) => math::norm(math::sub(p.xi, q.xi)) < 0.1 * (1.0 + math::norm(p.xi)),
            _ => false,
        };
        for (axis, o) in out.iter_mut().enumerate().take(g.dim()) {
            let mut d = [0isize; 2];
            d[axis] = 1;
            let fwd = g.offset(k, d);
            d[axis] = -1;
            let back = g.offset(k, d);
            let h = g.spacing(axis);
            *o = match (same(k, fwd), same(k, back)) {
                (true, false) => (self.phi.get(fwd) - self.phi.get(k)) / h,
                (false, true) => (self.phi.get(k) - self.phi.get(back)) / h,
                _ => (self.phi.get(fwd) - self.phi.get(back)) / (2.0 * h),
            };
        }
        out
    }

    /// Distance from `(x, dΦ(x))` to the sampled Λ, in base cells, searching Λ
    /// samples within `reach` cells of `x`.
    pub fn membership_distance(&self, k: usize, reach: usize) -> f64 {
        let g = self.phi.grid();
        let h = g.h();
        let p = self.derivative(k);
        let x = g.coord(k);
        self.lambda
            .iter()
            .filter(|(j, _)| g.cell_distance(k, *j) <= reach)
            .map(|&(j, q)| {
                let dx = g.distance(x, g.coord(j));
                math::sqrt(dx * dx + math::dot(math::sub(p, q), math::sub(p, q))) / h
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Mollified selector as a Lagrangian section.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedSelector {
    pub psi: ScalarField,
    pub section: LagrangianSection,
    /// Largest distance from `dΨ(x)` to the convex hull of selected covectors within the mollifier radius.
    pub hull_distance: f64,
}

/// Periodic convolution with a unit-mass smooth bump of radius `s ≥ 2h`.
pub fn smooth_selector(field: &SelectorField, s: f64) -> Result<SmoothedSelector> {
    let g = *field.phi.grid();
    if !(s >= 2.0 * g.h() * (1.0 - 1e-12)) {
        return Err(invalid("mollifier radius must be at least two cells"));
    }
    let psi = mollify(&field.phi, s);
    let section = LagrangianSection::new(field.class, psi.clone());
    let r0 = math::ceil(s / g.spacing(0)) as isize;
    let r1 = if g.dim() == 1 { 0 } else { math::ceil(s / g.spacing(1)) as isize };
    let mut hull_distance = 0.0f64;
    let mut pts = Vec::new();
    for k in 0..g.len() {
        pts.clear();
        for d1 in -r1..=r1 {
            for d0 in -r0..=r0 {
                let j = g.offset(k, [d0, d1]);
                if g.distance(g.coord(k), g.coord(j)) <= s {
                    if let Some(c) = field.selected[j] {
                        pts.push(math::add(c.dx, field.class));
                    }
                }
            }
        }
        hull_distance = hull_distance.max(hull_point_distance(&pts, section.covector(k)));
    }
    Ok(SmoothedSelector { psi, section, hull_distance })
}

/// Periodic mollification `Σ w(d) f(x + d)` with `w ∝ exp(1 − 1/(1 − |d|²/s²))`.
pub fn mollify(f: &ScalarField, s: f64) -> ScalarField {
    let g = *f.grid();
    let r0 = math::ceil(s / g.spacing(0)) as isize;
    let r1 = if g.dim() == 1 { 0 } else { math::ceil(s / g.spacing(1)) as isize };
    let mut kernel = Vec::new();
    for d1 in -r1..=r1 {
        for d0 in -r0..=r0 {
            let v = [d0 as f64 * g.spacing(0), if d1 == 0 { 0.0 } else { d1 as f64 * g.spacing(1) }];
            let (w, _) = bump(v, s);
            if w > 0.0 {
                kernel.push(([d0, d1], w));
            }
        }
    }
    let total = math::ordered_sum(kernel.iter().map(|e| e.1));
    let out = (0..g.len())
        .map(|k| math::ordered_sum(kernel.iter().map(|&(d, w)| w * f.get(g.offset(k, d)))) / total)
        .collect();
    ScalarField::new(g, out).expect("same grid")
}

/// Euclidean distance from `p` to the convex hull of `pts` (infinite when empty).
pub fn hull_point_distance(pts: &[Vec2], p: Vec2) -> f64 {
    if pts.is_empty() {
        return f64::INFINITY;
    }
    let mut hull: Vec<Vec2> = pts.to_vec();
    hull.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    hull.dedup_by(|a, b| math::norm(math::sub(*a, *b)) < 1e-15);
    let cross = |o: Vec2, a: Vec2, b: Vec2| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    if hull.len() > 2 {
        let mut lower: Vec<Vec2> = Vec::new();
        for &q in &hull {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
                lower.pop();
            }
            lower.push(q);
        }
        let mut upper: Vec<Vec2> = Vec::new();
        for &q in hull.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
                upper.pop();
            }
            upper.push(q);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        hull = lower;
    }
    if hull.len() >= 3 && (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0) {
        return 0.0;
    }
    let seg = |a: Vec2, b: Vec2| {
        let ab = math::sub(b, a);
        let len2 = math::dot(ab, ab);
        let t = if len2 > 0.0 { (math::dot(math::sub(p, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        math::norm(math::sub(p, math::add(a, math::scale(t, ab))))
    };
    if hull.len() == 1 {
        return math::norm(math::sub(p, hull[0]));
    }
    (0..hull.len()).fold(f64::INFINITY, |m, i| m.min(seg(hull[i], hull[(i + 1) % hull.len()])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    /// Threshold by direct enumeration: bisect over the sorted sample values,
    /// testing by breadth-first search whether `{S ≤ a}` joins the two ends.
    fn brute_threshold(values: &[f64], k: usize, res: usize, ends: &[i8]) -> f64 {
        let n = values.len();
        let joins = |a: f64| {
            let mut seen = vec![false; n];
            let mut queue: VecDeque<usize> = (0..n).filter(|&i| ends[i] > 0 && values[i] <= a).collect();
            for &i in &queue {
                seen[i] = true;
            }
            while let Some(v) = queue.pop_front() {
                if ends[v] < 0 {
                    return true;
                }
                let mut nb = std::vec::Vec::new();
                if k == 1 {
                    if v > 0 {
                        nb.push(v - 1);
                    }
                    if v + 1 < n {
                        nb.push(v + 1);
                    }
                } else {
                    let (i, j) = (v % res, v / res);
                    if i > 0 {
                        nb.push(v - 1);
                    }
                    if i + 1 < res {
                        nb.push(v + 1);
                    }
                    if j > 0 {
                        nb.push(v - res);
                    }
                    if j + 1 < res {
                        nb.push(v + res);
                    }
                }
                for w in nb {
                    if !seen[w] && values[w] <= a {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            false
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (mut lo, mut hi) = (0usize, n - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if joins(sorted[mid]) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        sorted[lo]
    }

    fn fd_check(s: &Gfqi, x: Vec2, xi: Vec2) {
        let e = 1e-6;
        let gx = s.grad_x(x, xi);
        let gxi = s.grad_xi(x, xi);
        for a in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += e;
            xm[a] -= e;
            let fd = (s.value(xp, xi) - s.value(xm, xi)) / (2.0 * e);
            assert!((fd - gx[a]).abs() < 1e-6, "d_x mismatch {fd} {}", gx[a]);
        }
        for a in 0..s.fiber_dim() {
            let mut p = xi;
            let mut m = xi;
            p[a] += e;
            m[a] -= e;
            let fd = (s.value(x, p) - s.value(x, m)) / (2.0 * e);
            assert!((fd - gxi[a]).abs() < 1e-6, "d_xi mismatch {fd} {}", gxi[a]);
        }
    }

    fn planar_example() -> Gfqi {
        let mut s = Gfqi::new(2, [-1.0, 1.0], 1.5).unwrap();
        s.shift = TrigPoly { constant: 0.0, modes: vec![([0, 1], 0.3, 0.0)] };
        s.terms.push(BumpTerm { coefficient: TrigPoly { constant: -2.0, modes: vec![([1, 0], 1.0, 0.5)] }, power: [0, 0] });
        s.terms.push(BumpTerm { coefficient: TrigPoly { constant: 0.0, modes: vec![([1, 1], 0.7, 0.0)] }, power: [1, 1] });
        s
    }

    #[test]
    fn derivatives_match_differences() {
        let s = planar_example();
        for &(x, xi) in &[([0.3, 1.1], [0.2, -0.4]), ([2.0, 5.0], [-0.9, 0.6]), ([4.0, 0.1], [1.2, 0.1])] {
            fd_check(&s, x, xi);
        }
        let m = Gfqi::multivalued_example();
        fd_check(&m, [1.0, 0.0], [0.7, 0.0]);
        assert!(s.infinity_defect([0.4, 0.2], 200) < 1e-14);
        assert_eq!(m.infinity_defect([2.4, 0.0], 200), 0.0);
        assert_eq!(s.index(), 1);
    }

    #[test]
    fn quadratic_form_alone() {
        let opts = SelectorOptions::default();
        for (k, q) in [(1, [1.0, 0.0]), (1, [-1.0, 0.0]), (2, [1.0, 2.0]), (2, [-1.0, 3.0]), (2, [-2.0, -1.0])] {
            let s = Gfqi::new(k, q, 1.0).unwrap();
            let crit = fiber_critical_points(&s, [0.5, 0.5], &opts);
            assert_eq!(crit.len(), 1);
            assert!(math::norm(crit[0].xi) < 1e-12 && crit[0].value.abs() < 1e-12);
            assert_eq!(crit[0].index, s.index());
            let v = selector_value(&s, [0.5, 0.5], &opts).unwrap();
            assert!(v.value.abs() < 1e-12, "k={k} q={q:?}");
        }
    }

    #[test]
    fn one_or_three_critical_points() {
        let s = Gfqi::multivalued_example();
        let opts = SelectorOptions::default();
        let mut counts = [0usize; 4];
        for i in 0..64 {
            let x = [math::TAU * i as f64 / 64.0, 0.0];
            let crit = fiber_critical_points(&s, x, &opts);
            // oracle: sign changes of d_ξS on a fine fiber grid
            let m = 19_999;
            let d: std::vec::Vec<f64> = (0..=m).map(|j| s.grad_xi(x, [-2.0 + 4.0 * j as f64 / m as f64, 0.0])[0]).collect();
            let changes = d.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
            assert_eq!(crit.len(), changes, "x={}", x[0]);
            assert!(crit.len() == 1 || crit.len() == 3);
            counts[crit.len()] += 1;
            for c in &crit {
                assert!(s.transversal(x, c.xi, 1e-8));
            }
        }
        assert!(counts[1] > 0 && counts[3] > 0);
    }

    #[test]
    fn union_find_matches_enumeration_on_large_fibers() {
        let s = Gfqi::multivalued_example();
        let mut double_well = Gfqi::new(1, [-1.0, 0.0], 2.0).unwrap();
        double_well.terms.push(BumpTerm { coefficient: TrigPoly::constant(-5.0), power: [0, 0] });
        double_well.terms.push(BumpTerm { coefficient: TrigPoly::constant(0.0), power: [2, 0] });
        double_well.terms.push(BumpTerm { coefficient: TrigPoly { constant: 0.0, modes: vec![([1, 0], 0.0, 1.0)] }, power: [1, 0] });
        for g in [&s, &double_well] {
            for i in 0..12 {
                let x = [math::TAU * i as f64 / 12.0, 0.0];
                let res = 10_001;
                let (vals, pts) = fiber_samples(g, x, res);
                let ends = end_tags(g, &pts);
                let uf = filtration_threshold(&vals, 1, res, 1, &ends);
                assert_eq!(uf, brute_threshold(&vals, 1, res, &ends));
            }
        }
        let p = planar_example();
        for x in [[0.0, 0.0], [1.3, 2.9], [4.4, 0.7]] {
            let res = 101;
            let (vals, pts) = fiber_samples(&p, x, res);
            let ends = end_tags(&p, &pts);
            assert_eq!(filtration_threshold(&vals, 2, res, 1, &ends), brute_threshold(&vals, 2, res, &ends));
        }
        // index 0: the point class is born at the global minimum
        let mut up = Gfqi::new(1, [1.0, 0.0], 2.0).unwrap();
        up.terms.push(BumpTerm { coefficient: TrigPoly { constant: 1.5, modes: vec![([1, 0], 1.0, 0.0)] }, power: [1, 0] });
        let (vals, _) = fiber_samples(&up, [0.7, 0.0], 10_001);
        let brute = vals.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(filtration_threshold(&vals, 1, 10_001, 0, &[]), brute);
    }

    #[test]
    fn selector_values_are_critical_values() {
        let s = Gfqi::multivalued_example();
        let opts = SelectorOptions::default();
        for i in 0..40 {
            let x = [math::TAU * (i as f64 + 0.5) / 40.0, 0.0];
            let v = selector_value(&s, x, &opts).unwrap();
            let c = v.critical.expect("snapped");
            assert!((v.raw - c.value).abs() < 1e-4);
            assert!(fiber_critical_points(&s, x, &opts).iter().any(|p| p.value == v.value));
        }
        let p = planar_example();
        let v = selector_value(&p, [1.0, 2.0], &opts).unwrap();
        assert!(v.critical.is_some());
    }

    #[test]
    fn too_coarse_fiber_is_reported() {
        let s = Gfqi::multivalued_example();
        let opts = SelectorOptions { resolution: 5, ..SelectorOptions::default() };
        assert!(matches!(selector_value(&s, [2.0, 0.0], &opts), Err(Error::ResolutionTooCoarse { .. })));
    }

    #[test]
    fn zero_section_and_shifted_generating_functions() {
        let grid = TorusGrid::square(12).unwrap();
        let opts = SelectorOptions { resolution_2d: 41, ..SelectorOptions::default() };
        let s = Gfqi::new(2, [-1.0, 2.0], 1.0).unwrap();
        let field = graph_selector(&s, grid, &opts).unwrap();
        assert!(field.phi.range() <= 1e-8);
        assert_eq!(field.x0.count(), grid.len());
        assert!((0..grid.len()).all(|k| math::norm(field.derivative(k)) == 0.0));
        assert!(field.lambda.iter().all(|(_, p)| math::norm(*p) == 0.0));
        let smooth = smooth_selector(&field, 2.0 * grid.h()).unwrap();
        assert!(smooth.psi.range() <= 1e-12);
        assert_eq!(smooth.section.liouville_class(), [0.0, 0.0]);

        let mut shifted = Gfqi::new(1, [1.0, 0.0], 1.0).unwrap();
        shifted.shift = TrigPoly { constant: 0.5, modes: vec![([1, 0], 0.0, 1.0)] };
        let circle = TorusGrid::circle(64).unwrap();
        let field = graph_selector(&shifted, circle, &opts).unwrap();
        for k in 0..circle.len() {
            let x = circle.coord(k);
            assert!((field.phi.get(k) - 0.5 - math::sin(x[0])).abs() < 1e-12);
            assert!((field.covectors[k].unwrap()[0] - math::cos(x[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn multivalued_selector_field() {
        let s = Gfqi::multivalued_example();
        let grid = TorusGrid::circle(256).unwrap();
        let field = graph_selector(&s, grid, &SelectorOptions::default()).unwrap();
        assert!(field.x0.coverage() >= 0.95, "X0 coverage {}", field.x0.coverage());
        for k in (0..grid.len()).filter(|&k| field.x0.mask[k]) {
            let d = field.membership_distance(k, 3);
            assert!(d <= 2.0, "node {k}: {d} cells");
        }
        assert!(field.lipschitz <= 1.1 * field.max_critical_dx);
        // the selected branch changes sides of ξ = 0 around x = π
        let xi = |t: f64| field.selected[grid.nearest([t, 0.0])].unwrap().xi[0];
        assert!(xi(2.5) * xi(3.8) < 0.0);
        // Λ sampled over the circle is one closed curve: a single component
        // under δ-adjacency of (x, p) samples at equal or neighbouring nodes
        let pts = &field.lambda;
        let mut comp: std::vec::Vec<usize> = (0..pts.len()).collect();
        fn root(c: &mut [usize], mut i: usize) -> usize {
            while c[i] != i {
                i = c[i];
            }
            i
        }
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                if grid.cell_distance(pts[a].0, pts[b].0) <= 1 && (pts[a].1[0] - pts[b].1[0]).abs() < 0.5 {
                    let (ra, rb) = (root(&mut comp, a), root(&mut comp, b));
                    comp[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        assert!((0..pts.len()).all(|i| root(&mut comp, i) == 0));

        let mut prev = f64::INFINITY;
        for cells in [8.0, 4.0, 2.0] {
            let sm = smooth_selector(&field, cells * grid.h()).unwrap();
            assert!(sm.section.liouville_class()[0].abs() < 1e-12);
            assert!(sm.hull_distance <= prev + 1e-12);
            prev = sm.hull_distance;
        }
        let sm = smooth_selector(&field, 4.0 * grid.h()).unwrap();
        assert!(sm.hull_distance <= 0.05, "hull distance {}", sm.hull_distance);
        assert!(smooth_selector(&field, grid.h()).is_err());
    }

    #[test]
    fn mollifying_a_smooth_function_converges() {
        let grid = TorusGrid::circle(256).unwrap();
        let phi = ScalarField::from_fn(grid, |x| math::sin(x[0]) + 0.2 * math::cos(2.0 * x[0]));
        let mut prev = f64::INFINITY;
        for cells in [8.0, 4.0, 2.0] {
            let psi = mollify(&phi, cells * grid.h());
            let err = (0..grid.len()).map(|k| (psi.gradient(k)[0] - phi.gradient(k)[0]).abs()).fold(0.0, f64::max);
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn hull_distance_basics() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        assert_eq!(hull_point_distance(&sq, [0.3, 0.6]), 0.0);
        assert!((hull_point_distance(&sq, [2.0, 0.5]) - 1.0).abs() < 1e-15);
        let seg = [[-1.0, 0.0], [2.0, 0.0]];
        assert_eq!(hull_point_distance(&seg, [0.5, 0.0]), 0.0);
        assert!((hull_point_distance(&seg, [3.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn union_find_matches_enumeration(values in proptest::collection::vec(-5.0f64..5.0, 36..=36), planar in any::<bool>()) {
            let (k, res) = if planar { (2, 6) } else { (1, 36) };
            let ends: std::vec::Vec<i8> = (0..36).map(|i| {
                let c = if planar { i % 6 } else { i };
                if c == 0 { -1 } else if c == res - 1 { 1 } else { 0 }
            }).collect();
            let mut values = values;
            for (v, e) in values.iter_mut().zip(&ends) {
                if *e != 0 { *v -= 10.0; }
            }
            prop_assert_eq!(filtration_threshold(&values, k, res, 1, &ends), brute_threshold(&values, k, res, &ends));
        }

        #[test]
        fn selector_is_monotone(bump_height in 0.0f64..0.5, x in 0.0f64..core::f64::consts::TAU) {
            let s = Gfqi::multivalued_example();
            let mut raised = s.clone();
            raised.terms.push(BumpTerm { coefficient: TrigPoly::constant(bump_height), power: [0, 0] });
            let opts = SelectorOptions { resolution: 401, ..SelectorOptions::default() };
            let a = raw_selector_value(&s, [x, 0.0], opts.resolution);
            let b = raw_selector_value(&raised, [x, 0.0], opts.resolution);
            prop_assert!(b >= a);
        }
    }
}
