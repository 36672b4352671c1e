//! Discrete action potentials on a stencil graph and the Mañé critical value.
//!
//! Edge `x → y` stands for the straight segment of duration `τ`, weighted by
//! `τ·L(x̄, (y ⊖ x)/τ)` at the segment midpoint `x̄`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::geometry::Trajectory;
use crate::graph::{self, CycleMean, Digraph};
use crate::grid::TorusGrid;
use crate::math::{self, Vec2};
use crate::model::Lagrangian;

#[derive(Debug, Clone)]
pub struct ActionGraph {
    grid: TorusGrid,
    tau: f64,
    radius: usize,
    stencil: Vec<[isize; 2]>,
    base: Digraph,
}

/// Stencil offsets in cells, `x₂` offset outermost.
pub fn stencil(dim: usize, radius: usize) -> Vec<[isize; 2]> {
    let r = radius as isize;
    let mut out = Vec::new();
    if dim == 1 {
        for d in -r..=r {
            out.push([d, 0]);
        }
    } else {
        for d1 in -r..=r {
            for d0 in -r..=r {
                out.push([d0, d1]);
            }
        }
    }
    out
}

/// Builds the stencil graph; velocities `R·h/τ` must fit in the box `[-P, P]`.
pub fn build_action_graph<L: Lagrangian + ?Sized>(
    l: &L,
    grid: TorusGrid,
    tau: f64,
    radius: usize,
    half_width: f64,
) -> Result<ActionGraph> {
    let h = grid.h();
    if !(tau >= h * (1.0 - 1e-12) && tau <= 10.0 * h * (1.0 + 1e-12)) {
        return Err(invalid("time step must lie in [h, 10h]"));
    }
    if radius == 0 {
        return Err(invalid("stencil radius must be positive"));
    }
    if l.dim() != grid.dim() {
        return Err(invalid("model and grid dimensions differ"));
    }
    let max_speed = radius as f64 * h / tau;
    if max_speed > half_width * (1.0 + 1e-12) {
        return Err(Error::VelocityBoxExceeded { max_speed, half_width });
    }
    let st = stencil(grid.dim(), radius);
    let disp: Vec<Vec2> =
        st.iter().map(|d| [d[0] as f64 * grid.spacing(0), d[1] as f64 * grid.spacing(1)]).collect();
    let base = Digraph::build(grid.len(), |u, push| {
        let x = grid.coord(u);
        for (d, dx) in st.iter().zip(&disp) {
            let mid = math::add(x, math::scale(0.5, *dx));
            let w = tau * l.value(mid, math::scale(1.0 / tau, *dx));
            push(grid.offset(u, *d), w);
        }
    });
    if base.weights().iter().any(|w| !w.is_finite()) {
        return Err(invalid("edge weights must be finite"));
    }
    Ok(ActionGraph { grid, tau, radius, stencil: st, base })
}

impl ActionGraph {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn stencil(&self) -> &[[isize; 2]] {
        &self.stencil
    }

    /// Base weights `w₀`.
    pub fn base(&self) -> &Digraph {
        &self.base
    }

    /// Weights `w_k = w₀ + kτ`.
    pub fn weights(&self, k: f64) -> Digraph {
        let kt = k * self.tau;
        self.base.map_weights(|_, _, w| w + kt)
    }

    /// Velocity carried by stencil entry `j`.
    pub fn velocity(&self, j: usize) -> Vec2 {
        let d = self.stencil[j];
        [
            d[0] as f64 * self.grid.spacing(0) / self.tau,
            d[1] as f64 * self.grid.spacing(1) / self.tau,
        ]
    }

    pub fn edge_count(&self) -> usize {
        self.base.edge_count()
    }

    /// Minimum cycle mean of `w₀` with its bias (a discrete weak KAM potential).
    pub fn cycle_mean(&self) -> Result<CycleMean> {
        graph::min_cycle_mean(&self.base, None, None)
    }

    /// The graph's own critical value `−min cycle mean / τ`.
    pub fn graph_critical_value(&self) -> Result<f64> {
        Ok(-self.cycle_mean()?.min_mean() / self.tau)
    }

    /// Fixed-step dynamic programming from `x` over `w₀`: row `n` holds `Φ₀(x,·; nτ)`.
    pub fn dp_rows_from(&self, x: usize, steps: usize) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let mut rows = Vec::with_capacity(steps + 1);
        let mut cur = vec![f64::INFINITY; n];
        cur[x] = 0.0;
        rows.push(cur.clone());
        for _ in 0..steps {
            let mut next = vec![f64::INFINITY; n];
            for u in 0..n {
                let du = cur[u];
                if du == f64::INFINITY {
                    continue;
                }
                for (v, w) in self.base.out_edges(u) {
                    let c = du + w;
                    if c < next[v] {
                        next[v] = c;
                    }
                }
            }
            rows.push(next.clone());
            cur = next;
        }
        rows
    }
}

/// `Φ_k(x,·; T)` with `T = steps·τ`, exact over all `steps`-edge paths.
///
/// Computed on `w₀` and shifted by `k·T` afterwards, so affinity in `k` is exact.
pub fn action_potential_t_from(g: &ActionGraph, k: f64, x: usize, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(invalid("at least one step is required"));
    }
    let shift = k * (steps as f64 * g.tau);
    let row = g.dp_rows_from(x, steps).pop().expect("dp has steps + 1 rows");
    Ok(row.into_iter().map(|v| v + shift).collect())
}

pub fn action_potential_t(g: &ActionGraph, k: f64, x: usize, y: usize, steps: usize) -> Result<f64> {
    Ok(action_potential_t_from(g, k, x, steps)?[y])
}

/// Free-time potentials `Φ_k(x,y)` for all node pairs; `-inf` marks `MinusInfinity`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialMatrix {
    pub n: usize,
    pub k: f64,
    pub values: Vec<f64>,
}

impl PotentialMatrix {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.n + y]
    }

    pub fn is_minus_infinity(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == f64::NEG_INFINITY
    }

    pub fn has_minus_infinity(&self) -> bool {
        self.values.iter().any(|&v| v == f64::NEG_INFINITY)
    }

    /// Largest `Φ(x,z) − Φ(x,y) − Φ(y,z)` over the given middle nodes and all finite pairs.
    pub fn triangle_defect(&self, middles: impl IntoIterator<Item = usize>) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for y in middles {
            for x in 0..self.n {
                let a = self.get(x, y);
                if !a.is_finite() {
                    continue;
                }
                for z in 0..self.n {
                    let (b, c) = (self.get(y, z), self.get(x, z));
                    if b.is_finite() && c.is_finite() {
                        worst = worst.max(c - a - b);
                    }
                }
            }
        }
        worst
    }
}

/// All-pairs free-time potentials at offset `k`.
///
/// Below the graph's critical value a negative cycle reaches every pair (the
/// stencil graph is strongly connected), so every entry is `MinusInfinity`.
/// Otherwise the cycle-mean bias reweights edges to nonnegative costs and one
/// Dijkstra run per source gives exact shortest paths.
pub fn action_potential(g: &ActionGraph, k: f64) -> Result<PotentialMatrix> {
    let n = g.grid.len();
    let wk = g.weights(k);
    let cm = graph::min_cycle_mean(&wk, None, None)?;
    let scale = 1.0 + wk.weights().iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if cm.min_mean() < -1e-12 * scale {
        return Ok(PotentialMatrix { n, k, values: vec![f64::NEG_INFINITY; n * n] });
    }
    let b = &cm.bias;
    let reduced = wk.map_weights(|u, v, w| (w + b[v] - b[u]).max(0.0));
    let mut values = Vec::with_capacity(n * n);
    for x in 0..n {
        let d = graph::dijkstra(&reduced, &[(x, 0.0)], f64::INFINITY);
        values.extend(d.iter().enumerate().map(|(y, &dr)| dr - b[y] + b[x]));
    }
    Ok(PotentialMatrix { n, k, values })
}

/// Bisection result for the critical value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalValue {
    /// Midpoint of the final bracket.
    pub c: f64,
    /// Largest tested offset with a negative cycle.
    pub lo: f64,
    /// Smallest tested offset without one.
    pub hi: f64,
    pub bisections: usize,
}

/// Bisection on "no negative cycle under `w_k`" over the a-priori bracket
/// `[−max w₀/τ − 1, −min w₀/τ]`.
pub fn critical_value_of(g: &ActionGraph, tol_c: f64) -> Result<CriticalValue> {
    if !(tol_c >= 1e-4) {
        return Err(invalid("tol_c must be at least 1e-4"));
    }
    let tau = g.tau;
    let negative = |k: f64| graph::has_negative_cycle(&g.base, k * tau);
    let mut lo = -g.base.max_weight() / tau - 1.0;
    let mut hi = -g.base.min_weight() / tau;
    if !negative(lo) || negative(hi) {
        return Err(Error::BracketFailure);
    }
    let mut bisections = 0;
    while hi - lo >= tol_c {
        let mid = 0.5 * (lo + hi);
        if negative(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        bisections += 1;
    }
    Ok(CriticalValue { c: 0.5 * (lo + hi), lo, hi, bisections })
}

pub fn mane_critical_value<L: Lagrangian + ?Sized>(
    l: &L,
    grid: TorusGrid,
    tau: f64,
    radius: usize,
    half_width: f64,
    tol_c: f64,
) -> Result<CriticalValue> {
    critical_value_of(&build_action_graph(l, grid, tau, radius, half_width)?, tol_c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StaticKind {
    Static,
    Semistatic,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticReport {
    pub kind: StaticKind,
    /// Worst `|A_{L+c}(γ|[s,t]) − Φ_c(γ(s),γ(t))|`.
    pub semistatic_defect: f64,
    /// Worst `Φ_c(γ(s),γ(t)) + Φ_c(γ(t),γ(s))`.
    pub static_defect: f64,
}

/// Classifies a sampled curve given as `(x, v)` points against `Φ_c`.
///
/// `samples` evenly spaced sample indices are paired; the defects are compared
/// with `tol`, which should scale with the grid spacing.
pub fn static_check<L: Lagrangian + ?Sized>(
    l: &L,
    curve: &Trajectory,
    c: f64,
    potentials: &PotentialMatrix,
    grid: &TorusGrid,
    samples: usize,
    tol: f64,
) -> StaticReport {
    let m = curve.len();
    let mut cumulative = Vec::with_capacity(m);
    let mut acc = 0.0;
    cumulative.push(0.0);
    for i in 1..m {
        let (x0, v0) = curve.points[i - 1];
        let (x1, v1) = curve.points[i];
        acc += 0.5 * curve.dt * (l.value(x0, v0) + c + l.value(x1, v1) + c);
        cumulative.push(acc);
    }
    let picks: Vec<usize> = (0..samples.max(2)).map(|j| j * (m - 1) / (samples.max(2) - 1)).collect();
    let mut semi = 0.0f64;
    let mut stat = 0.0f64;
    for (a, &s) in picks.iter().enumerate() {
        for &t in &picks[a + 1..] {
            let xs = grid.nearest(curve.points[s].0);
            let xt = grid.nearest(curve.points[t].0);
            let fwd = potentials.get(xs, xt);
            let back = potentials.get(xt, xs);
            semi = semi.max((cumulative[t] - cumulative[s] - fwd).abs());
            stat = stat.max((fwd + back).abs());
        }
    }
    let kind = if semi <= tol && stat <= tol {
        StaticKind::Static
    } else if semi <= tol {
        StaticKind::Semistatic
    } else {
        StaticKind::Neither
    };
    StaticReport { kind, semistatic_defect: semi, static_defect: stat }
}
