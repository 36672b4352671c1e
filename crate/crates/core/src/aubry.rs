//! Peierls barrier, Aubry and Mather sets, minimizing measures, foliation
//! cycles, and strong chain recurrence.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::action::ActionGraph;
use crate::error::{invalid, Error, Result};
use crate::graph::{self, Digraph};
use crate::geometry;
use crate::grid::{FiberGrid, ScalarField, TorusGrid};
use crate::math::{self, Vec2};
use crate::lp::{LinearProgram, LpSolver};
use crate::model::{Hamiltonian, Lagrangian};
use crate::weakkam::WeakKamPair;

/// Boolean mask over the nodes of a torus grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSetMask {
    pub grid: TorusGrid,
    pub mask: Vec<bool>,
    pub tol: f64,
}

impl NodeSetMask {
    pub fn from_fn(grid: TorusGrid, tol: f64, f: impl Fn(usize) -> bool) -> Self {
        NodeSetMask { grid, mask: (0..grid.len()).map(f).collect(), tol }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.mask.len() as f64
    }

    pub fn contains(&self, k: usize) -> bool {
        self.mask[k]
    }

    /// Max-norm cell distance from every node to the mask (`usize::MAX` when empty).
    pub fn distance_map(&self) -> Vec<usize> {
        let g = &self.grid;
        let mut dist = vec![usize::MAX; g.len()];
        let mut queue = VecDeque::new();
        for (k, &m) in self.mask.iter().enumerate() {
            if m {
                dist[k] = 0;
                queue.push_back(k);
            }
        }
        let r1: isize = if g.dim() == 1 { 0 } else { 1 };
        while let Some(k) = queue.pop_front() {
            for d1 in -r1..=r1 {
                for d0 in -1..=1 {
                    let j = g.offset(k, [d0, d1]);
                    if dist[j] == usize::MAX {
                        dist[j] = dist[k] + 1;
                        queue.push_back(j);
                    }
                }
            }
        }
        dist
    }

    pub fn dilate(&self, cells: usize) -> Self {
        let d = self.distance_map();
        NodeSetMask { grid: self.grid, mask: d.iter().map(|&v| v <= cells).collect(), tol: self.tol }
    }

    /// Hausdorff distance in cells (max-norm); `usize::MAX` if exactly one side is empty.
    pub fn hausdorff_cells(&self, other: &NodeSetMask) -> usize {
        match (self.is_empty(), other.is_empty()) {
            (true, true) => return 0,
            (true, false) | (false, true) => return usize::MAX,
            _ => {}
        }
        let da = self.distance_map();
        let db = other.distance_map();
        let a = (0..self.mask.len()).filter(|&k| other.mask[k]).map(|k| da[k]).max().unwrap_or(0);
        let b = (0..self.mask.len()).filter(|&k| self.mask[k]).map(|k| db[k]).max().unwrap_or(0);
        a.max(b)
    }

    /// Whether every node of `self` lies within `cells` of `other`.
    pub fn within(&self, other: &NodeSetMask, cells: usize) -> bool {
        let d = other.distance_map();
        self.mask.iter().zip(&d).all(|(&m, &v)| !m || v <= cells)
    }
}

/// Howard reweighting of the action graph at its own critical value, with the
/// critical nodes (those on tight cycles).
#[derive(Debug, Clone)]
pub struct CriticalStructure {
    pub c: f64,
    pub bias: Vec<f64>,
    pub reduced: Digraph,
    pub critical: Vec<bool>,
    /// Strongly connected classes of the tight subgraph that carry a cycle.
    pub classes: Vec<Vec<usize>>,
}

pub fn critical_structure(g: &ActionGraph) -> Result<CriticalStructure> {
    let cm = g.cycle_mean()?;
    let eta = cm.min_mean();
    let c = -eta / g.tau();
    let b = &cm.bias;
    let reduced = g.base().map_weights(|u, v, w| (w - eta + b[v] - b[u]).max(0.0));
    let scale = 1.0 + g.base().weights().iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let eps = 1e-10 * scale;
    let n = g.grid().len();
    let comps = graph::strongly_connected(n, |u, out| {
        for (v, r) in reduced.out_edges(u) {
            if r <= eps {
                out.push(v as u32);
            }
        }
    });
    let members = comps.members();
    let mut critical = vec![false; n];
    let mut classes = Vec::new();
    for class in members {
        let cyclic = class.len() > 1
            || reduced.out_edges(class[0]).any(|(v, r)| v == class[0] && r <= eps);
        if cyclic {
            for &k in &class {
                critical[k] = true;
            }
            classes.push(class);
        }
    }
    Ok(CriticalStructure { c, bias: cm.bias, reduced, critical, classes })
}

/// Peierls barrier at the graph's critical value.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierMatrix {
    pub grid: TorusGrid,
    pub c: f64,
    pub diagonal: Vec<f64>,
    /// Row-major `h(x,y)` when the full matrix was requested.
    pub full: Option<Vec<f64>>,
    /// Step window `[T₁, T₂]` (as times) of the DP cross-check, when one was run.
    pub window: Option<(f64, f64)>,
    pub stabilized: bool,
}

impl BarrierMatrix {
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        if x == y {
            return Some(self.diagonal[x]);
        }
        self.full.as_ref().map(|f| f[x * self.grid.len() + y])
    }

    pub fn diagonal_field(&self) -> ScalarField {
        ScalarField::new(self.grid, self.diagonal.clone()).expect("same grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BarrierOptions {
    /// Compute all pairs (quadratic memory); otherwise only the diagonal.
    pub full: bool,
}

/// `h(x,y) = liminf_T Φ_c(x,y;T)` on the action graph.
///
/// Once the step count exceeds the transient, minimal paths wait on a critical
/// cycle, so the liminf equals `min_z Φ_c(x,z) + Φ_c(z,y)` over critical nodes
/// `z`; this is evaluated exactly with reduced-cost Dijkstra runs.
pub fn peierls_barrier(g: &ActionGraph, opts: &BarrierOptions) -> Result<BarrierMatrix> {
    let cs = critical_structure(g)?;
    let n = g.grid().len();
    let b = &cs.bias;
    let rev = cs.reduced.reversed();
    let crit: Vec<usize> = (0..n).filter(|&k| cs.critical[k]).collect();
    if crit.is_empty() {
        return Err(Error::EmptyAubry);
    }
    let (diagonal, full) = if opts.full {
        let mut d = Vec::with_capacity(n * n);
        for x in 0..n {
            d.push(graph::dijkstra(&cs.reduced, &[(x, 0.0)], f64::INFINITY));
        }
        let mut full = vec![f64::INFINITY; n * n];
        for x in 0..n {
            let row = &mut full[x * n..(x + 1) * n];
            for &z in &crit {
                let a = d[x][z];
                for (y, r) in row.iter_mut().enumerate() {
                    let v = a + d[z][y];
                    if v < *r {
                        *r = v;
                    }
                }
            }
            for (y, r) in row.iter_mut().enumerate() {
                *r += b[x] - b[y];
            }
        }
        let diag = (0..n).map(|x| full[x * n + x]).collect();
        (diag, Some(full))
    } else if cs.classes.len() <= n - crit.len() {
        let mut best = vec![f64::INFINITY; n];
        for class in &cs.classes {
            let src: Vec<(usize, f64)> = class.iter().map(|&z| (z, 0.0)).collect();
            let from_c = graph::dijkstra(&cs.reduced, &src, f64::INFINITY);
            let to_c = graph::dijkstra(&rev, &src, f64::INFINITY);
            for x in 0..n {
                best[x] = best[x].min(to_c[x] + from_c[x]);
            }
        }
        (best, None)
    } else {
        let mut diag = vec![0.0; n];
        for x in 0..n {
            if cs.critical[x] {
                continue;
            }
            let out = graph::dijkstra(&cs.reduced, &[(x, 0.0)], f64::INFINITY);
            let back = graph::dijkstra(&rev, &[(x, 0.0)], f64::INFINITY);
            diag[x] = crit.iter().fold(f64::INFINITY, |m, &z| m.min(out[z] + back[z]));
        }
        (diag, None)
    };
    Ok(BarrierMatrix { grid: *g.grid(), c: cs.c, diagonal, full, window: None, stabilized: true })
}

/// One barrier row by fixed-step dynamic programming: minima of `Φ_c(x,·;nτ)`
/// over consecutive blocks of `block` steps, until two successive block minima
/// agree within `tol`. The step budget doubles once before giving up, in which
/// case the last block minimum is returned with `stabilized = false`.
pub fn barrier_row_dp(g: &ActionGraph, c: f64, x: usize, block: usize, max_steps: usize, tol: f64) -> BarrierRow {
    let n = g.grid().len();
    let ct = c * g.tau();
    let mut cur = vec![f64::INFINITY; n];
    cur[x] = 0.0;
    let mut prev_block: Option<Vec<f64>> = None;
    let mut block_min = vec![f64::INFINITY; n];
    let mut step = 0usize;
    let budget = 2 * max_steps;
    while step < budget {
        let mut next = vec![f64::INFINITY; n];
        for u in 0..n {
            let du = cur[u];
            if du == f64::INFINITY {
                continue;
            }
            for (v, w) in g.base().out_edges(u) {
                let cand = du + w + ct;
                if cand < next[v] {
                    next[v] = cand;
                }
            }
        }
        cur = next;
        step += 1;
        for (m, v) in block_min.iter_mut().zip(&cur) {
            *m = m.min(*v);
        }
        if step % block == 0 {
            if let Some(p) = &prev_block {
                let change = p.iter().zip(&block_min).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if change <= tol {
                    let t = g.tau();
                    return BarrierRow {
                        values: block_min,
                        window: ((step - block) as f64 * t, step as f64 * t),
                        stabilized: true,
                    };
                }
            }
            prev_block = Some(core::mem::replace(&mut block_min, vec![f64::INFINITY; n]));
        }
    }
    let t = g.tau();
    BarrierRow {
        values: prev_block.unwrap_or(block_min),
        window: ((step.saturating_sub(block)) as f64 * t, step as f64 * t),
        stabilized: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierRow {
    pub values: Vec<f64>,
    pub window: (f64, f64),
    pub stabilized: bool,
}

/// `{x : h(x,x) ≤ tol_a}`.
pub fn projected_aubry(barrier: &BarrierMatrix, tol_a: f64) -> Result<NodeSetMask> {
    let mask = NodeSetMask::from_fn(barrier.grid, tol_a, |k| barrier.diagonal[k] <= tol_a);
    if mask.is_empty() {
        return Err(Error::EmptyAubry);
    }
    Ok(mask)
}

/// Covector field over an Aubry mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AubryLift {
    pub points: Vec<(usize, Vec2)>,
    /// Largest difference quotient of the covector between neighbouring mask nodes.
    pub lipschitz: f64,
    /// `max |H(x, p) − c|` over the lift.
    pub energy_defect: f64,
}

/// Lifts the mask by the common derivative of a conjugate pair.
pub fn aubry_lift<H: Hamiltonian + ?Sized>(
    mask: &NodeSetMask,
    pair: &WeakKamPair,
    h: &H,
    tol_d: f64,
) -> Result<AubryLift> {
    let grid = mask.grid;
    if pair.u_minus.grid() != &grid {
        return Err(invalid("mask and weak KAM pair live on different grids"));
    }
    let mut points = Vec::new();
    let mut energy_defect = 0.0f64;
    let mut cov = vec![None; grid.len()];
    for k in (0..grid.len()).filter(|&k| mask.mask[k]) {
        let pm = pair.u_minus.gradient(k);
        let pp = pair.u_plus.gradient(k);
        let gap = math::norm(math::sub(pm, pp));
        if gap > tol_d {
            return Err(Error::DerivativeMismatch { node: k, gap });
        }
        energy_defect = energy_defect.max((h.value(grid.coord(k), pm) - pair.c).abs());
        cov[k] = Some(pm);
        points.push((k, pm));
    }
    let mut lipschitz = 0.0f64;
    for &(k, p) in &points {
        for d in [[1, 0], [0, 1], [1, 1], [1, -1]] {
            let j = grid.offset(k, d);
            if j == k {
                continue;
            }
            if let Some(q) = cov[j] {
                let dist = grid.distance(grid.coord(k), grid.coord(j));
                if dist > 0.0 {
                    lipschitz = lipschitz.max(math::norm(math::sub(p, q)) / dist);
                }
            }
        }
    }
    Ok(AubryLift { points, lipschitz, energy_defect })
}

/// Product of a base grid and a velocity fiber box; node `x·|fiber| + v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseGrid {
    pub base: TorusGrid,
    pub fiber: FiberGrid,
}

impl PhaseGrid {
    pub fn new(base: TorusGrid, fiber: FiberGrid) -> Result<Self> {
        if base.dim() != fiber.dim() {
            return Err(invalid("base and fiber dimensions differ"));
        }
        Ok(PhaseGrid { base, fiber })
    }

    pub fn len(&self) -> usize {
        self.base.len() * self.fiber.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(base node, fiber node)` of a phase node.
    pub fn split(&self, k: usize) -> (usize, usize) {
        (k / self.fiber.len(), k % self.fiber.len())
    }

    pub fn point(&self, k: usize) -> (Vec2, Vec2) {
        let (x, v) = self.split(k);
        (self.base.coord(x), self.fiber.point(v))
    }
}

/// Time-`τ` transfer operator of the Euler–Lagrange flow with multilinear
/// scatter onto the phase grid, stored as sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferChain {
    pub phase: PhaseGrid,
    pub tau: f64,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

const SNAP: f64 = 1e-9;

/// One Euler–Lagrange step of length `tau`, through the Hamiltonian flow.
pub fn euler_lagrange_step<M>(model: &M, x: Vec2, v: Vec2, tau: f64) -> (Vec2, Vec2)
where
    M: Lagrangian + Hamiltonian + ?Sized,
{
    let p = Lagrangian::grad_v(model, x, v);
    let steps = math::ceil(tau.abs() / 1e-2).max(1.0) as usize;
    let dt = tau / steps as f64;
    let field = |x: Vec2, p: Vec2| (Hamiltonian::grad_p(model, x, p), math::scale(-1.0, Hamiltonian::grad_x(model, x, p)));
    let (mut x, mut p) = (x, p);
    for _ in 0..steps {
        (x, p) = geometry::rk4_step(&field, x, p, dt);
    }
    (x, Hamiltonian::grad_p(model, x, p))
}

impl TransferChain {
    pub fn build<M>(model: &M, phase: PhaseGrid, tau: f64) -> Result<Self>
    where
        M: Lagrangian + Hamiltonian + ?Sized,
    {
        if !(tau > 0.0) {
            return Err(invalid("transfer step must be positive"));
        }
        let n = phase.len();
        let fl = phase.fiber.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(16 * n);
        let mut weights = Vec::with_capacity(16 * n);
        offsets.push(0);
        let mut row: Vec<(u32, f64)> = Vec::with_capacity(16);
        for k in 0..n {
            let (x, v) = phase.point(k);
            let (x1, v1) = euler_lagrange_step(model, x, v, tau);
            row.clear();
            for (bx, wx) in phase.base.stencil(x1) {
                if wx <= 0.0 {
                    continue;
                }
                for (fv, wv) in phase.fiber.stencil(v1) {
                    let w = wx * wv;
                    if w > SNAP {
                        row.push(((bx * fl + fv) as u32, w));
                    }
                }
            }
            row.sort_by_key(|e| e.0);
            let total: f64 = row.iter().map(|e| e.1).sum();
            let mut last = u32::MAX;
            for &(t, w) in &row {
                if t == last {
                    *weights.last_mut().expect("merged entry") += w / total;
                } else {
                    targets.push(t);
                    weights.push(w / total);
                    last = t;
                }
            }
            offsets.push(targets.len());
        }
        Ok(TransferChain { phase, tau, offsets, targets, weights })
    }

    /// Chain from explicit rows of `(target, probability)`.
    pub fn from_rows(phase: PhaseGrid, tau: f64, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        if rows.len() != phase.len() {
            return Err(invalid("one row per phase node is required"));
        }
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for r in rows {
            let total: f64 = r.iter().map(|e| e.1).sum();
            if r.is_empty() || r.iter().any(|e| e.0 >= phase.len() || !(e.1 > 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(invalid("rows must be probability vectors over phase nodes"));
            }
            targets.extend(r.iter().map(|e| e.0 as u32));
            weights.extend(r.iter().map(|e| e.1));
            offsets.push(targets.len());
        }
        Ok(TransferChain { phase, tau, offsets, targets, weights })
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[k]..self.offsets[k + 1];
        self.targets[r.clone()].iter().zip(&self.weights[r]).map(|(&t, &w)| (t as usize, w))
    }

    /// Push-forward of a dense measure.
    pub fn push(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; mu.len()];
        for (k, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                for (t, w) in self.row(k) {
                    out[t] += m * w;
                }
            }
        }
        out
    }
}

/// Probability weights on phase-grid nodes, sorted by node.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub phase: PhaseGrid,
    pub entries: Vec<(usize, f64)>,
}

impl DiscreteMeasure {
    pub fn mass(&self) -> f64 {
        math::ordered_sum(self.entries.iter().map(|e| e.1))
    }

    pub fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        math::ordered_sum(self.entries.iter().map(|&(k, w)| w * f(k)))
    }

    pub fn dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.phase.len()];
        for &(k, w) in &self.entries {
            d[k] = w;
        }
        d
    }

    /// `‖Pμ − μ‖₁`.
    pub fn invariance_defect(&self, chain: &TransferChain) -> f64 {
        let d = self.dense();
        let p = chain.push(&d);
        math::ordered_sum(p.iter().zip(&d).map(|(a, b)| (a - b).abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatherSolution {
    /// Stationary measures of the minimizing closed classes.
    pub measures: Vec<DiscreteMeasure>,
    /// `min ∫L dμ` over invariant probability measures; `−optimum` estimates `c`.
    pub optimum: f64,
    pub closed_classes: usize,
}

/// Lagrangian sampled on the phase grid.
pub fn phase_values<L: Lagrangian + ?Sized>(l: &L, phase: &PhaseGrid) -> Vec<f64> {
    (0..phase.len())
        .map(|k| {
            let (x, v) = phase.point(k);
            l.value(x, v)
        })
        .collect()
}

/// `min Σ L μ` over probability vectors with `Pμ = μ`.
///
/// Invariant probability vectors of a finite Markov chain are the convex hull
/// of the stationary laws of its closed classes, so the optimum is the least
/// stationary mean of `L` over closed classes. Classes whose smallest value of
/// `L` cannot beat the incumbent are skipped; classes are visited from small to
/// large so that short exact cycles set the incumbent early.
pub fn mather_lp(chain: &TransferChain, lvals: &[f64], tie_tol: f64) -> Result<MatherSolution> {
    let n = chain.len();
    if lvals.len() != n {
        return Err(invalid("one Lagrangian value per phase node is required"));
    }
    let comps = graph::strongly_connected(n, |u, out| out.extend(chain.row(u).map(|(t, _)| t as u32)));
    let mut classes: Vec<Vec<usize>> = comps
        .members()
        .into_iter()
        .enumerate()
        .filter(|(c, _)| comps.closed[*c])
        .map(|(_, m)| m)
        .collect();
    let closed_classes = classes.len();
    classes.sort_by_key(|m| (m.len(), m[0]));
    let mut best = f64::INFINITY;
    let mut measures: Vec<DiscreteMeasure> = Vec::new();
    for class in classes {
        let (lo, hi) = class.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &k| (a.min(lvals[k]), b.max(lvals[k])));
        let tie_possible = hi <= best + tie_tol;
        if lo >= best - tie_tol && !tie_possible {
            continue;
        }
        let mu = stationary(chain, &class)?;
        let mean = math::ordered_sum(mu.iter().map(|&(k, w)| w * lvals[k]));
        if mean < best - tie_tol {
            best = mean;
            measures.clear();
        }
        if mean <= best + tie_tol {
            measures.push(DiscreteMeasure { phase: chain.phase, entries: mu });
        }
    }
    if measures.is_empty() {
        return Err(Error::Infeasible);
    }
    Ok(MatherSolution { measures, optimum: best, closed_classes })
}

/// Stationary law of a closed class by lazy power iteration.
fn stationary(chain: &TransferChain, class: &[usize]) -> Result<Vec<(usize, f64)>> {
    let m = class.len();
    let mut sorted = class.to_vec();
    sorted.sort_unstable();
    let class = &sorted[..];
    let rows: Vec<Vec<(usize, f64)>> = class
        .iter()
        .map(|&k| chain.row(k).filter_map(|(t, w)| class.binary_search(&t).ok().map(|j| (j, w))).collect())
        .collect();
    let mut mu = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    let max_iter = 200_000;
    for _ in 0..max_iter {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (i, r) in rows.iter().enumerate() {
            for &(j, w) in r {
                next[j] += mu[i] * w;
            }
        }
        let mut change = 0.0;
        for (a, b) in mu.iter_mut().zip(&next) {
            let v = 0.5 * *a + 0.5 * b;
            change += (v - *a).abs();
            *a = v;
        }
        if change < 1e-13 {
            let total = math::ordered_sum(mu.iter().copied());
            return Ok(class.iter().zip(&mu).map(|(&k, &w)| (k, w / total)).collect());
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual: f64::NAN })
}

/// Projected Mather set together with the phase support it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MatherSet {
    /// Base projection of the support, dilated by one cell.
    pub base: NodeSetMask,
    /// Phase nodes carrying weight above the threshold.
    pub support: Vec<usize>,
}

/// Union of measure supports (weight above `tol·max`), checked to be a graph over the base.
pub fn mather_set(measures: &[DiscreteMeasure], tol: f64) -> Result<MatherSet> {
    let phase = match measures.first() {
        Some(m) => m.phase,
        None => return Err(invalid("at least one measure is required")),
    };
    let mut support = Vec::new();
    for m in measures {
        let top = m.entries.iter().fold(0.0f64, |a, e| a.max(e.1));
        support.extend(m.entries.iter().filter(|e| e.1 > tol * top).map(|e| e.0));
    }
    support.sort_unstable();
    support.dedup();
    let fiber = phase.fiber;
    let mut velocities: Vec<Option<(Vec2, Vec2)>> = vec![None; phase.base.len()];
    for &k in &support {
        let (x, v) = phase.split(k);
        let p = fiber.point(v);
        let slot = &mut velocities[x];
        *slot = Some(match *slot {
            None => (p, p),
            Some((lo, hi)) => ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])]),
        });
    }
    for (x, slot) in velocities.iter().enumerate() {
        if let Some((lo, hi)) = slot {
            let separation = math::norm(math::sub(*hi, *lo));
            if separation > 2.0 * fiber.spacing() * (1.0 + 1e-9) {
                return Err(Error::GraphViolation { node: x, separation });
            }
        }
    }
    let base = NodeSetMask::from_fn(phase.base, tol, |x| velocities[x].is_some()).dilate(1);
    Ok(MatherSet { base, support })
}

/// Invariant measure on samples `(x, p)` of a hypersurface together with the
/// Hamiltonian vector field `(ẋ, ṗ)` at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FoliationCycle {
    pub points: Vec<(Vec2, Vec2)>,
    pub field: Vec<(Vec2, Vec2)>,
    pub weights: Vec<f64>,
}

impl FoliationCycle {
    /// Lifts a phase-grid measure through the Legendre map.
    pub fn from_measure<M>(model: &M, mu: &DiscreteMeasure) -> Self
    where
        M: Lagrangian + Hamiltonian + ?Sized,
    {
        let mut points = Vec::with_capacity(mu.entries.len());
        let mut field = Vec::with_capacity(mu.entries.len());
        let mut weights = Vec::with_capacity(mu.entries.len());
        for &(k, w) in &mu.entries {
            let (x, v) = mu.phase.point(k);
            let p = Lagrangian::grad_v(model, x, v);
            points.push((x, p));
            field.push((Hamiltonian::grad_p(model, x, p), math::scale(-1.0, Hamiltonian::grad_x(model, x, p))));
            weights.push(w);
        }
        FoliationCycle { points, field, weights }
    }

    /// `f(dg)` for a function `g(x, p)` given by its gradient.
    pub fn boundary_defect(&self, grad_g: impl Fn(Vec2, Vec2) -> (Vec2, Vec2)) -> f64 {
        foliation_pairing(self, |x, p, vx, vp| {
            let (gx, gp) = grad_g(x, p);
            math::dot(gx, vx) + math::dot(gp, vp)
        })
    }
}

/// `Σ μ_i ω_{z_i}(V(z_i))` for a one-form `ω(x, p; ẋ, ṗ)`.
pub fn foliation_pairing(cycle: &FoliationCycle, form: impl Fn(Vec2, Vec2, Vec2, Vec2) -> f64) -> f64 {
    math::ordered_sum(
        cycle
            .points
            .iter()
            .zip(&cycle.field)
            .zip(&cycle.weights)
            .map(|((&(x, p), &(vx, vp)), &w)| w * form(x, p, vx, vp)),
    )
}

/// The Liouville form `p·dx`.
pub fn liouville_form(_x: Vec2, p: Vec2, vx: Vec2, _vp: Vec2) -> f64 {
    math::dot(p, vx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    /// Minimal flow time `T` of each chain segment; segments use `t ∈ [T, 2T]`.
    pub t_min: f64,
    /// Largest admissible summed jump length.
    pub tol_jump: f64,
}

/// Strong chain recurrent nodes of a base flow `ẋ = f(x)` sampled on `grid`.
///
/// From every node the flow is integrated over `[T, 2T]`; an edge to node `z`
/// costs the distance from `z` to that arc. A node belongs to the mask when
/// its cheapest cycle has total cost at most `tol_jump`.
pub fn strong_chain_recurrent(f: impl Fn(Vec2) -> Vec2, grid: TorusGrid, opts: &ChainOptions) -> Result<NodeSetMask> {
    if !(opts.t_min > 0.0) || !(opts.tol_jump >= 0.0) {
        return Err(invalid("chain time and jump tolerance must be positive"));
    }
    let g = chain_graph(&f, grid, opts);
    let mask = (0..grid.len())
        .map(|x| {
            let sources: Vec<(usize, f64)> = g.out_edges(x).collect();
            let d = graph::dijkstra(&g, &sources, opts.tol_jump);
            d[x] <= opts.tol_jump
        })
        .collect();
    Ok(NodeSetMask { grid, mask, tol: opts.tol_jump })
}

fn chain_graph(f: &impl Fn(Vec2) -> Vec2, grid: TorusGrid, opts: &ChainOptions) -> Digraph {
    let h = grid.h();
    let speed = (0..grid.len()).fold(1e-12f64, |m, k| m.max(math::norm(f(grid.coord(k)))));
    let dt = (0.5 * h / speed).min(opts.t_min / 4.0);
    let steps_to_t = math::ceil(opts.t_min / dt) as usize;
    let dt = opts.t_min / steps_to_t as f64;
    let reach = math::ceil(opts.tol_jump / h) as isize + 1;
    let r1 = if grid.dim() == 1 { 0 } else { reach };
    let mut best = vec![f64::INFINITY; grid.len()];
    let mut touched: Vec<usize> = Vec::new();
    Digraph::build(grid.len(), |x, push| {
        let mut a = grid.coord(x);
        for _ in 0..steps_to_t {
            a = geometry::rk4_field_step(f, a, dt);
        }
        for _ in 0..steps_to_t {
            let b = geometry::rk4_field_step(f, a, dt);
            let centre = grid.nearest(a);
            for d1 in -r1..=r1 {
                for d0 in -reach..=reach {
                    let z = grid.offset(centre, [d0, d1]);
                    let c = segment_distance(&grid, grid.coord(z), a, b);
                    if c <= opts.tol_jump && c < best[z] {
                        if best[z] == f64::INFINITY {
                            touched.push(z);
                        }
                        best[z] = c;
                    }
                }
            }
            a = b;
        }
        touched.sort_unstable();
        for &z in &touched {
            push(z, best[z]);
            best[z] = f64::INFINITY;
        }
        touched.clear();
    })
}

/// Periodic distance from `z` to the segment `[a, b]` (short segments only).
fn segment_distance(grid: &TorusGrid, z: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = grid.displacement(a, b);
    let az = grid.displacement(a, z);
    let len2 = math::dot(ab, ab);
    let t = if len2 > 0.0 { (math::dot(az, ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    math::norm(math::sub(az, math::scale(t, ab)))
}

/// The same LP solved densely with the ℓ₁-relaxed invariance `‖Pμ − μ‖₁ ≤ tol_inv`.
///
/// Only suitable for small chains; used to cross-check [`mather_lp`].
pub fn mather_lp_dense(chain: &TransferChain, lvals: &[f64], tol_inv: f64, solver: &impl LpSolver) -> Result<(Vec<f64>, f64)> {
    let n = chain.len();
    // variables: μ (n), s (n) with s ≥ |Pμ − μ|
    let mut obj = vec![0.0; 2 * n];
    obj[..n].copy_from_slice(lvals);
    let mut lp = LinearProgram::new(obj);
    let mut mass = vec![0.0; 2 * n];
    mass[..n].iter_mut().for_each(|v| *v = 1.0);
    lp.add_eq(mass, 1.0);
    let mut pt = vec![vec![0.0; n]; n];
    for i in 0..n {
        for (j, w) in chain.row(i) {
            pt[j][i] += w;
        }
    }
    for j in 0..n {
        let mut plus = vec![0.0; 2 * n];
        for i in 0..n {
            plus[i] = pt[j][i];
        }
        plus[j] -= 1.0;
        let minus: Vec<f64> = plus.iter().map(|v| -v).collect();
        let (mut plus, mut minus) = (plus, minus);
        plus[n + j] = -1.0;
        minus[n + j] = -1.0;
        lp.add_le(plus, 0.0);
        lp.add_le(minus, 0.0);
    }
    let mut budget = vec![0.0; 2 * n];
    budget[n..].iter_mut().for_each(|v| *v = 1.0);
    lp.add_le(budget, tol_inv);
    let sol = solver.solve(&lp)?;
    Ok((sol.x[..n].to_vec(), sol.objective))
}
