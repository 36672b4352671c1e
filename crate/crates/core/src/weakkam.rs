//! Lax–Oleinik operators on the action graph, weak KAM pairs, and the inf-max
//! formula `c = inf_u max_x H(x, du(x))`.

use alloc::vec;
use alloc::vec::Vec;

use crate::action::ActionGraph;
use crate::error::{Error, Result};
use crate::graph::{self, Digraph};
use crate::grid::{ScalarField, TorusGrid};
use crate::math;
use crate::model::Hamiltonian;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Backward,
    Forward,
}

/// `(Tu)(x) = min_y [u(y) + w₀(y,x)]` over the reversed graph.
fn backward_into(rev: &Digraph, u: &[f64], out: &mut [f64]) {
    for (x, o) in out.iter_mut().enumerate() {
        let mut best = f64::INFINITY;
        for (y, w) in rev.out_edges(x) {
            let c = u[y] + w;
            if c < best {
                best = c;
            }
        }
        *o = best;
    }
}

/// `(Ťu)(x) = max_y [u(y) − w₀(x,y)]`.
fn forward_into(fwd: &Digraph, u: &[f64], out: &mut [f64]) {
    for (x, o) in out.iter_mut().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for (y, w) in fwd.out_edges(x) {
            let c = u[y] - w;
            if c > best {
                best = c;
            }
        }
        *o = best;
    }
}

/// One Lax–Oleinik step without compensation.
pub fn lax_oleinik_step(u: &ScalarField, g: &ActionGraph, direction: Direction) -> ScalarField {
    let mut out = vec![0.0; u.values().len()];
    match direction {
        Direction::Backward => backward_into(&g.base().reversed(), u.values(), &mut out),
        Direction::Forward => forward_into(g.base(), u.values(), &mut out),
    }
    ScalarField::new(*u.grid(), out).expect("same grid")
}

/// Precomputed operator pair for repeated application.
struct Operators<'a> {
    fwd: &'a Digraph,
    rev: Digraph,
}

impl<'a> Operators<'a> {
    fn new(g: &'a ActionGraph) -> Self {
        Operators { fwd: g.base(), rev: g.base().reversed() }
    }

    fn apply(&self, dir: Direction, u: &[f64], out: &mut [f64]) {
        match dir {
            Direction::Backward => backward_into(&self.rev, u, out),
            Direction::Forward => forward_into(self.fwd, u, out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakKamOptions {
    /// Convergence threshold on the spread of `Tu − u`, in units of `τ`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for WeakKamOptions {
    fn default() -> Self {
        WeakKamOptions { tol: 1e-6, max_iters: 20_000 }
    }
}

/// Statistics of `|H(x, du(x)) − c|` away from gradient jumps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub p95: f64,
    pub max: f64,
    /// Nodes excluded because one-sided differences jump by more than the threshold.
    pub kinks: usize,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakKamPair {
    pub u_minus: ScalarField,
    pub u_plus: ScalarField,
    /// Critical value shared by both operators (the graph's eigenvalue).
    pub c: f64,
    pub c_backward: f64,
    pub c_forward: f64,
    pub iterations: usize,
    pub residual: ResidualStats,
}

/// Damped iteration `u ← ½u + ½(Su)` with `S = T` or `Ť`, until the spread of
/// `Su − u` is below `tol·τ`. Returns the iterate, the final `(min, max)` of
/// `Su − u`, and the number of sweeps.
fn damped_iteration(
    ops: &Operators<'_>,
    dir: Direction,
    mut u: Vec<f64>,
    tau: f64,
    opts: &WeakKamOptions,
) -> Result<(Vec<f64>, (f64, f64), usize)> {
    let mut su = vec![0.0; u.len()];
    let mut spread = f64::INFINITY;
    for it in 1..=opts.max_iters {
        ops.apply(dir, &u, &mut su);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (a, b) in su.iter().zip(&u) {
            let d = a - b;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        spread = hi - lo;
        if spread <= opts.tol * tau {
            return Ok((u, (lo, hi), it));
        }
        let shift = 0.5 * (lo + hi);
        for (a, b) in u.iter_mut().zip(&su) {
            *a = 0.5 * *a + 0.5 * (b - shift);
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iters, residual: spread / tau })
}

/// Exact fixed point of the compensated backward operator near `u`, by policy
/// iteration anchored on `u`; returns it with the additive eigenvalue.
fn polish(ops: &Operators<'_>, u: &[f64]) -> Result<(Vec<f64>, f64)> {
    let cm = graph::min_cycle_mean(&ops.rev, Some(u), Some(&argmin_policy(&ops.rev, u)))?;
    let eta = cm.min_mean();
    Ok((cm.bias, eta))
}

fn argmin_policy(g: &Digraph, b: &[f64]) -> Vec<u32> {
    (0..g.node_count())
        .map(|x| {
            let mut best = (f64::INFINITY, 0u32);
            for (y, w) in g.out_edges(x) {
                if w + b[y] < best.0 {
                    best = (w + b[y], y as u32);
                }
            }
            best.1
        })
        .collect()
}

fn shift_stats(ops: &Operators<'_>, dir: Direction, u: &[f64]) -> (f64, f64) {
    let mut su = vec![0.0; u.len()];
    ops.apply(dir, u, &mut su);
    su.iter().zip(u).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
        (lo.min(a - b), hi.max(a - b))
    })
}

/// Weak KAM pair from the zero potential.
///
/// `u₋` is the limit of the damped backward iteration, polished to an exact
/// fixed point; `u₊` is the compensated forward limit from `u₋`, so the pair is
/// conjugate. `u₋` is normalized to `min = 0` and `u₊` receives the same
/// constant so that conjugacy is preserved.
pub fn solve_weak_kam<H: Hamiltonian + ?Sized>(
    g: &ActionGraph,
    h: &H,
    opts: &WeakKamOptions,
) -> Result<WeakKamPair> {
    let ops = Operators::new(g);
    let tau = g.tau();
    let n = g.grid().len();
    let (u, _, it_b) = damped_iteration(&ops, Direction::Backward, vec![0.0; n], tau, opts)?;
    let (mut um, eta) = polish(&ops, &u)?;
    let (lo, hi) = shift_stats(&ops, Direction::Backward, &um);
    let c_backward = -0.5 * (lo + hi) / tau;

    // exact compensation keeps the gauge of u₋, so the limit is its conjugate
    let (mut up, it_f) = compensated_limit(&ops, Direction::Forward, um.clone(), eta, opts)?;
    let (lo, hi) = shift_stats(&ops, Direction::Forward, &up);
    let c_forward = 0.5 * (lo + hi) / tau;

    if (c_backward - c_forward).abs() > 10.0 * opts.tol.max(1e-12) {
        return Err(Error::CMismatch { backward: c_backward, forward: c_forward });
    }
    let m = um.iter().copied().fold(f64::INFINITY, f64::min);
    um.iter_mut().for_each(|x| *x -= m);
    up.iter_mut().for_each(|x| *x -= m);
    let grid = *g.grid();
    let u_minus = ScalarField::new(grid, um)?;
    let u_plus = ScalarField::new(grid, up)?;
    let c = 0.5 * (c_backward + c_forward);
    let residual = hj_residuals(h, &u_minus, c, 10.0 * grid.h());
    Ok(WeakKamPair { u_minus, u_plus, c, c_backward, c_forward, iterations: it_b + it_f, residual })
}

/// `sup |T u + cτ − u|`.
pub fn fixed_point_residual(g: &ActionGraph, u: &ScalarField, c: f64) -> f64 {
    let tu = lax_oleinik_step(u, g, Direction::Backward);
    let ct = c * g.tau();
    tu.values().iter().zip(u.values()).fold(0.0, |m, (a, b)| f64::max(m, (a + ct - b).abs()))
}

/// `|H(x, du(x)) − c|` statistics, skipping nodes whose one-sided differences jump by more than `jump`.
pub fn hj_residuals<H: Hamiltonian + ?Sized>(h: &H, u: &ScalarField, c: f64, jump: f64) -> ResidualStats {
    let grid = u.grid();
    let mut vals = Vec::with_capacity(grid.len());
    let mut kinks = 0;
    for k in 0..grid.len() {
        if u.is_kink(k, jump) {
            kinks += 1;
            continue;
        }
        vals.push((h.value(grid.coord(k), u.gradient(k)) - c).abs());
    }
    vals.sort_by(f64::total_cmp);
    let pick = |q: f64| {
        if vals.is_empty() {
            0.0
        } else {
            vals[((q * (vals.len() - 1) as f64) as usize).min(vals.len() - 1)]
        }
    };
    ResidualStats { p95: pick(0.95), max: pick(1.0), kinks, evaluated: vals.len() }
}

/// Fraction of nodes with `|H(x, du(x)) − c| ≤ tol`, counting kinks as failures.
pub fn residual_fraction<H: Hamiltonian + ?Sized>(h: &H, u: &ScalarField, c: f64, tol: f64) -> f64 {
    let grid = u.grid();
    let ok = (0..grid.len())
        .filter(|&k| (h.value(grid.coord(k), u.gradient(k)) - c).abs() <= tol)
        .count();
    ok as f64 / grid.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominationReport {
    pub fraction: f64,
    pub threshold: f64,
    pub pass: bool,
    pub max_excess: f64,
}

/// Checks `H(x, du(x)) ≤ c + tol_r` node-wise; passes when the failing fraction
/// is at most `kink_const / N` (the expected measure of gradient jumps).
pub fn dominated_check<H: Hamiltonian + ?Sized>(
    u: &ScalarField,
    h: &H,
    c: f64,
    tol_r: f64,
    kink_const: f64,
) -> DominationReport {
    let grid = u.grid();
    let mut ok = 0usize;
    let mut max_excess = f64::NEG_INFINITY;
    for k in 0..grid.len() {
        let e = h.value(grid.coord(k), u.gradient(k)) - c;
        max_excess = max_excess.max(e);
        if e <= tol_r {
            ok += 1;
        }
    }
    let fraction = ok as f64 / grid.len() as f64;
    let n_axis = grid.shape()[0] as f64;
    let threshold = 1.0 - kink_const / n_axis;
    DominationReport { fraction, threshold, pass: fraction >= threshold, max_excess }
}

/// Conjugate pair sandwiching a dominated `u`: `u₊ ≤ u ≤ u₋`.
///
/// `c` must match the graph's critical value within `10·tol`; the compensated
/// iterations then use the graph's exact eigenvalue so they neither drift nor
/// oscillate (the damping removes periodicity).
pub fn conjugate_pair<H: Hamiltonian + ?Sized>(
    u: &ScalarField,
    g: &ActionGraph,
    h: &H,
    c: f64,
    tol_r: f64,
    opts: &WeakKamOptions,
) -> Result<WeakKamPair> {
    let dom = dominated_check(u, h, c, tol_r, 4.0);
    if !dom.pass {
        return Err(Error::DominationViolated { fraction: dom.fraction });
    }
    let ops = Operators::new(g);
    let tau = g.tau();
    let cm = graph::min_cycle_mean(g.base(), None, None)?;
    let cg = -cm.min_mean() / tau;
    if (cg - c).abs() > 10.0 * tol_r.max(opts.tol) {
        return Err(Error::CMismatch { backward: cg, forward: c });
    }
    let ct = cg * tau;
    let (um, it_b) = compensated_limit(&ops, Direction::Backward, u.values().to_vec(), ct, opts)?;
    let (up, it_f) = compensated_limit(&ops, Direction::Forward, u.values().to_vec(), -ct, opts)?;
    let grid = *g.grid();
    let u_minus = ScalarField::new(grid, um)?;
    let u_plus = ScalarField::new(grid, up)?;
    let residual = hj_residuals(h, &u_minus, cg, 10.0 * grid.h());
    Ok(WeakKamPair { u_minus, u_plus, c: cg, c_backward: cg, c_forward: cg, iterations: it_b + it_f, residual })
}

fn compensated_limit(
    ops: &Operators<'_>,
    dir: Direction,
    mut u: Vec<f64>,
    comp: f64,
    opts: &WeakKamOptions,
) -> Result<(Vec<f64>, usize)> {
    let mut su = vec![0.0; u.len()];
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_iters {
        ops.apply(dir, &u, &mut su);
        change = 0.0;
        for (a, b) in u.iter_mut().zip(&su) {
            let next = 0.5 * *a + 0.5 * (b + comp);
            change = change.max((next - *a).abs());
            *a = next;
        }
        if change <= 1e-13 * (1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
            return Ok((u, it));
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iters, residual: change })
}

/// Backward calibrating chain of `u₋` from `x`: repeatedly the argmin predecessor.
pub fn calibrating_chain(g: &ActionGraph, u_minus: &ScalarField, x: usize, steps: usize) -> Vec<usize> {
    let rev = g.base().reversed();
    let u = u_minus.values();
    let mut chain = vec![x];
    let mut cur = x;
    for _ in 0..steps {
        let mut best = (f64::INFINITY, cur);
        for (y, w) in rev.out_edges(cur) {
            if u[y] + w < best.0 {
                best = (u[y] + w, y);
            }
        }
        cur = best.1;
        chain.push(cur);
    }
    chain
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxResult {
    /// Hard `max_x H(x, du(x))` of the best iterate (an upper bound for `c`).
    pub value: f64,
    pub potential: ScalarField,
    pub iterations: usize,
    /// Set when the descent stopped making progress before the schedule ended.
    pub stalled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimaxOptions {
    pub beta_start: f64,
    pub beta_end: f64,
    pub stages: usize,
    pub iters_per_stage: usize,
}

impl Default for MinimaxOptions {
    fn default() -> Self {
        MinimaxOptions { beta_start: 10.0, beta_end: 1000.0, stages: 8, iters_per_stage: 150 }
    }
}

fn energies<H: Hamiltonian + ?Sized>(h: &H, grid: &TorusGrid, u: &ScalarField, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        *o = h.value(grid.coord(k), u.gradient(k));
    }
}

fn softmax(beta: f64, e: &[f64]) -> f64 {
    let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s = e.iter().fold(0.0, |a, &v| a + math::exp(beta * (v - m)));
    m + math::ln(s) / beta
}

/// Minimizes the softmax of `H(x, du(x))` over grid potentials from `u = 0`.
pub fn minimax_critical_value<H: Hamiltonian + ?Sized>(
    h: &H,
    grid: TorusGrid,
    opts: &MinimaxOptions,
) -> MinimaxResult {
    let n = grid.len();
    let mut u = ScalarField::constant(grid, 0.0);
    let mut e = vec![0.0; n];
    energies(h, &grid, &u, &mut e);
    let mut best_val = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best_u = u.clone();
    let mut grad = vec![0.0; n];
    let mut trial = u.clone();
    let mut trial_e = vec![0.0; n];
    let mut iterations = 0;
    let mut stalled = false;
    let ratio = if opts.stages > 1 {
        math::exp(math::ln(opts.beta_end / opts.beta_start) / (opts.stages - 1) as f64)
    } else {
        1.0
    };
    let mut step = 1.0;
    for stage in 0..opts.stages {
        let beta = opts.beta_start * math::exp(math::ln(ratio) * stage as f64);
        let mut stage_stall = false;
        for _ in 0..opts.iters_per_stage {
            iterations += 1;
            let f = softmax(beta, &e);
            let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z = e.iter().fold(0.0, |a, &v| a + math::exp(beta * (v - m)));
            grad.iter_mut().for_each(|g| *g = 0.0);
            for k in 0..n {
                let pi = math::exp(beta * (e[k] - m)) / z;
                if pi < 1e-300 {
                    continue;
                }
                let dp = h.grad_p(grid.coord(k), u.gradient(k));
                for axis in 0..grid.dim() {
                    let mut d = [0isize; 2];
                    d[axis] = 1;
                    let c = pi * dp[axis] / (2.0 * grid.spacing(axis));
                    grad[grid.offset(k, d)] += c;
                    d[axis] = -1;
                    grad[grid.offset(k, d)] -= c;
                }
            }
            let gnorm2 = grad.iter().fold(0.0, |a, g| a + g * g);
            if gnorm2 < 1e-30 {
                stage_stall = true;
                break;
            }
            let mut accepted = false;
            for _ in 0..40 {
                for (t, (a, g)) in trial.values_mut().iter_mut().zip(u.values().iter().zip(&grad)) {
                    *t = a - step * g;
                }
                energies(h, &grid, &trial, &mut trial_e);
                if softmax(beta, &trial_e) <= f - 1e-4 * step * gnorm2 {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                stage_stall = true;
                break;
            }
            core::mem::swap(&mut u, &mut trial);
            core::mem::swap(&mut e, &mut trial_e);
            step *= 2.0;
            let hard = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hard < best_val {
                best_val = hard;
                best_u = u.clone();
            }
        }
        if stage + 1 == opts.stages {
            stalled = stage_stall;
        }
    }
    MinimaxResult { value: best_val, potential: best_u, iterations, stalled }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::build_action_graph;
    use crate::model::QuadraticModel;
    use proptest::prelude::*;

    fn hamex_graph(n: usize) -> (ActionGraph, QuadraticModel) {
        let g = TorusGrid::square(n).unwrap();
        let m = QuadraticModel::hamex();
        (build_action_graph(&m, g, g.h(), 3, 4.0).unwrap(), m)
    }

    #[test]
    fn operator_basics_on_flat_model() {
        let g = TorusGrid::square(16).unwrap();
        let m = QuadraticModel::flat_half(2);
        let ag = build_action_graph(&m, g, g.h(), 2, 3.0).unwrap();
        let u = ScalarField::constant(g, 2.5);
        assert_eq!(lax_oleinik_step(&u, &ag, Direction::Backward), u);
        assert_eq!(lax_oleinik_step(&u, &ag, Direction::Forward), u);
        let pair = solve_weak_kam(&ag, &m, &WeakKamOptions::default()).unwrap();
        assert!(pair.c.abs() < 1e-12);
        assert!(pair.u_minus.range() < 1e-12 && pair.u_plus.range() < 1e-12);
    }

    #[test]
    fn hamex_pair() {
        let g = TorusGrid::square(32).unwrap();
        let m = QuadraticModel::hamex();
        let ag = build_action_graph(&m, g, 4.0 * g.h(), 9, 4.0).unwrap();
        let pair = solve_weak_kam(&ag, &m, &WeakKamOptions::default()).unwrap();
        assert!((pair.c - 1.0).abs() < 1e-6, "{}", pair.c);
        assert!(fixed_point_residual(&ag, &pair.u_minus, pair.c_backward) <= 1e-4 * pair.u_minus.range().max(1e-12));
        for (a, b) in pair.u_plus.values().iter().zip(pair.u_minus.values()) {
            assert!(*a <= *b + 1e-9);
        }
        assert!(residual_fraction(&m, &pair.u_minus, pair.c, 0.05) >= 0.9);
    }

    #[test]
    fn domination_examples() {
        let g = TorusGrid::square(32).unwrap();
        let m = QuadraticModel::hamex();
        let zero = ScalarField::constant(g, 0.0);
        assert!(dominated_check(&zero, &m, 1.0, 1e-9, 4.0).pass);
        // −2cos x₁ gives H ≡ 1 exactly; −3cos x₁ overshoots off the cycles
        let two = ScalarField::from_fn(g, |x| -2.0 * math::cos(x[0]));
        assert!(dominated_check(&two, &m, 1.0, 0.02, 4.0).pass);
        let three = ScalarField::from_fn(g, |x| -3.0 * math::cos(x[0]));
        assert!(!dominated_check(&three, &m, 1.0, 0.02, 4.0).pass);
        let flat = QuadraticModel::flat();
        assert!(dominated_check(&zero, &flat, 0.0, 0.0, 4.0).pass);
    }

    #[test]
    fn conjugate_pairs_sandwich() {
        let (ag, m) = hamex_graph(24);
        let c = ag.graph_critical_value().unwrap();
        let zero = ScalarField::constant(*ag.grid(), 0.0);
        let pair = conjugate_pair(&zero, &ag, &m, c, 0.02, &WeakKamOptions::default()).unwrap();
        for k in 0..ag.grid().len() {
            assert!(pair.u_plus.get(k) <= 1e-9 && pair.u_minus.get(k) >= -1e-9);
        }
        let g = TorusGrid::square(16).unwrap();
        let flat = QuadraticModel::flat_half(2);
        let ag = build_action_graph(&flat, g, g.h(), 3, 4.0).unwrap();
        let s = ScalarField::constant(g, 0.3);
        let pair = conjugate_pair(&s, &ag, &flat, 0.0, 0.0, &WeakKamOptions::default()).unwrap();
        assert!(pair.u_minus.sup_distance(&s) < 1e-12 && pair.u_plus.sup_distance(&s) < 1e-12);
    }

    #[test]
    fn minimax_reference_values() {
        let g = TorusGrid::square(24).unwrap();
        let r = minimax_critical_value(&QuadraticModel::flat(), g, &MinimaxOptions::default());
        assert!(r.value.abs() < 1e-14);
        let r = minimax_critical_value(&QuadraticModel::hamex(), g, &MinimaxOptions::default());
        assert!(r.value <= 1.0 + 1e-12 && r.value >= 0.95, "{}", r.value);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]
        #[test]
        fn operators_are_monotone_and_nonexpansive(
            a in proptest::collection::vec(-1.0f64..1.0, 144),
            b in proptest::collection::vec(-1.0f64..1.0, 144),
            kappa in -3.0f64..3.0,
        ) {
            let (ag, _) = hamex_graph(12);
            let g = *ag.grid();
            let u = ScalarField::new(g, a.clone()).unwrap();
            let v = ScalarField::new(g, b.clone()).unwrap();
            let top = ScalarField::new(g, a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect()).unwrap();
            for dir in [Direction::Backward, Direction::Forward] {
                let tu = lax_oleinik_step(&u, &ag, dir);
                let tv = lax_oleinik_step(&v, &ag, dir);
                prop_assert!(tu.sup_distance(&tv) <= u.sup_distance(&v) + 1e-12);
                let tt = lax_oleinik_step(&top, &ag, dir);
                for k in 0..g.len() {
                    prop_assert!(tu.get(k) <= tt.get(k) + 1e-12);
                }
                let shifted = ScalarField::new(g, a.iter().map(|x| x + kappa).collect()).unwrap();
                let ts = lax_oleinik_step(&shifted, &ag, dir);
                for k in 0..g.len() {
                    prop_assert!((ts.get(k) - tu.get(k) - kappa).abs() < 1e-12);
                }
            }
        }
    }
}
