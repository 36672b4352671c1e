//! Example registry and claim-level verification reports.
//!
//! Reports hold measured defects against tolerances and never panic on a
//! failing claim; timing is left to the caller.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::action::build_action_graph;
use crate::aubry::{aubry_lift, peierls_barrier, projected_aubry, strong_chain_recurrent, BarrierOptions, ChainOptions, NodeSetMask};
use crate::error::{invalid, Error, Result};
use crate::geometry::hamiltonian_flow;
use crate::grid::{ScalarField, TorusGrid};
use crate::math::{self, Vec2};
use crate::model::{Hamiltonian, QuadraticModel};
use crate::selector::TrigPoly;
use crate::shape::{section_realization, RealizationOptions};
use crate::weakkam::{solve_weak_kam, WeakKamOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExampleName {
    Hamex,
    TwoTwo,
    Flat,
}

impl ExampleName {
    pub const ALL: [ExampleName; 3] = [ExampleName::Hamex, ExampleName::TwoTwo, ExampleName::Flat];

    pub fn as_str(self) -> &'static str {
        match self {
            ExampleName::Hamex => "hamex",
            ExampleName::TwoTwo => "twotwo",
            ExampleName::Flat => "flat",
        }
    }
}

impl fmt::Display for ExampleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExampleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExampleName::ALL.into_iter().find(|e| e.as_str() == s).ok_or_else(|| invalid(format!("unknown example '{s}'")))
    }
}

/// A reference set on the base torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceSet {
    /// The two circles `x₁ ∈ {0, π}`.
    Cycles,
    Torus,
}

impl ReferenceSet {
    pub fn mask(self, grid: TorusGrid) -> NodeSetMask {
        match self {
            ReferenceSet::Torus => NodeSetMask::from_fn(grid, 0.0, |_| true),
            ReferenceSet::Cycles => {
                let h = grid.spacing(0);
                NodeSetMask::from_fn(grid, 0.0, |k| {
                    let x = grid.coord(k)[0];
                    x.min((x - math::PI).abs()).min(math::TAU - x) < 0.5 * h
                })
            }
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            ReferenceSet::Cycles => "x1 in {0, pi}",
            ReferenceSet::Torus => "whole torus",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFacts {
    pub critical_value: f64,
    pub aubry: ReferenceSet,
    pub mather: ReferenceSet,
    pub chain_recurrent: ReferenceSet,
    /// Where sections of the example meet `Σ = {H = c}`.
    pub intersections: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleModel {
    pub name: ExampleName,
    pub model: QuadraticModel,
    pub facts: ReferenceFacts,
}

pub fn example(name: ExampleName) -> ExampleModel {
    let (model, facts) = match name {
        ExampleName::Hamex => (
            QuadraticModel::hamex(),
            ReferenceFacts {
                critical_value: 1.0,
                aubry: ReferenceSet::Cycles,
                mather: ReferenceSet::Cycles,
                chain_recurrent: ReferenceSet::Cycles,
                intersections: "graph(-t cos x1) meets the energy level exactly on x1 in {0, pi}",
            },
        ),
        ExampleName::TwoTwo => (
            QuadraticModel::twotwo(),
            ReferenceFacts {
                critical_value: 1.0,
                aubry: ReferenceSet::Torus,
                mather: ReferenceSet::Cycles,
                chain_recurrent: ReferenceSet::Torus,
                intersections: "the zero section lies inside the energy level",
            },
        ),
        ExampleName::Flat => (
            QuadraticModel::flat(),
            ReferenceFacts {
                critical_value: 0.0,
                aubry: ReferenceSet::Torus,
                mather: ReferenceSet::Torus,
                chain_recurrent: ReferenceSet::Torus,
                intersections: "constant sections |p| = 1 lie inside the unit level",
            },
        ),
    };
    ExampleModel { name, model, facts }
}

pub fn registry() -> Vec<ExampleModel> {
    ExampleName::ALL.into_iter().map(example).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub id: String,
    /// Operation that produced the measurement.
    pub cite: &'static str,
    pub pass: bool,
    pub defect: f64,
    pub tol: f64,
}

impl Claim {
    /// Passes when `defect ≤ tol`.
    pub fn bound(id: impl Into<String>, cite: &'static str, defect: f64, tol: f64) -> Self {
        Claim { id: id.into(), cite, pass: defect <= tol, defect, tol }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub theorem: &'static str,
    pub example: ExampleName,
    pub claims: Vec<Claim>,
}

impl VerificationReport {
    pub fn pass(&self) -> bool {
        self.claims.iter().all(|c| c.pass)
    }

    pub fn claim(&self, id: &str) -> Option<&Claim> {
        self.claims.iter().find(|c| c.id == id)
    }
}

pub const THEOREMS: [&str; 4] = ["twocycles", "aubry-containment", "chain-rigidity", "integral-identity"];

/// Numerical parameters shared by the verifications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub aubry_tau_cells: f64,
    pub aubry_radius: usize,
    /// `tol_A = C_A·h` for the barrier diagonal.
    pub c_a: f64,
    pub kam_tau_cells: f64,
    pub kam_radius: usize,
    pub half_width: f64,
    /// Allowed gap between `du₋` and `du₊` on the Aubry mask, in momentum
    /// quanta `m·h/τ` of the weak KAM graph.
    pub derivative_quanta: f64,
    /// Energy band defining `Λ ∩ Σ`.
    pub tol_energy: f64,
    pub chain: ChainOptions,
    /// Set comparisons in cells.
    pub cells: usize,
}

impl VerifyOptions {
    pub fn for_grid(grid: TorusGrid) -> Self {
        VerifyOptions {
            aubry_tau_cells: 10.0,
            aubry_radius: 21,
            c_a: 0.4,
            kam_tau_cells: 4.0,
            kam_radius: 9,
            half_width: 4.0,
            derivative_quanta: 1.5,
            tol_energy: 1e-6,
            chain: ChainOptions { t_min: 1.0, tol_jump: 2.0 * grid.h() },
            cells: 2,
        }
    }
}

/// Directed distance in cells from every node of `a` to the set `b`.
fn directed_cells(a: &NodeSetMask, b: &NodeSetMask) -> usize {
    if a.is_empty() {
        return 0;
    }
    if b.is_empty() {
        return usize::MAX;
    }
    let d = b.distance_map();
    (0..a.grid.len()).filter(|&k| a.mask[k]).map(|k| d[k]).max().unwrap_or(0)
}

fn cells_f64(c: usize) -> f64 {
    if c == usize::MAX {
        f64::INFINITY
    } else {
        c as f64
    }
}

/// `K_t = graph(d(−t cos x₁))` for hamex: contained in `{H ≤ 1}`, meeting
/// `Σ = {H = 1}` exactly on the two limit cycles, invariantly under the flow.
pub fn verify_twocycles(grid: TorusGrid, ts: &[f64], tol: f64) -> Result<VerificationReport> {
    if ts.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(invalid("t must lie in (0, 1]"));
    }
    let ex = example(ExampleName::Hamex);
    let m = ex.model;
    let z = ReferenceSet::Cycles.mask(grid);
    let mut claims = Vec::new();
    for &t in ts {
        let df = |x: Vec2| [t * math::sin(x[0]), 0.0];
        let energy: Vec<f64> = (0..grid.len()).map(|k| {
            let x = grid.coord(k);
            Hamiltonian::value(&m, x, df(x))
        }).collect();
        let max_h = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        claims.push(Claim::bound(format!("t={t}: K_t inside {{H <= 1}}"), "geometry::section_max_h", (max_h - 1.0).max(0.0), tol));
        let meet = NodeSetMask::from_fn(grid, tol, |k| (energy[k] - 1.0).abs() <= tol);
        claims.push(Claim::bound(format!("t={t}: Z in K_t meet Sigma"), "aubry::NodeSetMask::within", cells_f64(directed_cells(&z, &meet)), 0.0));
        claims.push(Claim::bound(format!("t={t}: K_t meet Sigma = Z"), "aubry::NodeSetMask::hausdorff_cells", cells_f64(meet.hausdorff_cells(&z)), 1.0));
        // one period of the x₂-motion along the cycles is π
        let dist = meet.distance_map();
        let mut worst = 0usize;
        for k in (0..grid.len()).filter(|&k| meet.mask[k]) {
            let x = grid.coord(k);
            let traj = hamiltonian_flow(&m, (x, df(x)), math::PI, 1e-2, 1e-6)?;
            worst = worst.max(dist[grid.nearest(traj.last().0)]);
        }
        claims.push(Claim::bound(format!("t={t}: intersection flow-invariant"), "geometry::hamiltonian_flow", cells_f64(worst), 1.0));
    }
    Ok(VerificationReport { theorem: "twocycles", example: ExampleName::Hamex, claims })
}

/// Exact sections `x ↦ dΛ(x)` supplied by each example.
fn example_sections(name: ExampleName) -> Vec<(String, fn(Vec2, f64) -> Vec2, f64)> {
    fn cosine(x: Vec2, t: f64) -> Vec2 {
        [t * math::sin(x[0]), 0.0]
    }
    fn zero(_: Vec2, _: f64) -> Vec2 {
        [0.0, 0.0]
    }
    let mut out: Vec<(String, fn(Vec2, f64) -> Vec2, f64)> = Vec::new();
    if name == ExampleName::Hamex {
        for t in [0.25, 0.5, 0.75, 1.0] {
            out.push((format!("graph d(-{t} cos x1)"), cosine, t));
        }
    }
    out.push((String::from("zero section"), zero, 0.0));
    out
}

struct AubryData {
    c: f64,
    tol_derivative: f64,
    mask: NodeSetMask,
    lift: core::result::Result<crate::aubry::AubryLift, Error>,
}

fn aubry_data(m: &QuadraticModel, grid: TorusGrid, opts: &VerifyOptions) -> Result<AubryData> {
    let h = grid.h();
    let ag = build_action_graph(m, grid, opts.aubry_tau_cells * h, opts.aubry_radius, opts.half_width)?;
    let barrier = peierls_barrier(&ag, &BarrierOptions { full: false })?;
    let mask = projected_aubry(&barrier, opts.c_a * h)?;
    let kg = build_action_graph(m, grid, opts.kam_tau_cells * h, opts.kam_radius, opts.half_width)?;
    let pair = solve_weak_kam(&kg, m, &WeakKamOptions::default())?;
    let tol_derivative = opts.derivative_quanta * m.mass / opts.kam_tau_cells;
    let lift = aubry_lift(&mask, &pair, m, tol_derivative);
    Ok(AubryData { c: pair.c, tol_derivative, mask, lift })
}

/// `Ã* ⊆ Λ ∩ Σ` for every exact section the example supplies.
pub fn verify_new1(name: ExampleName, grid: TorusGrid, opts: &VerifyOptions) -> Result<VerificationReport> {
    let ex = example(name);
    let m = ex.model;
    let data = aubry_data(&m, grid, opts)?;
    let mut claims = Vec::new();
    let lift = match &data.lift {
        Ok(l) => l,
        Err(Error::DerivativeMismatch { gap, .. }) => {
            claims.push(Claim::bound("Aubry lift is a graph", "aubry::aubry_lift", *gap, data.tol_derivative));
            return Ok(VerificationReport { theorem: "aubry-containment", example: name, claims });
        }
        Err(e) => return Err(e.clone()),
    };
    claims.push(Claim::bound("critical value", "weakkam::solve_weak_kam", (data.c - ex.facts.critical_value).abs(), 0.05));
    let h = grid.h();
    for (label, section, t) in example_sections(name) {
        let meet: Vec<usize> = (0..grid.len())
            .filter(|&k| {
                let x = grid.coord(k);
                (Hamiltonian::value(&m, x, section(x, t)) - ex.facts.critical_value).abs() <= opts.tol_energy
            })
            .collect();
        // phase distance max(base cells, |Δp|/h) from each lift point to Λ ∩ Σ
        let mut worst = 0.0f64;
        for &(k, p) in &lift.points {
            let best = meet
                .iter()
                .map(|&j| {
                    let q = section(grid.coord(j), t);
                    (grid.cell_distance(k, j) as f64).max(math::norm(math::sub(p, q)) / h)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
        claims.push(Claim::bound(format!("Aubry lift inside {label} meet Sigma"), "aubry::aubry_lift", worst, opts.cells as f64));
    }
    Ok(VerificationReport { theorem: "aubry-containment", example: name, claims })
}

/// Energy `max_x H(x, a + dg(x))` of a perturbation given as a trigonometric polynomial.
fn probe_energy(m: &QuadraticModel, grid: TorusGrid, a: Vec2, g: &TrigPoly) -> f64 {
    (0..grid.len())
        .map(|k| {
            let x = grid.coord(k);
            let mut p = math::add(a, g.grad(x));
            if grid.dim() == 1 {
                p[1] = 0.0;
            }
            Hamiltonian::value(m, x, p)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Chain recurrence inside the Aubry set and rigidity probes.
///
/// `probes` are nonzero periodic perturbations `g`; each must push the
/// perturbed invariant section out of `{H ≤ c}`.
pub fn verify_new2_new3(name: ExampleName, grid: TorusGrid, opts: &VerifyOptions, probes: &[TrigPoly]) -> Result<VerificationReport> {
    let ex = example(name);
    let m = ex.model;
    let mut claims = Vec::new();
    match name {
        ExampleName::Flat => {
            // Σ = {|p|² = 1} with the invariant graph p = v, |v| = 1
            let v = [0.6, 0.8];
            let worst = probes.iter().map(|g| probe_energy(&m, grid, v, g) - 1.0).fold(f64::INFINITY, f64::min);
            let failures = probes.iter().filter(|g| probe_energy(&m, grid, v, g) <= 1.0 + 1e-6).count();
            claims.push(Claim {
                id: format!("{}/{} perturbations leave {{H <= 1}}", probes.len() - failures, probes.len()),
                cite: "geometry::section_max_h",
                pass: failures == 0 && !probes.is_empty(),
                defect: failures as f64,
                tol: 0.0,
            });
            claims.push(Claim { id: String::from("smallest energy excess"), cite: "geometry::section_max_h", pass: worst > 1e-6, defect: worst, tol: 1e-6 });
        }
        ExampleName::Hamex | ExampleName::TwoTwo => {
            let data = aubry_data(&m, grid, opts)?;
            let chain = strong_chain_recurrent(|x| m.grad_p(x, [0.0, 0.0]), grid, &opts.chain)?;
            claims.push(Claim::bound("R* inside projected Aubry set", "aubry::strong_chain_recurrent", cells_f64(directed_cells(&chain, &data.mask)), opts.cells as f64));
            let reference = ex.facts.chain_recurrent.mask(grid);
            claims.push(Claim::bound(
                format!("R* = {}", ex.facts.chain_recurrent.describe()),
                "aubry::strong_chain_recurrent",
                cells_f64(chain.hausdorff_cells(&reference)),
                opts.cells as f64,
            ));
            let (gap, lip) = match &data.lift {
                Ok(l) => (0.0, l.lipschitz),
                Err(Error::DerivativeMismatch { gap, .. }) => (*gap, f64::INFINITY),
                Err(e) => return Err(e.clone()),
            };
            claims.push(Claim { id: String::from("Aubry lift is a Lipschitz graph"), cite: "aubry::aubry_lift", pass: gap <= data.tol_derivative && lip.is_finite(), defect: gap, tol: data.tol_derivative });
            if name == ExampleName::TwoTwo {
                let ropts = RealizationOptions { half_width: opts.half_width, ..RealizationOptions::default() };
                let at_level = section_realization(&m, 1.0, [0.0, 0.0], grid, &ropts);
                let (pass, defect) = match at_level {
                    Err(Error::VerificationFailed { achieved_max }) => (true, achieved_max),
                    Ok(r) => (false, r.max_h),
                    Err(e) => return Err(e),
                };
                claims.push(Claim { id: String::from("no section of class 0 inside {H < 1}"), cite: "shape::section_realization", pass, defect, tol: 1.0 });
                let above = section_realization(&m, 1.1, [0.0, 0.0], grid, &ropts);
                let (pass, defect) = match above {
                    Ok(r) => (r.max_h < 1.1, r.max_h),
                    Err(Error::VerificationFailed { achieved_max }) => (false, achieved_max),
                    Err(e) => return Err(e),
                };
                claims.push(Claim { id: String::from("section of class 0 inside {H < 1.1}"), cite: "shape::section_realization", pass, defect, tol: 1.1 });
                if !probes.is_empty() {
                    let failures = probes.iter().filter(|g| probe_energy(&m, grid, [0.0, 0.0], g) <= 1.0 + 1e-6).count();
                    claims.push(Claim {
                        id: format!("{}/{} perturbations leave {{H <= 1}}", probes.len() - failures, probes.len()),
                        cite: "geometry::section_max_h",
                        pass: failures == 0,
                        defect: failures as f64,
                        tol: 0.0,
                    });
                }
            }
        }
    }
    Ok(VerificationReport { theorem: "chain-rigidity", example: name, claims })
}

/// `∫ dΦ·v dμ = 0` for a divergence-free field `v` and the area measure.
pub fn verify_integral_identity(
    name: ExampleName,
    field: impl Fn(Vec2) -> Vec2,
    phi: &ScalarField,
    tol: f64,
) -> Result<VerificationReport> {
    let grid = *phi.grid();
    let e = 1e-5;
    let mut max_div = 0.0f64;
    for k in 0..grid.len() {
        let x = grid.coord(k);
        let mut div = 0.0;
        for axis in 0..grid.dim() {
            let mut a = x;
            let mut b = x;
            a[axis] += e;
            b[axis] -= e;
            div += (field(a)[axis] - field(b)[axis]) / (2.0 * e);
        }
        max_div = max_div.max(div.abs());
    }
    if max_div > tol {
        return Err(Error::MeasureNotPreserved { max_divergence: max_div });
    }
    let n = grid.len() as f64;
    let integral = math::ordered_sum((0..grid.len()).map(|k| math::dot(phi.gradient(k), field(grid.coord(k))))) / n;
    let claims = alloc::vec![
        Claim::bound("field is divergence-free", "verify::verify_integral_identity", max_div, tol),
        Claim::bound("integral of dPhi . v vanishes", "verify::verify_integral_identity", integral.abs(), tol),
    ];
    Ok(VerificationReport { theorem: "integral-identity", example: name, claims })
}

/// Random-looking but fixed trigonometric perturbation built from `coeffs`
/// (`cos`, `sin` pairs over modes of increasing order); used by the probes.
pub fn perturbation(dim: usize, coeffs: &[(f64, f64)]) -> TrigPoly {
    let mut modes = Vec::new();
    let mut k = 0usize;
    let mut order = 1i32;
    'outer: loop {
        for a in -order..=order {
            for b in -order..=order {
                if a.abs().max(b.abs()) != order || (dim == 1 && b != 0) {
                    continue;
                }
                // keep one of each ±k pair
                if a < 0 || (a == 0 && b < 0) {
                    continue;
                }
                if k == coeffs.len() {
                    break 'outer;
                }
                modes.push(([a, b], coeffs[k].0, coeffs[k].1));
                k += 1;
            }
        }
        order += 1;
    }
    TrigPoly { constant: 0.0, modes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn registry_is_consistent() {
        let r = registry();
        assert_eq!(r.len(), 3);
        for e in &r {
            assert_eq!(e.name.as_str().parse::<ExampleName>().unwrap(), e.name);
            // the zero section lies in {H ≤ c} for every bundled example
            let g = TorusGrid::square(16).unwrap();
            let max_h = (0..g.len()).map(|k| Hamiltonian::value(&e.model, g.coord(k), [0.0, 0.0])).fold(f64::NEG_INFINITY, f64::max);
            assert!(max_h <= e.facts.critical_value + 1e-12);
        }
        assert!("nope".parse::<ExampleName>().is_err());
        assert_eq!(ReferenceSet::Cycles.mask(TorusGrid::square(16).unwrap()).count(), 32);
    }

    #[test]
    fn two_cycles_family() {
        let grid = TorusGrid::square(32).unwrap();
        let r = verify_twocycles(grid, &[0.25, 0.5, 0.75, 1.0], 1e-6).unwrap();
        assert!(r.pass(), "{r:?}");
        assert_eq!(r.claims.len(), 16);
        assert!(verify_twocycles(grid, &[0.0], 1e-6).is_err());
    }

    fn small_opts(grid: TorusGrid) -> VerifyOptions {
        VerifyOptions { aubry_tau_cells: 4.0, aubry_radius: 9, ..VerifyOptions::for_grid(grid) }
    }

    #[test]
    fn aubry_containment() {
        let grid = TorusGrid::square(24).unwrap();
        for name in [ExampleName::Hamex, ExampleName::Flat] {
            let r = verify_new1(name, grid, &small_opts(grid)).unwrap();
            assert!(r.pass(), "{r:?}");
        }
    }

    #[test]
    fn flat_rigidity_probe() {
        let grid = TorusGrid::square(16).unwrap();
        let probes: Vec<TrigPoly> = (0..10).map(|i| perturbation(2, &[(0.1 * (i + 1) as f64, -0.05), (0.0, 0.02 * i as f64)])).collect();
        let r = verify_new2_new3(ExampleName::Flat, grid, &small_opts(grid), &probes).unwrap();
        assert!(r.pass(), "{r:?}");
        // a zero perturbation stays on the level and is caught
        let r = verify_new2_new3(ExampleName::Flat, grid, &small_opts(grid), &[TrigPoly::default()]).unwrap();
        assert!(!r.pass());
    }

    #[test]
    fn hamex_chain_inside_aubry() {
        let grid = TorusGrid::square(32).unwrap();
        let r = verify_new2_new3(ExampleName::Hamex, grid, &small_opts(grid), &[]).unwrap();
        assert!(r.pass(), "{r:?}");
    }

    #[test]
    fn integral_identity() {
        let grid = TorusGrid::square(32).unwrap();
        let s2 = math::sqrt(2.0);
        let phi = ScalarField::from_fn(grid, |x| math::sin(x[0]));
        let r = verify_integral_identity(ExampleName::Flat, |_| [1.0, s2], &phi, 1e-9).unwrap();
        assert!(r.pass());
        let constant = ScalarField::constant(grid, 0.3);
        let r = verify_integral_identity(ExampleName::Flat, |_| [1.0, s2], &constant, 1e-9).unwrap();
        assert_eq!(r.claims[1].defect, 0.0);
        let hamex = QuadraticModel::hamex();
        let e = verify_integral_identity(ExampleName::Hamex, |x| hamex.grad_p(x, [0.0, 0.0]), &phi, 1e-6);
        assert!(matches!(e, Err(Error::MeasureNotPreserved { .. })));
    }

    #[test]
    fn perturbation_modes() {
        let g = perturbation(2, &[(1.0, 0.0), (0.0, 1.0), (0.5, 0.5), (0.1, 0.0), (0.2, 0.0)]);
        assert_eq!(g.modes.len(), 5);
        assert_eq!(g.modes[0].0, [0, 1]);
        let g1 = perturbation(1, &vec![(1.0, 0.0); 3]);
        assert!(g1.modes.iter().all(|m| m.0[1] == 0));
    }
}
