//! One function per subcommand; each writes its artifacts and `summary.json`.

use std::fmt;

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use serde_json::{json, Value};
use weakkam_core::action::{build_action_graph, critical_value_of, ActionGraph};
use weakkam_core::aubry::{
    aubry_lift, mather_lp, mather_set, peierls_barrier, phase_values, projected_aubry, strong_chain_recurrent, BarrierOptions,
    ChainOptions, NodeSetMask, PhaseGrid, TransferChain,
};
use weakkam_core::model::{Hamiltonian, QuadraticModel};
use weakkam_core::selector::{graph_selector, smooth_selector, SelectorOptions, TrigPoly};
use weakkam_core::shape::{shape_of_domain, AlphaOptions, AlphaSolver, AlphaTable, ClassGrid};
use weakkam_core::verify::{
    self, perturbation, verify_integral_identity, verify_new1, verify_new2_new3, verify_twocycles, ExampleName, VerificationReport,
    VerifyOptions,
};
use weakkam_core::weakkam::{fixed_point_residual, minimax_critical_value, residual_fraction, solve_weak_kam, MinimaxOptions, WeakKamOptions};
use weakkam_core::{FiberGrid, ScalarField, TorusGrid};

use crate::config::{base_grid, load_gfqi, load_model, ConfigError, RunConfig};
use crate::output::{num, OutputDir};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Compute(weakkam_core::Error),
    Io(std::io::Error),
    /// At least one verification claim failed; artifacts were still written.
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) | CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Compute(e) => write!(f, "computation failed: {e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Verification(msg) => write!(f, "verification failed: {msg}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<weakkam_core::Error> for CliError {
    fn from(e: weakkam_core::Error) -> Self {
        CliError::Compute(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

type Out = Result<(), CliError>;

struct Setup {
    model: QuadraticModel,
    grid: TorusGrid,
    reference: Option<ExampleName>,
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    let model = load_model(&cfg.model)?;
    let grid = base_grid(model.dim, cfg.grid)?;
    Ok(Setup { model, grid, reference: cfg.model.parse().ok() })
}

fn graph(s: &Setup, cfg: &RunConfig) -> Result<ActionGraph, CliError> {
    Ok(build_action_graph(&s.model, s.grid, cfg.tau_cells * s.grid.h(), cfg.radius, cfg.fiber_half_width)?)
}

fn mather_chain(s: &Setup, cfg: &RunConfig) -> Result<TransferChain, CliError> {
    let fiber = FiberGrid::new(s.model.dim, cfg.fiber_half_width, cfg.fiber_points)?;
    let phase = PhaseGrid::new(s.grid, fiber)?;
    Ok(TransferChain::build(&s.model, phase, cfg.tau_cells.min(1.0) * s.grid.h())?)
}

fn reference_distance(s: &Setup, mask: &NodeSetMask, pick: impl Fn(&verify::ReferenceFacts) -> verify::ReferenceSet) -> Value {
    match s.reference {
        Some(name) => {
            let set = pick(&verify::example(name).facts);
            json!({ "set": set.describe(), "hausdorff_cells": mask.hausdorff_cells(&set.mask(s.grid)) })
        }
        None => Value::Null,
    }
}

pub fn critical_value(cfg: &RunConfig, out: &mut OutputDir) -> Out {
    let s = setup(cfg)?;
    let g = graph(&s, cfg)?;
    let bis = critical_value_of(&g, cfg.tol.c)?;
    let c_graph = g.graph_critical_value()?;
    let pair = solve_weak_kam(&g, &s.model, &WeakKamOptions::default())?;
    let minimax = minimax_critical_value(&s.model, s.grid, &MinimaxOptions::default());
    let mcfg = RunConfig { tau_cells: 0.5, ..cfg.clone() };
    let chain = mather_chain(&s, &mcfg)?;
    let lp = mather_lp(&chain, &phase_values(&s.model, &chain.phase), cfg.tol.inv)?;
    out.summary(
        cfg,
        json!({
            "c_bisection": bis.c,
            "bisection_bracket": [bis.lo, bis.hi],
            "bisections": bis.bisections,
            "c_graph": c_graph,
            "c_lax_oleinik": pair.c,
            "c_infmax_upper": minimax.value,
            "c_lp_lower": -lp.optimum,
        }),
    )?;
    Ok(())
}

pub fn weak_kam(cfg: &RunConfig, out: &mut OutputDir) -> Out {
    let s = setup(cfg)?;
    let g = graph(&s, cfg)?;
    let pair = solve_weak_kam(&g, &s.model, &WeakKamOptions::default())?;
    out.field("u_minus.csv", "u", s.grid, pair.u_minus.values())?;
    out.field("u_plus.csv", "u", s.grid, pair.u_plus.values())?;
    let fp = fixed_point_residual(&g, &pair.u_minus, pair.c);
    let minimax = minimax_critical_value(&s.model, s.grid, &MinimaxOptions::default());
    out.summary(
        cfg,
        json!({
            "c": pair.c,
            "c_backward": pair.c_backward,
            "c_forward": pair.c_forward,
            "c_minimax": minimax.value,
            "iterations": pair.iterations,
            "fixed_point_residual": fp,
            "fixed_point_residual_relative": fp / pair.u_minus.range().max(f64::MIN_POSITIVE),
            "residual_p95": pair.residual.p95,
            "residual_max": num(pair.residual.max),
            "residual_fraction_within_tol_r": residual_fraction(&s.model, &pair.u_minus, pair.c, cfg.tol.r),
        }),
    )?;
    Ok(())
}

pub fn barrier(cfg: &RunConfig, out: &mut OutputDir) -> Out {
    let s = setup(cfg)?;
    let g = graph(&s, cfg)?;
    let b = peierls_barrier(&g, &BarrierOptions { full: false })?;
    out.field("barrier_diagonal.csv", "h", s.grid, &b.diagonal)?;
    let (lo, hi) = b.diagonal.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, z), &v| (a.min(v), z.max(v)));
    out.summary(cfg, json!({ "c": b.c, "diagonal_min": lo, "diagonal_max": hi }))?;
    Ok(())
}

pub fn aubry(cfg: &RunConfig, out: &mut OutputDir) -> Out {
    let s = setup(cfg)?;
    let g = graph(&s, cfg)?;
    let b = peierls_barrier(&g, &BarrierOptions { full: false })?;
    let mask = projected_aubry(&b, cfg.tol.a)?;
    out.mask("aubry_mask.csv", s.grid, &mask.mask)?;
    // the lift uses the weak KAM graph resolution
    let kam = build_action_graph(&s.model, s.grid, 4.0 * s.grid.h(), 9, cfg.fiber_half_width)?;
    let pair = solve_weak_kam(&kam, &s.model, &WeakKamOptions::default())?;
    let tol_d = 1.5 * s.model.mass / 4.0;
    let lift = match aubry_lift(&mask, &pair, &s.model, tol_d) {
        Ok(l) => {
            let rows = l.points.iter().map(|&(k, p)| {
                let x = s.grid.coord(k);
                (x[0], x[1], p[0], p[1])
            });
            out.csv("aubry_lift.csv", &["x1", "x2", "p1", "p2"], rows)?;
            json!({ "lipschitz": num(l.lipschitz), "energy_defect": l.energy_defect })
        }
        Err(weakkam_core::Error::DerivativeMismatch { node, gap }) => json!({ "derivative_mismatch": { "node": node, "gap": gap } }),
        Err(e) => return Err(e.into()),
    };
    out.summary(
        cfg,
        json!({
            "c": b.c,
            "coverage": mask.coverage(),
            "nodes": mask.count(),
            "reference": reference_distance(&s, &mask, |f| f.aubry),
            "lift": lift,
        }),
    )?;
    Ok(())
}

pub fn mather(cfg: &RunConfig, out: &mut OutputDir) -> Out {
    let s = setup(cfg)?;
    let chain = mather_chain(&s, cfg)?;
    let sol = mather_lp(&chain, &phase_values(&s.model, &chain.phase), cfg.tol.inv)?;
    let mut rows = Vec::new();
    for (i, mu) in sol.measures.iter().enumerate() {
        for &(k, w) in &mu.entries {
            let (x, v) = chain.phase.point(k);
            rows.push((i, x[0], x[1], v[0], v[1], w));
        }
    }
    out.csv("mather_measure.csv", &["measure", "x1", "x2", "v1", "v2", "mass"], rows)?;
    let set = mather_set(&sol.measures, 1e-6)?;
    out.mask("mather_mask.csv", s.grid, &set.base.mask)?;
    out.summary(
        cfg,
        json!({
            "optimum": sol.optimum,
            "c_lower": -sol.optimum,
            "measures": sol.measures.len(),
            "closed_classes": sol.closed_classes,
            "coverage": set.base.coverage(),
            "reference": reference_distance(&s, &set.base, |f| f.mather),
        }),
    )?;
    Ok(())
}

fn alpha_solver(s: &Setup, cfg: &RunConfig) -> Result<AlphaSolver, CliError> {
    let opts = AlphaOptions { tau_cells: cfg.tau_cells, radius: cfg.radius, half_width: cfg.fiber_half_width };
    Ok(AlphaSolver::new(&s.model, s.grid, &opts)?)
}

fn table_rows(t: &AlphaTable) -> Vec<(f64, f64, f64)> {
    (0..t.values.len()).map(|k| {
        let a = t.classes.class(k);
        (a[0], a[1], t.values[k])
    }).collect()
}

pub fn alpha(cfg: &RunConfig, out: &mut OutputDir) -> Out {
    let s = setup(cfg)?;
    let mut solver = alpha_solver(&s, cfg)?;
    let classes = ClassGrid::new(s.model.dim, cfg.classes, cfg.class_width)?;
    let table = AlphaTable::compute(&mut solver, classes)?;
    out.csv("alpha_table.csv", &["a1", "a2", "alpha"], table_rows(&table))?;
    let (alpha_min, argmin) = table.min();
    out.summary(cfg, json!({ "alpha_min": alpha_min, "alpha_argmin": argmin, "entry_tol": table.tol }))?;
    Ok(())
}

pub fn shape(cfg: &RunConfig, out: &mut OutputDir) -> Out {
    let s = setup(cfg)?;
    let mut solver = alpha_solver(&s, cfg)?;
    let classes = ClassGrid::new(s.model.dim, cfg.classes, cfg.class_width)?;
    let r = shape_of_domain(&mut solver, cfg.level, classes)?;
    out.csv("alpha_table.csv", &["a1", "a2", "alpha"], table_rows(&r.table))?;
    let rows = r.boundary.iter().enumerate().flat_map(|(i, line)| line.iter().map(move |p| (i, p[0], p[1])));
    out.csv("boundary.csv", &["polyline", "a1", "a2"], rows)?;
    out.summary(
        cfg,
        json!({
            "level": r.level,
            "alpha_min": r.alpha_min,
            "alpha_argmin": r.alpha_argmin,
            "convexity_audit_pass": r.audit.pass,
            "convexity_pairs": r.audit.pairs,
            "convexity_worst_excess": num(r.audit.worst_excess),
            "sublevel_classes": r.mask.iter().filter(|&&m| m).count(),
            "polylines": r.boundary.len(),
        }),
    )?;
    Ok(())
}

pub fn selector(cfg: &RunConfig, out: &mut OutputDir) -> Out {
    let (s, base_dim) = load_gfqi(&cfg.model)?;
    let grid = base_grid(base_dim, cfg.grid)?;
    let field = graph_selector(&s, grid, &SelectorOptions::default())?;
    let rows = (0..grid.len()).map(|k| {
        let x = grid.coord(k);
        let xi = field.selected[k].map_or(f64::NAN, |c| c.xi[0]);
        (x[0], x[1], field.phi.get(k), xi)
    });
    out.csv("phi.csv", &["x1", "x2", "phi", "xi1"], rows)?;
    out.mask("x0_mask.csv", grid, &field.x0.mask)?;
    let rows = field.lambda.iter().map(|&(k, p)| {
        let x = grid.coord(k);
        (x[0], x[1], p[0], p[1])
    });
    out.csv("lambda_samples.csv", &["x1", "x2", "p1", "p2"], rows)?;
    let membership = (0..grid.len()).filter(|&k| field.x0.mask[k]).map(|k| field.membership_distance(k, 3)).fold(0.0, f64::max);
    let smooth = smooth_selector(&field, 4.0 * grid.h())?;
    out.summary(
        cfg,
        json!({
            "x0_coverage": field.x0.coverage(),
            "membership_cells_max": num(membership),
            "lipschitz": field.lipschitz,
            "max_critical_dx": field.max_critical_dx,
            "phi_range": field.phi.range(),
            "smoothing_radius": 4.0 * grid.h(),
            "hull_distance": num(smooth.hull_distance),
        }),
    )?;
    Ok(())
}

pub fn chain_recurrent(cfg: &RunConfig, out: &mut OutputDir) -> Out {
    let s = setup(cfg)?;
    let m = s.model;
    let opts = ChainOptions { t_min: cfg.t_min, tol_jump: cfg.tol.jump };
    let mask = strong_chain_recurrent(|x| m.grad_p(x, [0.0, 0.0]), s.grid, &opts)?;
    out.mask("chain_mask.csv", s.grid, &mask.mask)?;
    out.summary(
        cfg,
        json!({
            "coverage": mask.coverage(),
            "nodes": mask.count(),
            "reference": reference_distance(&s, &mask, |f| f.chain_recurrent),
        }),
    )?;
    Ok(())
}

/// `count` nonzero perturbations with four modes each, drawn from `seed`.
pub fn probes(seed: u64, count: usize, dim: usize) -> Vec<TrigPoly> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let coeffs: Vec<(f64, f64)> = (0..4).map(|_| (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))).collect();
        if coeffs.iter().map(|c| c.0 * c.0 + c.1 * c.1).sum::<f64>() >= 1e-4 {
            out.push(perturbation(dim, &coeffs));
        }
    }
    out
}

fn report_json(r: &VerificationReport) -> Value {
    let claims: Vec<Value> = r
        .claims
        .iter()
        .map(|c| json!({ "id": c.id, "cite": c.cite, "pass": c.pass, "defect": num(c.defect), "tol": num(c.tol) }))
        .collect();
    json!({ "theorem": r.theorem, "example": r.example.as_str(), "claims": claims })
}

pub fn verify(cfg: &RunConfig, theorem: &str, example: &str, out: &mut OutputDir) -> Out {
    let name: ExampleName = example.parse().map_err(|e: weakkam_core::Error| ConfigError(e.to_string()))?;
    let ex = verify::example(name);
    let grid = base_grid(ex.model.dim, cfg.grid)?;
    let mut opts = VerifyOptions::for_grid(grid);
    opts.chain = ChainOptions { t_min: cfg.t_min, tol_jump: cfg.tol.jump };
    opts.c_a = cfg.tol.a / grid.h();
    let report = match theorem {
        "twocycles" => {
            if name != ExampleName::Hamex {
                return Err(ConfigError(String::from("twocycles is defined for the hamex example")).into());
            }
            verify_twocycles(grid, &cfg.t, 1e-6)?
        }
        "aubry-containment" => verify_new1(name, grid, &opts)?,
        "chain-rigidity" => {
            let p = if name == ExampleName::Hamex { Vec::new() } else { probes(cfg.seed, cfg.probes, ex.model.dim) };
            verify_new2_new3(name, grid, &opts, &p)?
        }
        "integral-identity" => {
            // Φ = u₋ plus a seeded probe, so the identity is not trivially met when u₋ is flat
            let m = ex.model;
            let g = build_action_graph(&m, grid, 4.0 * grid.h(), 9, cfg.fiber_half_width)?;
            let pair = solve_weak_kam(&g, &m, &WeakKamOptions::default())?;
            let probe = &probes(cfg.seed, 1, ex.model.dim)[0];
            let phi = ScalarField::from_fn(grid, |x| probe.value(x));
            let phi = ScalarField::new(grid, phi.values().iter().zip(pair.u_minus.values()).map(|(a, b)| a + b).collect())?;
            let v = if name == ExampleName::Flat { [0.6, 0.8] } else { [0.0, 0.0] };
            verify_integral_identity(name, |x| m.grad_p(x, v), &phi, 1e-9)?
        }
        other => {
            return Err(ConfigError(format!("unknown verification '{other}' (expected one of {})", verify::THEOREMS.join(", "))).into());
        }
    };
    let doc = report_json(&report);
    out.json("report.json", &doc)?;
    out.summary(cfg, json!({ "theorem": report.theorem, "example": name.as_str(), "pass": report.pass(), "claims": report.claims.len() }))?;
    for c in &report.claims {
        println!("{} {} (defect {:e}, tol {:e})", if c.pass { "PASS" } else { "FAIL" }, c.id, c.defect, c.tol);
    }
    if !report.pass() {
        let failed: Vec<&str> = report.claims.iter().filter(|c| !c.pass).map(|c| c.id.as_str()).collect();
        return Err(CliError::Verification(failed.join("; ")));
    }
    Ok(())
}

pub fn list_examples(cfg: &RunConfig, out: &mut OutputDir) -> Out {
    let mut items = Vec::new();
    for e in verify::registry() {
        println!("{:8} c = {}  aubry: {}  mather: {}  chain: {}", e.name.as_str(), e.facts.critical_value, e.facts.aubry.describe(), e.facts.mather.describe(), e.facts.chain_recurrent.describe());
        items.push(json!({
            "name": e.name.as_str(),
            "critical_value": e.facts.critical_value,
            "aubry": e.facts.aubry.describe(),
            "mather": e.facts.mather.describe(),
            "chain_recurrent": e.facts.chain_recurrent.describe(),
            "intersections": e.facts.intersections,
        }));
    }
    out.summary(cfg, json!({ "examples": items, "verifications": verify::THEOREMS }))?;
    Ok(())
}
