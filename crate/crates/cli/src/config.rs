//! Run configuration: a `key = value` TOML file, overridden by flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weakkam_core::model::{QuadraticModel, VectorPotential};
use weakkam_core::selector::{BumpTerm, Gfqi, TrigPoly};
use weakkam_core::verify::ExampleName;
use weakkam_core::TorusGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// File layout; every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub grid: Option<usize>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub fiber: FiberSection,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub tol: TolSection,
    #[serde(default)]
    pub shape: ShapeSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSection {
    pub points: Option<usize>,
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    /// Time step in base cells.
    pub tau: Option<f64>,
    pub radius: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolSection {
    pub c: Option<f64>,
    pub r: Option<f64>,
    pub a: Option<f64>,
    pub jump: Option<f64>,
    pub inv: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSection {
    pub level: Option<f64>,
    pub classes: Option<usize>,
    pub class_width: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub t_min: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub t: Option<Vec<f64>>,
    pub probes: Option<usize>,
}

/// Command-line overrides, same meaning as the file keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub model: Option<String>,
    pub grid: Option<usize>,
    pub vgrid: Option<usize>,
    pub vbox: Option<f64>,
    pub tau: Option<f64>,
    pub radius: Option<usize>,
    pub tol_c: Option<f64>,
    pub tol_r: Option<f64>,
    pub tol_a: Option<f64>,
    pub tol_jump: Option<f64>,
    pub tol_inv: Option<f64>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub level: Option<f64>,
    pub classes: Option<usize>,
    pub class_width: Option<f64>,
    pub t_min: Option<f64>,
    pub t: Vec<f64>,
    pub probes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    CriticalValue,
    WeakKam,
    Barrier,
    Aubry,
    Mather,
    Alpha,
    Shape,
    Selector,
    ChainRecurrent,
    Verify,
    ListExamples,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::CriticalValue => "critical-value",
            Task::WeakKam => "weak-kam",
            Task::Barrier => "barrier",
            Task::Aubry => "aubry",
            Task::Mather => "mather",
            Task::Alpha => "alpha",
            Task::Shape => "shape",
            Task::Selector => "selector",
            Task::ChainRecurrent => "chain-recurrent",
            Task::Verify => "verify",
            Task::ListExamples => "list-examples",
        }
    }

    /// `(τ in cells, stencil radius)` used when the configuration sets neither.
    fn graph_defaults(self) -> (f64, usize) {
        match self {
            Task::Barrier | Task::Aubry => (10.0, 21),
            Task::Mather => (0.5, 0),
            Task::Alpha | Task::Shape => (3.0, 8),
            _ => (4.0, 9),
        }
    }

    fn grid_default(self) -> usize {
        match self {
            Task::Selector => 256,
            Task::Verify => 48,
            Task::Alpha | Task::Shape => 64,
            _ => 96,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Tolerances {
    pub c: f64,
    pub r: f64,
    /// Barrier-diagonal threshold, absolute.
    pub a: f64,
    /// Chain jump size, absolute.
    pub jump: f64,
    pub inv: f64,
}

/// Fully resolved configuration, echoed into `summary.json`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunConfig {
    pub command: &'static str,
    pub model: String,
    pub grid: usize,
    pub fiber_points: usize,
    pub fiber_half_width: f64,
    pub tau_cells: f64,
    pub radius: usize,
    pub tol: Tolerances,
    /// Not echoed: reruns into different directories must match byte for byte.
    #[serde(skip)]
    pub output: PathBuf,
    pub seed: u64,
    /// Not echoed: outputs are identical for every thread count.
    #[serde(skip)]
    pub threads: usize,
    pub level: f64,
    pub classes: usize,
    pub class_width: f64,
    pub t_min: f64,
    pub t: Vec<f64>,
    pub probes: usize,
}

fn positive(name: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(err(format!("{name} must be positive, got {v}")))
    }
}

pub fn read_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    parse_file(&text).map_err(|e| err(format!("{}: {}", path.display(), e.0)))
}

/// Parses the TOML text; errors carry the offending line.
pub fn parse_file(text: &str) -> Result<FileConfig, ConfigError> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
        match line {
            Some(l) => err(format!("line {l}: {}", e.message())),
            None => err(e.message().to_string()),
        }
    })
}

/// Resolves file values, flag overrides, `WEAKKAM_THREADS` and per-command defaults.
pub fn resolve(task: Task, file: &FileConfig, o: &Overrides, env_threads: Option<&str>) -> Result<RunConfig, ConfigError> {
    let (tau_default, radius_default) = task.graph_defaults();
    let model = o.model.clone().or_else(|| file.model.clone()).unwrap_or_else(|| {
        if task == Task::Selector { "multivalued" } else { "hamex" }.to_string()
    });
    let grid = o.grid.or(file.grid).unwrap_or(task.grid_default());
    if grid < 8 {
        return Err(err(format!("grid must have at least 8 nodes per axis, got {grid}")));
    }
    let h = std::f64::consts::TAU / grid as f64;
    let threads = match env_threads {
        Some(s) => s.trim().parse::<usize>().map_err(|_| err(format!("WEAKKAM_THREADS: not a count: '{s}'")))?,
        None => o.threads.or(file.threads).unwrap_or(1),
    };
    if threads == 0 {
        return Err(err("thread count must be at least 1"));
    }
    let fiber_points = o.vgrid.or(file.fiber.points).unwrap_or(13);
    if fiber_points < 3 {
        return Err(err("fiber grid needs at least 3 points"));
    }
    let radius = o.radius.or(file.graph.radius).unwrap_or(radius_default);
    let tol = Tolerances {
        c: positive("tol.c", o.tol_c.or(file.tol.c).unwrap_or(1e-4))?,
        r: positive("tol.r", o.tol_r.or(file.tol.r).unwrap_or(0.05))?,
        a: positive("tol.a", o.tol_a.or(file.tol.a).unwrap_or(0.4 * h))?,
        jump: positive("tol.jump", o.tol_jump.or(file.tol.jump).unwrap_or(2.0 * h))?,
        inv: positive("tol.inv", o.tol_inv.or(file.tol.inv).unwrap_or(1e-9))?,
    };
    let t = if !o.t.is_empty() { o.t.clone() } else { file.verify.t.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.75, 1.0]) };
    if t.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        return Err(err("every t must lie in (0, 1]"));
    }
    let classes = o.classes.or(file.shape.classes).unwrap_or(33);
    if classes < 3 {
        return Err(err("class grid needs at least 3 points per axis"));
    }
    Ok(RunConfig {
        command: task.name(),
        model,
        grid,
        fiber_points,
        fiber_half_width: positive("fiber.half_width", o.vbox.or(file.fiber.half_width).unwrap_or(3.0))?,
        tau_cells: positive("graph.tau", o.tau.or(file.graph.tau).unwrap_or(tau_default))?,
        radius,
        tol,
        output: o.out.clone().or_else(|| file.output.clone()).unwrap_or_else(|| PathBuf::from("out")),
        seed: o.seed.or(file.seed).unwrap_or(0),
        threads,
        level: positive("shape.level", o.level.or(file.shape.level).unwrap_or(1.0))?,
        classes,
        class_width: positive("shape.class_width", o.class_width.or(file.shape.class_width).unwrap_or(1.5))?,
        t_min: positive("chain.t_min", o.t_min.or(file.chain.t_min).unwrap_or(1.0))?,
        t,
        probes: o.probes.or(file.verify.probes).unwrap_or(100),
    })
}

/// Model spec file: `dim`, `mass`, `kappa`, and `potential` as one of
/// `"zero"`, `"hamex"`, `"suspension"` or a constant `[a1, a2]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpec {
    #[serde(default = "two")]
    dim: usize,
    #[serde(default = "half")]
    mass: f64,
    #[serde(default)]
    kappa: f64,
    #[serde(default)]
    potential: PotentialSpec,
}

fn two() -> usize {
    2
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(untagged)]
enum PotentialSpec {
    #[default]
    Missing,
    Named(String),
    Constant([f64; 2]),
}

/// A registry name or the path of a model spec file.
pub fn load_model(name: &str) -> Result<QuadraticModel, ConfigError> {
    if let Ok(e) = name.parse::<ExampleName>() {
        return Ok(weakkam_core::verify::example(e).model);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(err(format!("unknown model '{name}' (not a registry name or a file)")));
    }
    let text = std::fs::read_to_string(path).map_err(|e| err(format!("{name}: {e}")))?;
    let spec: ModelSpec = toml::from_str(&text).map_err(|e| err(format!("{name}: {}", e.message())))?;
    let potential = match spec.potential {
        PotentialSpec::Missing => VectorPotential::Zero,
        PotentialSpec::Constant(a) => VectorPotential::Constant(a),
        PotentialSpec::Named(s) => match s.as_str() {
            "zero" => VectorPotential::Zero,
            "hamex" => VectorPotential::Hamex,
            "suspension" => VectorPotential::Suspension,
            other => return Err(err(format!("{name}: unknown potential '{other}'"))),
        },
    };
    if spec.dim != 1 && spec.dim != 2 {
        return Err(err(format!("{name}: dim must be 1 or 2")));
    }
    Ok(QuadraticModel { dim: spec.dim, mass: positive("mass", spec.mass)?, potential, kappa: spec.kappa })
}

pub fn base_grid(dim: usize, n: usize) -> Result<TorusGrid, ConfigError> {
    let g = if dim == 1 { TorusGrid::circle(n) } else { TorusGrid::square(n) };
    g.map_err(|e| err(e.to_string()))
}

/// Generating-function spec file.
///
/// ```toml
/// base_dim = 1
/// k = 1
/// q = [-1.0]
/// rho = 2.0
/// shift = { constant = 0.0, modes = [[1, 0, 0.5, 0.0]] }
/// [[terms]]
/// power = [0, 0]
/// constant = -6.0
/// modes = [[1, 0, 4.0, 0.0]]
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GfqiSpec {
    #[serde(default = "one")]
    base_dim: usize,
    k: usize,
    q: Vec<f64>,
    rho: f64,
    #[serde(default)]
    shift: Option<PolySpec>,
    #[serde(default)]
    terms: Vec<TermSpec>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolySpec {
    #[serde(default)]
    constant: f64,
    /// `[k1, k2, cos, sin]` rows.
    #[serde(default)]
    modes: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermSpec {
    power: [u32; 2],
    #[serde(default)]
    constant: f64,
    #[serde(default)]
    modes: Vec<[f64; 4]>,
}

fn poly(constant: f64, modes: &[[f64; 4]]) -> TrigPoly {
    TrigPoly { constant, modes: modes.iter().map(|m| ([m[0] as i32, m[1] as i32], m[2], m[3])).collect() }
}

/// `multivalued`, `zero`, or a spec file; returns the function and its base dimension.
pub fn load_gfqi(name: &str) -> Result<(Gfqi, usize), ConfigError> {
    match name {
        "multivalued" => return Ok((Gfqi::multivalued_example(), 1)),
        "zero" => return Ok((Gfqi::new(1, [-1.0, 0.0], 1.0).map_err(|e| err(e.to_string()))?, 1)),
        _ => {}
    }
    let text = std::fs::read_to_string(name).map_err(|e| err(format!("generating function '{name}': {e}")))?;
    let spec: GfqiSpec = toml::from_str(&text).map_err(|e| err(format!("{name}: {}", e.message())))?;
    if spec.q.len() != spec.k {
        return Err(err(format!("{name}: q needs exactly k entries")));
    }
    if spec.base_dim != 1 && spec.base_dim != 2 {
        return Err(err(format!("{name}: base_dim must be 1 or 2")));
    }
    let q = if spec.k == 1 { [spec.q[0], 0.0] } else { [spec.q[0], spec.q[1]] };
    let mut s = Gfqi::new(spec.k, q, spec.rho).map_err(|e| err(format!("{name}: {e}")))?;
    if let Some(p) = &spec.shift {
        s.shift = poly(p.constant, &p.modes);
    }
    for t in &spec.terms {
        s.terms.push(BumpTerm { coefficient: poly(t.constant, &t.modes), power: t.power });
    }
    Ok((s, spec.base_dim))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let file = parse_file("").unwrap();
        let c = resolve(Task::CriticalValue, &file, &Overrides::default(), None).unwrap();
        assert_eq!((c.model.as_str(), c.grid, c.fiber_points, c.radius), ("hamex", 96, 13, 9));
        assert_eq!(c.tau_cells, 4.0);
        assert_eq!(c.threads, 1);
        let a = resolve(Task::Aubry, &file, &Overrides::default(), None).unwrap();
        assert_eq!((a.tau_cells, a.radius), (10.0, 21));
    }

    #[test]
    fn flags_override_file() {
        let file = parse_file("grid = 64\nmodel = \"flat\"\n[tol]\nc = 0.001\n").unwrap();
        let o = Overrides { grid: Some(128), model: Some("hamex".into()), ..Overrides::default() };
        let c = resolve(Task::WeakKam, &file, &o, None).unwrap();
        assert_eq!((c.grid, c.model.as_str(), c.tol.c), (128, "hamex", 0.001));
        let c = resolve(Task::WeakKam, &file, &Overrides { threads: Some(2), ..Overrides::default() }, Some("8")).unwrap();
        assert_eq!(c.threads, 8);
    }

    #[test]
    fn bad_values_are_rejected() {
        let file = parse_file("[tol]\nr = -0.1\n").unwrap();
        assert!(resolve(Task::WeakKam, &file, &Overrides::default(), None).is_err());
        let e = parse_file("grid = 32\nunknown = 1\n").unwrap_err();
        assert!(e.0.contains("line 2"), "{e}");
        assert!(resolve(Task::WeakKam, &FileConfig::default(), &Overrides { grid: Some(4), ..Overrides::default() }, None).is_err());
        assert!(resolve(Task::WeakKam, &FileConfig::default(), &Overrides::default(), Some("zero")).is_err());
        assert!(load_model("no-such-model").is_err());
    }

    #[test]
    fn spec_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.toml");
        std::fs::write(&m, "dim = 1\nmass = 1.0\npotential = [0.5, 0.0]\n").unwrap();
        let model = load_model(m.to_str().unwrap()).unwrap();
        assert_eq!(model.dim, 1);
        assert_eq!(model.potential, VectorPotential::Constant([0.5, 0.0]));
        let g = dir.path().join("g.toml");
        std::fs::write(&g, "k = 1\nq = [-1.0]\nrho = 2.0\n[[terms]]\npower = [0, 0]\nconstant = -6.0\nmodes = [[1, 0, 4.0, 0.0]]\n[[terms]]\npower = [1, 0]\nmodes = [[1, 0, 0.0, 0.8]]\n").unwrap();
        let (s, dim) = load_gfqi(g.to_str().unwrap()).unwrap();
        assert_eq!(dim, 1);
        assert_eq!(s, Gfqi::multivalued_example());
    }
}
