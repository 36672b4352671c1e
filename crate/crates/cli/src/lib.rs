//! Command-line driver for `weakkam-core`: configuration, output formats and the
//! verification suite.
//!
//! Exit codes: 0 success, 1 computation or i/o failure, 2 configuration error,
//! 3 a verification claim failed.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::CliError;
use crate::config::{FileConfig, Overrides, Task};
use crate::output::OutputDir;

#[derive(Debug, Parser)]
#[command(name = "weakkam", version, about = "Numerical weak KAM and Aubry-Mather computations on T^1 and T^2")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate Mañé's critical value by every available method
    CriticalValue(Common),
    /// Backward and forward weak KAM solutions
    WeakKam(Common),
    /// Diagonal of the Peierls barrier
    Barrier(Common),
    /// Projected Aubry set and its lift
    Aubry(Common),
    /// Minimizing measures from the linear program
    Mather(Common),
    /// Tabulate Mather's alpha function
    Alpha(Common),
    /// Sublevel set of alpha and its convexity audit
    Shape(Common),
    /// Graph selector of a generating function
    Selector(Common),
    /// Strong chain-recurrent set of the zero-section flow
    ChainRecurrent(Common),
    /// Check a result on a bundled example
    Verify {
        /// twocycles, aubry-containment, chain-rigidity or integral-identity
        theorem: String,
        #[arg(long)]
        example: String,
        #[command(flatten)]
        common: Common,
    },
    /// Bundled examples and their reference sets
    ListExamples(Common),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML configuration file; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundled example name or a model spec file
    #[arg(long)]
    pub model: Option<String>,
    /// Nodes per base axis
    #[arg(long)]
    pub grid: Option<usize>,
    /// Nodes per fiber axis
    #[arg(long)]
    pub vgrid: Option<usize>,
    /// Half-width of the fiber box
    #[arg(long)]
    pub vbox: Option<f64>,
    /// Time step in cells
    #[arg(long)]
    pub tau: Option<f64>,
    /// Stencil radius in cells
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub tol_c: Option<f64>,
    #[arg(long)]
    pub tol_r: Option<f64>,
    #[arg(long)]
    pub tol_a: Option<f64>,
    #[arg(long)]
    pub tol_jump: Option<f64>,
    #[arg(long)]
    pub tol_inv: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (overridden by WEAKKAM_THREADS)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Level of the alpha sublevel set
    #[arg(long)]
    pub level: Option<f64>,
    /// Classes per axis
    #[arg(long)]
    pub classes: Option<usize>,
    /// Half-width of the class window
    #[arg(long)]
    pub class_width: Option<f64>,
    /// Minimal chain time
    #[arg(long)]
    pub t_min: Option<f64>,
    /// Interpolation parameters, comma separated
    #[arg(long, value_delimiter = ',')]
    pub t: Vec<f64>,
    /// Number of random perturbations
    #[arg(long)]
    pub probes: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            model: self.model.clone(),
            grid: self.grid,
            vgrid: self.vgrid,
            vbox: self.vbox,
            tau: self.tau,
            radius: self.radius,
            tol_c: self.tol_c,
            tol_r: self.tol_r,
            tol_a: self.tol_a,
            tol_jump: self.tol_jump,
            tol_inv: self.tol_inv,
            out: self.out.clone(),
            seed: self.seed,
            threads: self.threads,
            level: self.level,
            classes: self.classes,
            class_width: self.class_width,
            t_min: self.t_min,
            t: self.t.clone(),
            probes: self.probes,
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (task, common, verify) = match &cli.command {
        Command::CriticalValue(c) => (Task::CriticalValue, c, None),
        Command::WeakKam(c) => (Task::WeakKam, c, None),
        Command::Barrier(c) => (Task::Barrier, c, None),
        Command::Aubry(c) => (Task::Aubry, c, None),
        Command::Mather(c) => (Task::Mather, c, None),
        Command::Alpha(c) => (Task::Alpha, c, None),
        Command::Shape(c) => (Task::Shape, c, None),
        Command::Selector(c) => (Task::Selector, c, None),
        Command::ChainRecurrent(c) => (Task::ChainRecurrent, c, None),
        Command::Verify { theorem, example, common } => (Task::Verify, common, Some((theorem, example))),
        Command::ListExamples(c) => (Task::ListExamples, c, None),
    };
    let file = match &common.config {
        Some(p) => config::read_file(p)?,
        None => FileConfig::default(),
    };
    let env = std::env::var("WEAKKAM_THREADS").ok();
    let cfg = config::resolve(task, &file, &common.overrides(), env.as_deref())?;
    let mut out = OutputDir::create(&cfg.output)?;
    let start = std::time::Instant::now();
    let result = match task {
        Task::CriticalValue => commands::critical_value(&cfg, &mut out),
        Task::WeakKam => commands::weak_kam(&cfg, &mut out),
        Task::Barrier => commands::barrier(&cfg, &mut out),
        Task::Aubry => commands::aubry(&cfg, &mut out),
        Task::Mather => commands::mather(&cfg, &mut out),
        Task::Alpha => commands::alpha(&cfg, &mut out),
        Task::Shape => commands::shape(&cfg, &mut out),
        Task::Selector => commands::selector(&cfg, &mut out),
        Task::ChainRecurrent => commands::chain_recurrent(&cfg, &mut out),
        Task::Verify => {
            let (theorem, example) = verify.expect("verify arguments");
            commands::verify(&cfg, theorem, example, &mut out)
        }
        Task::ListExamples => commands::list_examples(&cfg, &mut out),
    };
    // summary.json is written even when the run fails; a failed verification has already written its own
    if let Err(e) = &result {
        if matches!(e, CliError::Verification(_)) {
            return result;
        }
        let _ = out.summary(&cfg, serde_json::json!({ "error": e.to_string() }));
    }
    result?;
    // kept out of summary.json so reruns are byte-identical
    eprintln!("{}: done in {:.2} s, output in {}", task.name(), start.elapsed().as_secs_f64(), cfg.output.display());
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
