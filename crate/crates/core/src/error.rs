use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A grid, tolerance or parameter violates its documented range.
    InvalidArgument(String),
    /// The fiber box is too small: a conjugation maximizer sits on its edge.
    ArgmaxOnBoundary { x: [f64; 2], p: [f64; 2] },
    /// A sampled fiber Hessian is not positive definite.
    ConvexityViolation { x: [f64; 2], v: [f64; 2], min_eigenvalue: f64 },
    /// A velocity lies outside the certified fiber box.
    OutOfBox { speed: f64, half_width: f64 },
    /// Energy conservation failed during integration; `dt` is too large.
    EnergyDrift { drift: f64, tolerance: f64 },
    /// The characteristic field vanishes at some node.
    VanishingField { node: usize, magnitude: f64 },
    /// A stencil step needs a velocity outside the fiber box.
    VelocityBoxExceeded { max_speed: f64, half_width: f64 },
    BracketFailure,
    NonConvergence { iterations: usize, residual: f64 },
    CMismatch { backward: f64, forward: f64 },
    DominationViolated { fraction: f64 },
    EmptyAubry,
    DerivativeMismatch { node: usize, gap: f64 },
    Infeasible,
    SolverFailure(String),
    GraphViolation { node: usize, separation: f64 },
    ResolutionTooCoarse { change: f64 },
    GridTooSmall,
    VerificationFailed { achieved_max: f64 },
    MeasureNotPreserved { max_divergence: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ArgmaxOnBoundary { x, p } => {
                write!(f, "conjugation argmax on fiber box edge at x={x:?}, p={p:?}")
            }
            Error::ConvexityViolation { x, v, min_eigenvalue } => write!(
                f,
                "fiber Hessian not positive definite at x={x:?}, v={v:?} (min eigenvalue {min_eigenvalue})"
            ),
            Error::OutOfBox { speed, half_width } => {
                write!(f, "velocity {speed} outside fiber box of half-width {half_width}")
            }
            Error::EnergyDrift { drift, tolerance } => {
                write!(f, "energy drift {drift:e} exceeds {tolerance:e}")
            }
            Error::VanishingField { node, magnitude } => {
                write!(f, "characteristic field vanishes at node {node} (|V| = {magnitude:e})")
            }
            Error::VelocityBoxExceeded { max_speed, half_width } => write!(
                f,
                "stencil speed {max_speed} exceeds fiber box half-width {half_width}"
            ),
            Error::BracketFailure => f.write_str("no finite bracket for the critical value"),
            Error::NonConvergence { iterations, residual } => {
                write!(f, "no convergence after {iterations} iterations (residual {residual:e})")
            }
            Error::CMismatch { backward, forward } => {
                write!(f, "backward/forward critical values disagree: {backward} vs {forward}")
            }
            Error::DominationViolated { fraction } => {
                write!(f, "input is not dominated (passing fraction {fraction})")
            }
            Error::EmptyAubry => f.write_str("projected Aubry set is empty"),
            Error::DerivativeMismatch { node, gap } => {
                write!(f, "du- and du+ differ by {gap:e} at node {node}")
            }
            Error::Infeasible => f.write_str("linear program is infeasible"),
            Error::SolverFailure(msg) => write!(f, "linear program solver failed: {msg}"),
            Error::GraphViolation { node, separation } => write!(
                f,
                "Mather set is not a graph: velocities {separation} apart over node {node}"
            ),
            Error::ResolutionTooCoarse { change } => {
                write!(f, "selector value changed by {change:e} under fiber refinement")
            }
            Error::GridTooSmall => f.write_str("sublevel set touches the class-grid boundary"),
            Error::VerificationFailed { achieved_max } => {
                write!(f, "section verification failed (max H = {achieved_max})")
            }
            Error::MeasureNotPreserved { max_divergence } => {
                write!(f, "field is not divergence free (max |div| = {max_divergence:e})")
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
