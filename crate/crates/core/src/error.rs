//! Error type shared by all solver modules.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of grid construction, linear solves and the nonlinear
/// evolution/profile machinery.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Domain endpoints or dimension are inconsistent (`a >= b`, `a < 0`, ...).
    InvalidGeometry(String),
    /// Fewer nodes requested than the discretization supports.
    ResolutionTooSmall { requested: usize, minimum: usize },
    /// `m` outside `(2, 2N/(N-2)_+)` or a non-positive dimension.
    InvalidExponent(String),
    /// A field was paired with an operator or grid it does not live on.
    GridMismatch,
    /// Field values must be finite.
    NonFiniteField,
    /// An operation requiring `w != 0` received the zero field.
    ZeroField,
    /// The linear solver did not reach the requested residual.
    SolverFailure { residual: f64, tolerance: f64 },
    /// Damped Newton iteration failed to contract.
    NewtonDivergence { residual: f64, iterations: usize },
    /// The input is already below the extinction floor.
    ExtinctInput,
    /// Time stepping exhausted `max_steps` before reaching its goal.
    MaxStepsExceeded { steps: usize },
    /// Requested time is at or past the estimated extinction time.
    BeyondExtinction { t: f64, t_star: f64 },
    /// Not enough of the decay was resolved to fit a rate.
    InsufficientDecayWindow { points: usize },
    /// Too few data points inside the fit window.
    InsufficientPoints { points: usize, required: usize },
    /// Shooting bracket search found no sign change.
    ShootingBracketFailure,
    /// Iterative minimization did not converge.
    NonConvergence { iterations: usize, residual: f64 },
    /// Wrong grid shape for the operation (e.g. angular variance on a 1-D grid).
    WrongGridShape,
    /// A trajectory ended before the requested diagnostic window.
    TrajectoryTooShort,
    /// Extinction-time projection onto the phase set failed.
    ProjectionFailure(String),
    /// Invalid configuration value.
    InvalidConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidGeometry(msg) => write!(f, "invalid geometry: {msg}"),
            Error::ResolutionTooSmall { requested, minimum } => {
                write!(f, "resolution too small: {requested} < {minimum}")
            }
            Error::InvalidExponent(msg) => write!(f, "invalid exponent: {msg}"),
            Error::GridMismatch => write!(f, "field does not live on the operator's grid"),
            Error::NonFiniteField => write!(f, "field contains non-finite values"),
            Error::ZeroField => write!(f, "operation requires a nonzero field"),
            Error::SolverFailure { residual, tolerance } => {
                write!(f, "linear solve stalled at residual {residual:.3e} (tol {tolerance:.3e})")
            }
            Error::NewtonDivergence { residual, iterations } => {
                write!(f, "Newton diverged after {iterations} iterations (residual {residual:.3e})")
            }
            Error::ExtinctInput => write!(f, "input is below the extinction floor"),
            Error::MaxStepsExceeded { steps } => write!(f, "exceeded {steps} time steps"),
            Error::BeyondExtinction { t, t_star } => {
                write!(f, "time {t} is beyond the extinction time {t_star}")
            }
            Error::InsufficientDecayWindow { points } => {
                write!(f, "only {points} samples in the decay window")
            }
            Error::InsufficientPoints { points, required } => {
                write!(f, "{points} points in fit window, need {required}")
            }
            Error::ShootingBracketFailure => write!(f, "no sign change in the shooting bracket"),
            Error::NonConvergence { iterations, residual } => {
                write!(f, "no convergence after {iterations} iterations (residual {residual:.3e})")
            }
            Error::WrongGridShape => write!(f, "operation requires a different grid shape"),
            Error::TrajectoryTooShort => write!(f, "trajectory too short for the diagnostic"),
            Error::ProjectionFailure(msg) => write!(f, "phase-set projection failed: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
