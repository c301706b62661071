use thiserror::Error;

/// Errors surfaced by mechanism evaluation, estimation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// `lambda` lies outside the domain of the cumulant flow at horizon `t`
    /// (the denominator of the flow solution is nonpositive).
    #[error("flow domain violated: lambda={lambda} not above lambda_min={lambda_min} for t={t}")]
    FlowDomain { lambda: f64, lambda_min: f64, t: f64 },

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature did not converge over [{a}, {b}]: error estimate {err:.3e}")]
    QuadratureNonConvergence { a: f64, b: f64, err: f64 },

    /// The ergodicity integral diverges near zero (non-ergodic configuration).
    #[error("integrand not integrable at 0: non-ergodic configuration")]
    NonIntegrable,

    /// The immigration density cannot be evaluated at the requested argument
    /// (e.g. an exponential family evaluated at z <= -rate).
    #[error("immigration mechanism undefined at z={0}")]
    PsiDomain(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Exponent too large for a stable empirical transform.
    #[error("overflow guard: exponent {0:.3e} exceeds the safe range")]
    OverflowGuard(f64),

    #[error("solver did not converge within {max_iter} iterations (pg norm {pg_norm:.3e})")]
    SolverNonConvergence { max_iter: usize, pg_norm: f64 },

    #[error("projection did not reach its fixed point within {0} iterations")]
    ProjectionNonConvergence(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
