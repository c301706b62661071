//! Nonparametric estimation of the jump intensity density of a jump-CIR
//! (CBI) process from low-frequency observations.
//!
//! The pipeline: simulate or load an observation series sampled at unit
//! spacing, form empirical log-Laplace transforms on a compact lambda grid,
//! and project them onto the curves generated by a convex set of candidate
//! jump densities.  The projection is a constrained weighted least-squares
//! problem over piecewise-constant densities on a dyadic-aligned grid,
//! solved by accelerated projected gradient.

pub mod defaults;
pub mod density;
pub mod error;
pub mod estimator;
pub mod mechanism;
pub mod operator;
pub mod project;
pub mod quad;
pub mod reference;
pub mod simulate;
pub mod validate;

pub use density::{ConstraintMode, ConstraintSet, GriddedDensity, LambdaGrid};
pub use error::{Error, Result};
pub use estimator::{
    empirical_g1, empirical_g2, fit, risk_statistic, xi_diagnostics, EstimateReport, FitFlags,
    FitOptions, ObservationSeries, RiskStatistic,
};
pub use mechanism::{
    asymptotic_variance_w, check_ergodicity, psi, psi_time_integral, stationary_laplace,
    transition_laplace, BranchingMechanism, Horizon, ImmigrationSpec, JumpDensity,
};
pub use operator::{assemble_operator, feature, lipschitz_check, OperatorMatrix};
pub use project::project;
pub use quad::QuadTol;
pub use simulate::{one_step_samples, simulate_path, PathSample, Scheme, SimConfig};
