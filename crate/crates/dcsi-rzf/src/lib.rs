//! Joint RZF precoding over a multi-TX cooperative broadcast channel with
//! distributed CSIT: Monte-Carlo link-level simulation, large-system
//! deterministic equivalents of the per-user SINR, and robust optimization of
//! the per-TX regularization coefficients and power scalings.
//!
//! The crate is organized around the pipeline
//! [`scenario`] -> [`channel`] -> [`precoding`] (simulation side) and
//! [`scenario`] -> [`detequiv`] -> [`optimizer`] (deterministic side), with
//! [`experiments`] tying both together for the reproduction studies.

pub mod channel;
pub mod detequiv;
pub mod experiments;
pub mod linalg;
pub mod optimizer;
pub mod precoding;
pub mod scenario;

pub use channel::{sample_channel, sqrt_psd, trial_rng, ChannelDraw};
pub use detequiv::{
    closed_form_m_iso, iso_specializations, mu_from_per_tx_power, sinr_det_equiv,
    solve_fixed_point, DetEquivEngine, DetEquivOptions, DetEquivReport, FixedPointSolution,
    IsoKind,
};
pub use optimizer::{
    joint_optimize, naive_alpha, optimize_common_alpha, optimize_per_tx_alpha, optimize_power,
    AlphaMode, OptimizerOptions, OptimizerTrace,
};
pub use precoding::{
    assemble_global, empirical_sinr, monte_carlo, rzf_precoder, McEstimate, McOptions,
    PrecoderParams,
};
pub use scenario::{
    csit_coefficients, example1_mapping, load_scenario, parse_scenario, validate_correlation,
    Scenario,
};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("did not converge within {max_iter} iterations (residual {residual:.3e})")]
    MaxIter { max_iter: usize, residual: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
