use thiserror::Error;

use crate::dual::DualState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// `ΣΣᵀ = λ G R⁻¹ Gᵀ` fails at some probe point.
    #[error("noise/control-cost proportionality violated at probe {probe}: relative residual {residual:.3e} > {tolerance:.1e}")]
    AssumptionViolated {
        probe: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite state at t = {time}")]
    NonFiniteState { time: f64 },

    #[error("policy evaluation failed: {0}")]
    PolicyFailure(String),

    #[error("trajectory {index}: {source}")]
    Rollout {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    #[error("Σ†G R⁻¹ (Σ†G)ᵀ is singular")]
    SingularGram,

    #[error("point {point:?} lies outside the grid")]
    OutOfGrid { point: Vec<f64> },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("time integration failed: {0}")]
    IntegratorFailure(String),

    #[error("inconsistent grid mask: {0}")]
    MaskInconsistent(String),

    #[error("ξ is not positive at node ({i}, {j})")]
    NonPositiveXi { i: usize, j: usize },

    #[error("dual ascent did not reach the tolerance band within {} iterations", .0.iteration)]
    MaxItersExceeded(Box<DualState>),

    #[error("invalid value for `{field}`: {message}")]
    InvalidParameter { field: String, message: String },

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::AssumptionViolated { .. } => "assumption_violated",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::NonFiniteState { .. } => "non_finite_state",
            Error::PolicyFailure(_) => "policy_failure",
            Error::Rollout { .. } => "rollout",
            Error::DegenerateEstimate(_) => "degenerate_estimate",
            Error::SingularGram => "singular_gram",
            Error::OutOfGrid { .. } => "out_of_grid",
            Error::GridTooCoarse(_) => "grid_too_coarse",
            Error::IntegratorFailure(_) => "integrator_failure",
            Error::MaskInconsistent(_) => "mask_inconsistent",
            Error::NonPositiveXi { .. } => "non_positive_xi",
            Error::MaxItersExceeded(_) => "max_iters_exceeded",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
