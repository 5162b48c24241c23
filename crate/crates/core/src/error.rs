use thiserror::Error;

/// Errors produced by the Sinkhorn MPC library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The Gramian (or the stacked input-to-state map) is singular to working precision.
    #[error("near-singular Gramian (condition number {condition:e})")]
    NearSingularGramian { condition: f64 },

    /// The closed-loop matrix built from the Gramian is not stable.
    #[error("closed-loop matrix is not stable (stability margin {margin:e})")]
    UnstableClosedLoop { margin: f64 },

    /// No constant input makes the requested target an equilibrium.
    #[error("target is not an equilibrium for any constant input (residual {residual:e})")]
    InfeasibleTarget { residual: f64 },

    /// Linear-domain Sinkhorn produced non-finite values; switch to the log domain.
    #[error("numeric range exceeded in linear-domain kernel arithmetic")]
    NumericRange,

    #[error("Sinkhorn did not converge after {iterations} iterations (marginal violation {violation:e})")]
    NonConvergence { iterations: usize, violation: f64 },

    #[error("state diverged at step {step}")]
    Divergence { step: usize },

    /// A component failure inside a simulation step.
    #[error("simulation step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through [`Error::Step`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
