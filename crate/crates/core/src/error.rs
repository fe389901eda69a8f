use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("field at step {step} has {got} values, lattice needs {expected}")]
    MissingValues {
        step: usize,
        expected: usize,
        got: usize,
    },

    #[error("step {step} is not covered by this field (covers {first}..={last})")]
    StepNotCovered {
        step: usize,
        first: usize,
        last: usize,
    },

    #[error(
        "stability guard violated: {condition} = {value:.6} (limit {limit}); refine the grid or lower m"
    )]
    Stability {
        condition: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("implicit step did not converge at step {step}, node {node} (last update {last_update:e})")]
    NonConvergence {
        step: usize,
        node: usize,
        last_update: f64,
    },

    #[error("terminal value {claim} below barrier {barrier} at leaf {node}")]
    TerminalBelowBarrier {
        node: usize,
        claim: f64,
        barrier: f64,
    },

    #[error("invalid claim: {0}")]
    InvalidClaim(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
