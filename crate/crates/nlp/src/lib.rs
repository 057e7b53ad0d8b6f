//! Smooth constrained nonlinear programming.
//!
//! [`solve_nlp`] implements a primal-dual interior-point method over the
//! [`NlpProblem`] callback interface, using the sparse LDLᵀ factorization in
//! [`ldl`] for the Newton systems.

pub mod dump;
pub mod elastic;
pub mod ipm;
pub mod ldl;
pub mod problem;

pub use dump::NlpDump;
pub use ipm::{solve_nlp, IpmOptions, NlpSolution, NlpStatus};
pub use problem::{Dims, NlpProblem, Sink};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NlpError {
    #[error("problem is infeasible (minimum total violation {violation:.3e} after {iterations} iterations)")]
    Infeasible { violation: f64, iterations: usize },
    #[error("iteration limit {iterations} reached (constraint violation {violation:.3e})")]
    IterationLimit { iterations: usize, violation: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("start vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

impl NlpError {
    pub fn iterations(&self) -> usize {
        match self {
            NlpError::Infeasible { iterations, .. } | NlpError::IterationLimit { iterations, .. } => *iterations,
            _ => 0,
        }
    }
}
