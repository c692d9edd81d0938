use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("system is not square: {equations} equations in {unknowns} unknowns")]
    NotSquare { equations: usize, unknowns: usize },

    #[error("total degree {paths} exceeds the path budget {budget}")]
    BudgetExceeded { paths: u64, budget: u64 },

    #[error("system has no unknowns")]
    Empty,

    #[error("unknown {0} does not appear in any equation")]
    UnusedVariable(usize),
}
