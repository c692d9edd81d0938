//! Numerical solving of small square polynomial systems.
//!
//! Three engines share one evaluation trait ([`System`]):
//! total-degree homotopy continuation over the complex numbers,
//! real parameter-path tracking for families `H(x, t)`, and damped
//! multistart Newton. Path tracking runs on rayon when the `parallel`
//! feature is enabled and falls back to a plain loop otherwise.

pub mod config;
pub mod error;
pub mod monomial;
pub mod multistart;
pub mod newton;
pub mod parallel;
pub mod solutions;
pub mod system;
pub mod total_degree;
pub mod tracker;

pub use config::{Execution, Predictor, TrackerConfig};
pub use error::SolveError;
pub use monomial::{Monomial, MonomialSystem, Polynomial};
pub use multistart::{solve_multistart, MultistartConfig};
pub use newton::{damped_newton, newton, norm2, norm_inf, NewtonOutcome};
pub use parallel::map_indexed;
pub use solutions::{Engine, Provenance, Solution, SolutionSet};
pub use system::{AtParameter, Homotopy, ParameterFamily, Scalar, System};
pub use total_degree::{solve_total_degree, TotalDegreeHomotopy};
pub use tracker::{track, track_parameter_path, PathRecord, PathStatus};

/// Complex scalar used by the homotopy engine.
pub type C64 = num_complex::Complex64;
