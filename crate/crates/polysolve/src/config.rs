use serde::{Deserialize, Serialize};

/// Predictor used between corrector steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    Euler,
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if crate::parallel::parallel_available() {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Step control, tolerances and bookkeeping shared by all engines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Seed for the gamma phase and for random multistart seeds.
    pub seed: u64,
    /// First step, as a fraction of the parameter interval.
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Relative Newton step size accepted by the corrector.
    pub corrector_tol: f64,
    pub max_corrector_iters: usize,
    pub max_steps: usize,
    pub predictor: Predictor,
    /// Paths whose norm exceeds this are declared divergent.
    pub divergence_norm: f64,
    /// Endpoints with a larger max-norm are treated as solutions at infinity.
    pub finite_bound: f64,
    /// Real if `max |Im| < real_tol * (1 + |Re|)`.
    pub real_tol: f64,
    /// Max-norm radius for merging duplicate endpoints.
    pub dedup_radius: f64,
    /// Relative Newton step that counts as polished.
    pub polish_tol: f64,
    pub polish_iters: usize,
    /// Largest number of start paths accepted by the total-degree engine.
    pub path_budget: u64,
    pub execution: Execution,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            initial_step: 0.01,
            min_step: 1e-14,
            max_step: 0.05,
            corrector_tol: 1e-10,
            max_corrector_iters: 4,
            max_steps: 200_000,
            predictor: Predictor::Euler,
            divergence_norm: 1e8,
            finite_bound: 1e6,
            real_tol: 1e-8,
            dedup_radius: 1e-7,
            polish_tol: 1e-12,
            polish_iters: 40,
            path_budget: 531_441,
            execution: Execution::default(),
        }
    }
}
