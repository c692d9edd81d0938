//! Damped Newton from many seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrackerConfig;
use crate::newton::damped_newton;
use crate::parallel::map_indexed;
use crate::solutions::{dedup, Engine, Provenance, Solution, SolutionSet};
use crate::system::System;
use crate::total_degree::jacobian_condition;
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultistartConfig {
    /// Number of random seeds drawn in addition to `seeds`.
    pub random_starts: usize,
    /// Random seeds are drawn from `center ± radius` coordinate-wise.
    pub center: Vec<f64>,
    pub radius: f64,
    /// Structured seeds tried first.
    pub seeds: Vec<Vec<f64>>,
    pub max_iters: usize,
}

impl Default for MultistartConfig {
    fn default() -> Self {
        Self {
            random_starts: 1000,
            center: Vec::new(),
            radius: 2.0,
            seeds: Vec::new(),
            max_iters: 100,
        }
    }
}

/// Runs damped Newton from every seed and keeps converged real points.
///
/// No completeness guarantee; the provenance marks the set non-exhaustive.
pub fn solve_multistart<S: System>(sys: &S, ms: &MultistartConfig, cfg: &TrackerConfig) -> SolutionSet {
    let n = sys.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = ms.seeds.clone();
    for _ in 0..ms.random_starts {
        starts.push(
            (0..n)
                .map(|i| {
                    let c = ms.center.get(i).copied().unwrap_or(0.0);
                    c + ms.radius * (2.0 * rng.random::<f64>() - 1.0)
                })
                .collect(),
        );
    }
    let results = map_indexed(starts.len(), cfg.execution, |k| {
        let out = damped_newton(sys, &starts[k], cfg.polish_tol, ms.max_iters);
        if !out.converged || out.x.iter().any(|v| v.abs() > cfg.finite_bound) {
            return None;
        }
        let point: Vec<C64> = out.x.iter().map(|&v| C64::new(v, 0.0)).collect();
        let condition = jacobian_condition(sys, &point);
        Some(Solution {
            point,
            residual: out.residual,
            real_point: Some(out.x),
            condition,
            multiplicity: 1,
        })
    });
    let tracked = results.len() as u64;
    let sols: Vec<Solution> = results.into_iter().flatten().collect();
    let converged = sols.len() as u64;
    let (solutions, merged) = dedup(sols, cfg.dedup_radius);
    SolutionSet {
        solutions,
        provenance: Provenance {
            engine: Some(Engine::Multistart),
            unknowns: n,
            degrees: sys.degrees(),
            paths_tracked: tracked,
            paths_converged: converged,
            paths_failed: tracked - converged,
            duplicates_merged: merged,
            seed: cfg.seed,
            exhaustive: false,
            warnings: vec!["multistart gives no completeness guarantee".into()],
            ..Default::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monomial::{MonomialSystem, Polynomial};

    #[test]
    fn finds_both_roots() {
        let sys = MonomialSystem::new(1, vec![Polynomial::new(vec![(1.0, vec![2]), (-1.0, vec![0])])])
            .unwrap();
        let ms = MultistartConfig {
            random_starts: 100,
            ..Default::default()
        };
        let set = solve_multistart(&sys, &ms, &TrackerConfig::default());
        assert_eq!(set.num_real(), 2);
        assert!(!set.provenance.exhaustive);
    }
}
