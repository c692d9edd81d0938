//! Total-degree homotopy `H = (1 − t)·γ·G + t·F` with `G_i = x_i^{d_i} − 1`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrackerConfig;
use crate::error::SolveError;
use crate::newton::{newton, norm_inf};
use crate::parallel::map_indexed;
use crate::solutions::{dedup, Engine, Provenance, Solution, SolutionSet};
use crate::system::{Homotopy, System};
use crate::tracker::{track, PathStatus};
use crate::C64;

pub struct TotalDegreeHomotopy<'a, S: System> {
    pub system: &'a S,
    pub degrees: Vec<u32>,
    pub gamma: C64,
}

impl<'a, S: System> TotalDegreeHomotopy<'a, S> {
    pub fn new(system: &'a S, gamma: C64) -> Self {
        Self {
            degrees: system.degrees(),
            system,
            gamma,
        }
    }

    pub fn num_paths(&self) -> Option<u64> {
        self.degrees
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
    }

    /// Start point number `k` in mixed-radix order over the roots of unity.
    pub fn start_point(&self, mut k: u64) -> Vec<C64> {
        self.degrees
            .iter()
            .map(|&d| {
                let d = d.max(1) as u64;
                let digit = k % d;
                k /= d;
                C64::from_polar(1.0, 2.0 * PI * digit as f64 / d as f64)
            })
            .collect()
    }
}

impl<S: System> Homotopy<C64> for TotalDegreeHomotopy<'_, S> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn evaluate(&self, x: &[C64], t: f64, h: &mut [C64], hx: &mut DMatrix<C64>, ht: &mut [C64]) {
        let n = x.len();
        self.system.evaluate(x, h, Some(hx));
        let s = 1.0 - t;
        for i in 0..n {
            let d = self.degrees[i].max(1) as i32;
            let xd1 = x[i].powi(d - 1);
            let g = self.gamma * (xd1 * x[i] - 1.0);
            let gd = self.gamma * xd1 * d as f64;
            ht[i] = h[i] - g;
            h[i] = h[i] * t + g * s;
            for k in 0..n {
                hx[(i, k)] *= t;
            }
            hx[(i, i)] += gd * s;
        }
    }
}

/// Polishes a complex endpoint and applies the finiteness and reality tests.
pub(crate) fn finalize_endpoint<S: System>(
    sys: &S,
    x: &[C64],
    cfg: &TrackerConfig,
) -> Option<Solution> {
    let polished = newton(sys, x, cfg.polish_tol, cfg.polish_iters);
    if !(polished.converged || polished.residual < 1e-11) {
        return None;
    }
    let point = polished.x;
    if norm_inf(&point) > cfg.finite_bound || point.iter().any(|z| !z.re.is_finite()) {
        return None;
    }
    let is_real = point
        .iter()
        .all(|z| z.im.abs() < cfg.real_tol * (1.0 + z.re.abs()));
    let mut residual = polished.residual;
    let mut real_point = None;
    if is_real {
        let re: Vec<f64> = point.iter().map(|z| z.re).collect();
        let out = newton(sys, &re, cfg.polish_tol, cfg.polish_iters);
        if out.converged || out.residual < 1e-11 {
            residual = out.residual;
            real_point = Some(out.x);
        }
    }
    let condition = jacobian_condition(sys, &point);
    Some(Solution {
        point,
        real_point,
        residual,
        condition,
        multiplicity: 1,
    })
}

pub(crate) fn jacobian_condition<S: System>(sys: &S, x: &[C64]) -> f64 {
    let n = sys.dim();
    let m = sys.num_equations();
    let mut f = vec![C64::new(0.0, 0.0); m];
    let mut j = DMatrix::<C64>::zeros(m, n);
    sys.evaluate(x, &mut f, Some(&mut j));
    let sv = j.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Solves a square system by tracking all `Π d_i` total-degree paths.
pub fn solve_total_degree<S: System>(sys: &S, cfg: &TrackerConfig) -> Result<SolutionSet, SolveError> {
    let n = sys.dim();
    if n == 0 {
        return Err(SolveError::Empty);
    }
    if sys.num_equations() != n {
        return Err(SolveError::NotSquare {
            equations: sys.num_equations(),
            unknowns: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let angle: f64 = rng.random::<f64>() * 2.0 * PI;
    let gamma = C64::from_polar(1.0, angle);
    let hom = TotalDegreeHomotopy::new(sys, gamma);
    let paths = hom.num_paths().unwrap_or(u64::MAX);
    if paths > cfg.path_budget {
        return Err(SolveError::BudgetExceeded {
            paths,
            budget: cfg.path_budget,
        });
    }

    let results = map_indexed(paths as usize, cfg.execution, |k| {
        let start = hom.start_point(k as u64);
        let rec = track(&hom, &start, 0.0, 1.0, cfg, false);
        // Endpoints that stalled right before t = 1 are usually singular
        // solutions; let the polisher decide.
        let candidate = match rec.status {
            PathStatus::Converged => true,
            PathStatus::StepFailure => rec.t > 1.0 - 1e-6,
            _ => false,
        };
        let sol = if candidate {
            finalize_endpoint(sys, &rec.x, cfg)
        } else {
            None
        };
        (rec.status, sol)
    });

    let mut prov = Provenance {
        engine: Some(Engine::TotalDegree),
        unknowns: n,
        degrees: hom.degrees.clone(),
        paths_tracked: paths,
        seed: cfg.seed,
        gamma: Some([gamma.re, gamma.im]),
        exhaustive: true,
        ..Default::default()
    };
    let mut sols = Vec::new();
    for (status, sol) in results {
        match status {
            PathStatus::Converged => prov.paths_converged += 1,
            PathStatus::Diverged => prov.paths_diverged += 1,
            PathStatus::StepFailure | PathStatus::MaxSteps => prov.paths_failed += 1,
        }
        match sol {
            Some(s) => sols.push(s),
            None if status == PathStatus::Converged => prov.at_infinity += 1,
            None => {}
        }
    }
    let (solutions, merged) = dedup(sols, cfg.dedup_radius);
    prov.duplicates_merged = merged;
    if prov.paths_failed > 0 {
        prov.warnings.push(format!(
            "{} of {} paths failed before reaching t = 1",
            prov.paths_failed, paths
        ));
    }
    Ok(SolutionSet {
        solutions,
        provenance: prov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monomial::{MonomialSystem, Polynomial};

    #[test]
    fn start_points_are_roots_of_unity() {
        let sys = MonomialSystem::new(
            2,
            vec![
                Polynomial::new(vec![(1.0, vec![3, 0]), (-1.0, vec![0, 0])]),
                Polynomial::new(vec![(1.0, vec![0, 2]), (-1.0, vec![0, 0])]),
            ],
        )
        .unwrap();
        let hom = TotalDegreeHomotopy::new(&sys, C64::new(1.0, 0.0));
        assert_eq!(hom.num_paths(), Some(6));
        for k in 0..6 {
            let p = hom.start_point(k);
            assert!((p[0].powi(3) - 1.0).norm() < 1e-14);
            assert!((p[1].powi(2) - 1.0).norm() < 1e-14);
        }
    }

    #[test]
    fn square_root_pair() {
        let sys = MonomialSystem::new(1, vec![Polynomial::new(vec![(1.0, vec![2]), (-1.0, vec![0])])])
            .unwrap();
        let set = solve_total_degree(&sys, &TrackerConfig::default()).unwrap();
        assert_eq!(set.provenance.paths_tracked, 2);
        let pts = set.real_points();
        assert_eq!(pts.len(), 2);
        assert!((pts[0][0] + 1.0).abs() < 1e-14 && (pts[1][0] - 1.0).abs() < 1e-14);
    }
}
