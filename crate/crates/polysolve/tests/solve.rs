use polysolve::{solve_multistart, solve_total_degree, Execution, MonomialSystem, MultistartConfig, Polynomial, SolveError, TrackerConfig};
use proptest::prelude::*;

fn sorted(mut pts: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts
}

/// Circle of radius `r` against the line `y = m x + c`.
fn circle_line(r: f64, m: f64, c: f64) -> MonomialSystem {
    MonomialSystem::new(
        2,
        vec![
            Polynomial::new(vec![(1.0, vec![2, 0]), (1.0, vec![0, 2]), (-r * r, vec![0, 0])]),
            Polynomial::new(vec![(1.0, vec![0, 1]), (-m, vec![1, 0]), (-c, vec![0, 0])]),
        ],
    )
    .unwrap()
}

fn circle_line_oracle(r: f64, m: f64, c: f64) -> Vec<Vec<f64>> {
    let (a, b, q) = (1.0 + m * m, 2.0 * m * c, c * c - r * r);
    let disc = b * b - 4.0 * a * q;
    if disc < 0.0 {
        return Vec::new();
    }
    let roots = [(-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a)];
    sorted(roots.iter().map(|&x| vec![x, m * x + c]).collect())
}

#[test]
fn cubic_roots_match_the_factorization() {
    // (x - 1)(x + 2)(x - 0.5)
    let sys = MonomialSystem::new(1, vec![Polynomial::new(vec![(1.0, vec![3]), (0.5, vec![2]), (-2.5, vec![1]), (1.0, vec![0])])]).unwrap();
    let set = solve_total_degree(&sys, &TrackerConfig::default()).unwrap();
    assert_eq!(set.provenance.paths_tracked, 3);
    assert!(set.provenance.exhaustive);
    let got = sorted(set.real_points());
    let want = [-2.0, 0.5, 1.0];
    assert_eq!(got.len(), 3);
    for (g, w) in got.iter().zip(want) {
        assert!((g[0] - w).abs() < 1e-10, "{g:?}");
    }
}

#[test]
fn complex_roots_are_not_reported_real() {
    let sys = MonomialSystem::new(1, vec![Polynomial::new(vec![(1.0, vec![2]), (1.0, vec![0])])]).unwrap();
    let set = solve_total_degree(&sys, &TrackerConfig::default()).unwrap();
    assert_eq!(set.solutions.len(), 2);
    assert_eq!(set.num_real(), 0);
}

#[test]
fn budget_is_enforced() {
    let sys = circle_line(1.0, 0.3, 0.1);
    let cfg = TrackerConfig {
        path_budget: 1,
        ..Default::default()
    };
    assert!(matches!(solve_total_degree(&sys, &cfg), Err(SolveError::BudgetExceeded { .. })));
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let sys = MonomialSystem::new(
        2,
        vec![
            Polynomial::new(vec![(1.0, vec![3, 0]), (-1.0, vec![0, 1]), (0.2, vec![1, 1]), (-0.3, vec![0, 0])]),
            Polynomial::new(vec![(1.0, vec![0, 3]), (-1.0, vec![1, 0]), (0.1, vec![2, 0]), (0.4, vec![0, 0])]),
        ],
    )
    .unwrap();
    let run = |execution| {
        solve_total_degree(
            &sys,
            &TrackerConfig {
                execution,
                ..Default::default()
            },
        )
        .unwrap()
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn circle_line_intersections_match_the_quadratic_formula(r in 0.5f64..2.0, m in -2.0f64..2.0, c in -1.5f64..1.5) {
        let want = circle_line_oracle(r, m, c);
        // Skip near-tangent configurations where the real count is ill-conditioned.
        let disc = (2.0 * m * c).powi(2) - 4.0 * (1.0 + m * m) * (c * c - r * r);
        prop_assume!(disc.abs() > 1e-3);
        let sys = circle_line(r, m, c);
        let set = solve_total_degree(&sys, &TrackerConfig::default()).unwrap();
        let got = sorted(set.real_points());
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g[0] - w[0]).abs() < 1e-9 && (g[1] - w[1]).abs() < 1e-9, "{:?} vs {:?}", g, w);
        }
        let ms = solve_multistart(&sys, &MultistartConfig { random_starts: 200, radius: 3.0, ..Default::default() }, &TrackerConfig::default());
        prop_assert!(!ms.provenance.exhaustive);
        for p in ms.real_points() {
            prop_assert!(want.iter().any(|w| (p[0] - w[0]).abs() < 1e-9 && (p[1] - w[1]).abs() < 1e-9));
        }
    }
}
