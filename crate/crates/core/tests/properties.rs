use nalgebra::{Rotation2, Rotation3, Vector2, Vector3};
use proptest::prelude::*;
use snapkit::critical::Kind;
use snapkit::energy::{pseudometric, DensityFunction, DensityMode};
use snapkit::fixtures;
use snapkit::framework::Framework;
use snapkit::landscape::Landscape;
use snapkit::pipeline::{self, Analysis, AnalysisOptions};
use snapkit::rigidity::energy_self_stress;
use snapkit::sg::{Manipulator, Metric};
use snapkit::singular::{bound, shaky_points, singularity_distance, ShakySearch, SingularOptions};
use snapkit::snap::{local_snappability, LengthPath, SnapOptions};

const FIXTURES: [&str; 6] = ["quad", "loop4r_bar", "loop4r_panel", "loop4r_tetra", "sd_bar", "fh1_panel"];

fn setup(name: &str) -> (Framework, Landscape, Vec<f64>) {
    let fw = fixtures::load(name).unwrap();
    let ls = pipeline::landscape(&fw, &AnalysisOptions::default()).unwrap();
    let base = fw.realizations.values().next().unwrap().clone();
    (fw, ls, base)
}

fn perturbed(base: &[f64], noise: &[f64], scale: f64) -> Vec<f64> {
    base.iter().zip(noise.iter().cycle()).map(|(b, n)| b + scale * n).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pseudometric_axioms(
        k in 0..FIXTURES.len(),
        fa in proptest::collection::vec(0.8f64..1.2, 32),
        fb in proptest::collection::vec(0.8f64..1.2, 32),
        fc in proptest::collection::vec(0.8f64..1.2, 32),
    ) {
        let fw = fixtures::load(FIXTURES[k]).unwrap();
        let df = DensityFunction::new(&fw, DensityMode::Full).unwrap();
        let l0 = &fw.expanded.lengths;
        let draw = |f: &[f64]| l0.iter().zip(f.iter().cycle()).map(|(l, s)| l * s).collect::<Vec<f64>>();
        let (a, b, c) = (draw(&fa), draw(&fb), draw(&fc));
        let d = |p: &[f64], q: &[f64]| pseudometric(&df, p, q).unwrap();
        let scale = 1e-12 * (1.0 + df.density(&a).unwrap() + df.density(&b).unwrap() + df.density(&c).unwrap());
        prop_assert!(d(&a, &a) <= scale);
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= scale);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + scale);
        prop_assert!(d(l0, l0) <= scale);
    }

    #[test]
    fn gradient_matches_central_differences(
        k in 0..FIXTURES.len(),
        noise in proptest::collection::vec(-1.0f64..1.0, 32),
    ) {
        let (_, ls, base) = setup(FIXTURES[k]);
        let theta = perturbed(&base, &noise, 0.1);
        let g = ls.gradient(&theta);
        let h = 1e-6;
        let mut err = 0.0;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            let mut q = theta.clone();
            p[i] += h;
            q[i] -= h;
            err += ((ls.value(&p) - ls.value(&q)) / (2.0 * h) - g[i]).powi(2);
        }
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(err.sqrt() <= 1e-6 * norm.max(1e-12), "{} vs {}", err.sqrt(), norm);
    }

    #[test]
    fn density_is_invariant_under_rigid_motions(
        k in 0..FIXTURES.len(),
        noise in proptest::collection::vec(-1.0f64..1.0, 32),
        angles in (0.0f64..6.3, 0.0f64..6.3, 0.0f64..6.3),
        shift in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
    ) {
        let (fw, ls, base) = setup(FIXTURES[k]);
        let coords = ls.positions(&perturbed(&base, &noise, 0.05));
        let moved: Vec<Vec<f64>> = if fw.dimension == 2 {
            let r = Rotation2::new(angles.0);
            coords.iter().map(|p| { let v = r * Vector2::new(p[0], p[1]); vec![v.x + shift.0, v.y + shift.1] }).collect()
        } else {
            let r = Rotation3::from_euler_angles(angles.0, angles.1, angles.2);
            coords.iter().map(|p| { let v = r * Vector3::new(p[0], p[1], p[2]) + Vector3::new(shift.0, shift.1, shift.2); vec![v.x, v.y, v.z] }).collect()
        };
        let df = DensityFunction::new(&fw, DensityMode::Full).unwrap();
        let u0 = df.density_from_realization(&fw, &coords).unwrap();
        let u1 = df.density_from_realization(&fw, &moved).unwrap();
        prop_assert!((u0 - u1).abs() < 1e-12 * (1.0 + u0.abs()), "{u0} vs {u1}");
    }

    #[test]
    fn length_path_parameter_is_monotone(s in 0.0f64..1.0, ds in 0.0f64..1.0) {
        let (_, ls, base) = setup("loop4r_bar");
        let path = LengthPath::towards(&ls, &base);
        let t = path.t_of(s);
        let later = path.t_of(s + ds * (1.0 - s));
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert!(later >= t);
    }

    #[test]
    fn stewart_gough_metrics_vanish_only_at_the_legs(scales in proptest::collection::vec(0.9f64..1.1, 6)) {
        let m = Manipulator::from_json(fixtures::STEWART_GOUGH).unwrap();
        let deformed: [f64; 6] = std::array::from_fn(|i| m.legs[i] * scales[i]);
        for metric in [Metric::Relative, Metric::Absolute] {
            prop_assert!(metric.value(&m.legs, &m.legs).abs() < 1e-15);
            let v = metric.value(&m.legs, &deformed);
            prop_assert!(v >= 0.0);
            if scales.iter().any(|s| (s - 1.0).abs() > 1e-6) {
                prop_assert!(v > 0.0);
            }
        }
    }
}

#[test]
fn relative_metric_is_a_normalized_bar_density() {
    let m = Manipulator::from_json(fixtures::STEWART_GOUGH).unwrap();
    let total: f64 = m.legs.iter().sum();
    let deformed: [f64; 6] = std::array::from_fn(|i| m.legs[i] * (1.0 + 0.01 * (i as f64 - 2.5)));
    // Bar energy with unit stiffness: (L'^2 - L^2)^2 / (8 L^3) per leg.
    let bar: f64 = (0..6).map(|i| (deformed[i].powi(2) - m.legs[i].powi(2)).powi(2) / (8.0 * m.legs[i].powi(3))).sum();
    let rel = Metric::Relative.value(&m.legs, &deformed);
    assert!((rel - bar / total).abs() < 1e-15 * (1.0 + bar));
}

#[test]
fn quad_critical_points_carry_self_stresses() {
    let fw = fixtures::load("quad").unwrap();
    let opts = AnalysisOptions::default();
    let ls = pipeline::landscape(&fw, &opts).unwrap();
    let set = pipeline::critical_set(&fw, &ls, &opts).unwrap();
    assert!(set.points.len() >= 12);
    for p in &set.points {
        let st = energy_self_stress(&ls, &p.theta);
        if st.omega.iter().any(|w| w.abs() > 1e-12) {
            assert!(st.relative_residual < 1e-8, "{}", st.relative_residual);
        } else {
            assert!(st.residual < 1e-12, "{}", st.residual);
        }
        assert!(ls.gradient(&p.theta).iter().all(|g| g.is_finite()));
    }
    assert_eq!(set.points.iter().filter(|p| p.kind() == Kind::Min).count(), 4);
}

#[test]
fn snappability_bounds_singularity_distance_on_the_dipyramid() {
    let fw = fixtures::load("sd_bar").unwrap();
    let opts = AnalysisOptions::default();
    let ls = pipeline::landscape(&fw, &opts).unwrap();
    let set = pipeline::critical_set(&fw, &ls, &opts).unwrap();
    let bases: Vec<Vec<f64>> = fw.realizations.values().cloned().collect();
    let candidates = shaky_points(&ls, &bases, Some(&set), &ShakySearch::default()).unwrap();
    for b in &bases {
        let s = local_snappability(&ls, b, &set, None, &SnapOptions::default()).unwrap();
        let z = singularity_distance(&ls, b, &candidates, Some(&set), &SingularOptions::default());
        let bd = bound(&s, &z, 1e-9);
        assert!(bd.holds, "{bd:?}");
        if let Some(p) = &s.path {
            assert!(p.monotone);
        }
    }
}

#[test]
fn analysis_is_deterministic_for_a_fixed_seed() {
    let fw = fixtures::load("quad").unwrap();
    let opts = AnalysisOptions::default();
    let run = || {
        let a = Analysis::run(&fw, &opts).unwrap();
        serde_json::to_string(&a.snappability(&fw, &opts).unwrap()).unwrap()
    };
    assert_eq!(run(), run());
}
