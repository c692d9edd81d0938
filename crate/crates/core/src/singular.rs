//! Singularity distance: the least density needed to reach a shaky
//! realization along a monotone deformation.
//!
//! Shaky realizations are those where the Jacobian `J` of the squared class
//! lengths has a kernel vector `w`. The density is minimized over the pairs
//! `(θ, w)` with `J(θ) w = 0` and `cᵀ w = 1` for a fixed generic `c`. The
//! stationarity conditions form a square polynomial system in
//! `(θ, w, μ, ρ, λ)`, solved by multistart Newton.

use nalgebra::{DMatrix, DVector};
use polysolve::{damped_newton, solve_multistart, MultistartConfig, PathStatus, Scalar, System, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critical::{admissible, descend, descend_flow, CriticalSet, FlowOptions, FlowStatus};
use crate::error::SnapError;
use crate::landscape::Landscape;
use crate::rigidity::{landscape_shakiness, reduced_shakiness, SHAKY_TOL};
use crate::snap::{choose_mode, track_to, PathReport, SnapMode, SnapResult};

/// Stationarity system of the density restricted to shaky realizations.
pub struct ShakySystem<'a> {
    pub landscape: &'a Landscape,
    /// Normalization of the kernel vector.
    pub normal: Vec<f64>,
}

impl<'a> ShakySystem<'a> {
    pub fn new(landscape: &'a Landscape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = landscape.num_params();
        let mut normal: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        normal.iter_mut().for_each(|v| *v /= n);
        Self { landscape, normal }
    }

    fn sizes(&self) -> (usize, usize, usize) {
        (
            self.landscape.num_params(),
            self.landscape.num_classes(),
            self.landscape.constraints.len(),
        )
    }

    /// Splits `x` into `(θ, w, μ, ρ, λ)`.
    pub fn split<'x, T>(&self, x: &'x [T]) -> (&'x [T], &'x [T], &'x [T], &'x T, &'x [T]) {
        let (m, n, _) = self.sizes();
        let (theta, rest) = x.split_at(m);
        let (w, rest) = rest.split_at(m);
        let (mu, rest) = rest.split_at(n);
        let (rho, lambda) = rest.split_first().expect("rho");
        (theta, w, mu, rho, lambda)
    }

    /// Completes a configuration to a full unknown vector: the kernel vector
    /// is the weakest right singular vector, the multipliers solve the
    /// remaining linear equations in the least-squares sense.
    pub fn lift(&self, theta: &[f64]) -> Vec<f64> {
        let (m, n, k) = self.sizes();
        let ls = self.landscape;
        let j = ls.class_jacobian(theta);
        let svd = j.clone().svd(false, true);
        let vt = svd.v_t.expect("requested");
        let smallest = (0..svd.singular_values.len())
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .expect("nonempty");
        let mut w: Vec<f64> = vt.row(smallest).iter().copied().collect();
        if w.len() < m {
            w = vec![0.0; m];
        }
        let cw: f64 = w.iter().zip(&self.normal).map(|(a, b)| a * b).sum();
        if cw.abs() > 1e-12 {
            w.iter_mut().for_each(|v| *v /= cw);
        }
        let ev = ls.evaluate(theta, false);
        let (_, grads, _) = ls.constraint_data(theta, false);
        let wv = DVector::from_column_slice(&w);
        let cols = n + 1 + k;
        let mut a = DMatrix::zeros(2 * m, cols);
        let mut b = DVector::zeros(2 * m);
        for (c, cl) in ls.classes.iter().enumerate() {
            let hw = &cl.hessian * &wv;
            for r in 0..m {
                a[(r, c)] = hw[r];
                a[(m + r, c)] = j[(c, r)];
            }
        }
        for r in 0..m {
            a[(m + r, n)] = self.normal[r];
            for c in 0..k {
                a[(r, n + 1 + c)] = grads[(c, r)];
            }
            b[r] = ev.gradient[r];
        }
        let sol = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(cols));
        let mut x = theta.to_vec();
        x.extend(w);
        x.extend(sol.iter());
        x
    }
}

impl System for ShakySystem<'_> {
    fn dim(&self) -> usize {
        let (m, n, k) = self.sizes();
        2 * m + n + 1 + k
    }

    fn degrees(&self) -> Vec<u32> {
        let (m, n, k) = self.sizes();
        let mut d = vec![3; m];
        d.extend(std::iter::repeat_n(2, m + n));
        d.push(1);
        d.extend(std::iter::repeat_n(3, k));
        d
    }

    fn evaluate<T: Scalar>(&self, x: &[T], f: &mut [T], jac: Option<&mut DMatrix<T>>) {
        let (m, n, k) = self.sizes();
        let ls = self.landscape;
        let (theta, w, mu, rho, lambda) = self.split(x);
        let want = jac.is_some();
        let ev = ls.evaluate(theta, want);
        let (vals, grads, hs) = ls.constraint_data(theta, want);
        let j = ls.class_jacobian(theta);
        // H_c w per class.
        let hw: Vec<Vec<T>> = ls
            .classes
            .iter()
            .map(|cl| {
                (0..m)
                    .map(|r| {
                        let mut s = T::zero();
                        for q in 0..m {
                            let h = cl.hessian[(r, q)];
                            if h != 0.0 {
                                s += w[q] * T::from_real(h);
                            }
                        }
                        s
                    })
                    .collect()
            })
            .collect();
        let (o_w, o_mu, o_rho, o_l) = (m, 2 * m, 2 * m + n, 2 * m + n + 1);
        for r in 0..m {
            let mut s = ev.gradient[r];
            for c in 0..k {
                s -= lambda[c] * grads[(c, r)];
            }
            for c in 0..n {
                s -= mu[c] * hw[c][r];
            }
            f[r] = s;
            let mut t = *rho * T::from_real(self.normal[r]);
            for c in 0..n {
                t += mu[c] * j[(c, r)];
            }
            f[o_w + r] = t;
        }
        for c in 0..n {
            let mut s = T::zero();
            for r in 0..m {
                s += j[(c, r)] * w[r];
            }
            f[o_mu + c] = s;
        }
        let mut cw = -T::one();
        for r in 0..m {
            cw += w[r] * T::from_real(self.normal[r]);
        }
        f[o_rho] = cw;
        for c in 0..k {
            f[o_l + c] = vals[c];
        }
        let Some(jm) = jac else { return };
        jm.fill(T::zero());
        let h = ev.hessian.expect("requested");
        for r in 0..m {
            for s in 0..m {
                let mut v = h[(r, s)];
                for c in 0..k {
                    v -= lambda[c] * hs[c][(r, s)];
                }
                jm[(r, s)] = v;
                let mut mh = T::zero();
                for (c, cl) in ls.classes.iter().enumerate() {
                    let e = cl.hessian[(r, s)];
                    if e != 0.0 {
                        mh += mu[c] * T::from_real(e);
                    }
                }
                jm[(r, o_w + s)] = -mh;
                jm[(o_w + r, s)] = mh;
            }
            for c in 0..n {
                jm[(r, o_mu + c)] = -hw[c][r];
                jm[(o_w + r, o_mu + c)] = j[(c, r)];
                jm[(o_mu + c, r)] = hw[c][r];
                jm[(o_mu + c, o_w + r)] = j[(c, r)];
            }
            jm[(o_w + r, o_rho)] = T::from_real(self.normal[r]);
            jm[(o_rho, o_w + r)] = T::from_real(self.normal[r]);
            for c in 0..k {
                jm[(r, o_l + c)] = -grads[(c, r)];
                jm[(o_l + c, r)] = grads[(c, r)];
            }
        }
    }

    fn labels(&self) -> Vec<String> {
        let (m, n, k) = self.sizes();
        let mut out = self.landscape.parameterization.names.clone();
        out.extend((0..m).map(|i| format!("w{}", i + 1)));
        out.extend((0..n).map(|i| format!("mu{}", i + 1)));
        out.push("rho".into());
        out.extend((0..k).map(|i| format!("lambda{}", i + 1)));
        out
    }
}

/// A constrained critical point of the density on the shaky variety.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShakyPoint {
    pub theta: Vec<f64>,
    pub kernel: Vec<f64>,
    pub value: f64,
    /// Ratio of smallest to largest singular value of the class Jacobian.
    pub ratio: f64,
    /// The same ratio for the full pinned rigidity matrix.
    pub full_ratio: f64,
    pub residual: f64,
}

/// Seeds for the shaky search: lifted critical points (shaky ones first),
/// segments between them and the base, and random perturbations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShakySearch {
    pub per_segment: usize,
    pub random_starts: usize,
    pub radius: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for ShakySearch {
    fn default() -> Self {
        Self {
            per_segment: 8,
            random_starts: 200,
            radius: 0.05,
            max_iters: 100,
            seed: 17,
        }
    }
}

fn max_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves for shaky constrained critical points, sorted by density.
pub fn shaky_points(
    ls: &Landscape,
    bases: &[Vec<f64>],
    set: Option<&CriticalSet>,
    search: &ShakySearch,
) -> Result<Vec<ShakyPoint>, SnapError> {
    let sys = ShakySystem::new(ls, search.seed);
    let m = ls.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut anchors: Vec<Vec<f64>> = Vec::new();
    if let Some(set) = set {
        let mut pts: Vec<&_> = set.points.iter().collect();
        pts.sort_by_key(|p| !p.shaky());
        anchors.extend(pts.into_iter().map(|p| p.theta.clone()));
    }
    let mut thetas: Vec<Vec<f64>> = anchors.clone();
    for b in bases {
        for a in &anchors {
            for i in 1..=search.per_segment {
                let t = i as f64 / (search.per_segment + 1) as f64;
                thetas.push(b.iter().zip(a).map(|(x, y)| x + t * (y - x)).collect());
            }
        }
    }
    let scale = ls.mean_length();
    let pool: Vec<Vec<f64>> = bases.iter().chain(&anchors).cloned().collect();
    if !pool.is_empty() {
        for _ in 0..search.random_starts {
            let c = &pool[rng.random_range(0..pool.len())];
            thetas.push(c.iter().map(|v| v + search.radius * scale * rng.random_range(-1.0..1.0)).collect());
        }
    }
    let ms = MultistartConfig {
        random_starts: 0,
        center: Vec::new(),
        radius: 0.0,
        seeds: thetas.iter().map(|t| sys.lift(t)).collect(),
        max_iters: search.max_iters,
    };
    let cfg = TrackerConfig {
        seed: search.seed,
        ..Default::default()
    };
    let solved = solve_multistart(&sys, &ms, &cfg);
    let tol = 1e-7 * scale;
    let mut out: Vec<ShakyPoint> = Vec::new();
    for sol in &solved.solutions {
        let Some(x) = &sol.real_point else { continue };
        let theta = x[..m].to_vec();
        if admissible(ls, &theta).is_err() {
            continue;
        }
        let reduced = reduced_shakiness(ls, &theta, SHAKY_TOL);
        let full = landscape_shakiness(ls, &theta, SHAKY_TOL);
        if !reduced.shaky || !full.shaky {
            continue;
        }
        if out.iter().any(|p| max_dist(&p.theta, &theta) < tol) {
            continue;
        }
        out.push(ShakyPoint {
            value: ls.value(&theta),
            kernel: x[m..2 * m].to_vec(),
            ratio: reduced.ratio,
            full_ratio: full.ratio,
            residual: sol.residual,
            theta,
        });
    }
    out.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(out)
}

/// Refines an approximately shaky configuration onto the shaky variety.
pub fn refine_shaky(ls: &Landscape, theta: &[f64], seed: u64) -> Option<Vec<f64>> {
    let sys = ShakySystem::new(ls, seed);
    let out = damped_newton(&sys, &sys.lift(theta), 1e-13, 100);
    out.converged.then(|| out.x[..ls.num_params()].to_vec())
}

/// How a shaky candidate was connected to the base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Witness {
    /// The base is shaky itself.
    Base,
    /// Q_t path from the base to the candidate.
    Path(PathReport),
    /// Descent from the candidate ends at the base.
    Descent { steps: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularityResult {
    pub base: Vec<f64>,
    /// `None` when no shaky realization was reached.
    pub value: Option<f64>,
    pub point: Option<ShakyPoint>,
    pub witness: Option<Witness>,
    pub mode: SnapMode,
    /// Number of shaky candidates tried.
    pub candidates: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularOptions {
    pub mode: Option<SnapMode>,
    pub tracker: TrackerConfig,
    pub flow: FlowOptions,
    pub match_tol: f64,
}

impl Default for SingularOptions {
    fn default() -> Self {
        Self {
            mode: None,
            tracker: TrackerConfig {
                max_step: 0.02,
                ..Default::default()
            },
            flow: FlowOptions::default(),
            match_tol: 1e-6,
        }
    }
}

/// Descends from a shaky candidate, along every negative direction when it
/// is a saddle, and reports whether some flow ends at the base.
fn descends_to_base(
    ls: &Landscape,
    point: &ShakyPoint,
    base: &[f64],
    set: Option<&CriticalSet>,
    opts: &SingularOptions,
    tol: f64,
) -> Option<usize> {
    let hits = |f: &crate::critical::Flow| f.status == FlowStatus::Converged && max_dist(&f.endpoint, base) <= tol;
    if let Some(cp) = set.and_then(|s| s.find(&point.theta, tol)).map(|i| &set.expect("set").points[i]) {
        if cp.undeformed {
            return None;
        }
        for d in 0..cp.classification.negative_directions() {
            for sign in [1.0, -1.0] {
                let f = descend_flow(ls, cp, d, sign, &opts.flow);
                if hits(&f) {
                    return Some(f.steps);
                }
            }
        }
        return None;
    }
    let f = descend(ls, &point.theta, &opts.flow);
    hits(&f).then_some(f.steps)
}

/// Local singularity distance `ς(V)` of a base realization.
pub fn singularity_distance(
    ls: &Landscape,
    base: &[f64],
    candidates: &[ShakyPoint],
    set: Option<&CriticalSet>,
    opts: &SingularOptions,
) -> SingularityResult {
    let mode = opts.mode.unwrap_or_else(|| choose_mode(ls, opts.tracker.seed));
    let tol = opts.match_tol * ls.mean_length();
    let mut result = SingularityResult {
        base: base.to_vec(),
        value: None,
        point: None,
        witness: None,
        mode,
        candidates: 0,
        warnings: Vec::new(),
    };
    if landscape_shakiness(ls, base, SHAKY_TOL).shaky {
        result.value = Some(0.0);
        result.witness = Some(Witness::Base);
        return result;
    }
    for p in candidates {
        result.candidates += 1;
        let witness = match mode {
            SnapMode::IsostaticAffine => {
                let r = track_to(ls, base, &p.theta, &opts.tracker, tol);
                if r.status != PathStatus::Converged {
                    result.warnings.push(format!("path towards shaky candidate failed: {:?}", r.status));
                }
                (r.reached && r.monotone).then_some(Witness::Path(r))
            }
            SnapMode::Descent => {
                descends_to_base(ls, p, base, set, opts, tol).map(|steps| Witness::Descent { steps })
            }
        };
        if let Some(w) = witness {
            result.value = Some(p.value);
            result.point = Some(p.clone());
            result.witness = Some(w);
            return result;
        }
    }
    result
}

/// `ς(L)`: the minimum over all undeformed realizations.
pub fn global_singularity_distance(table: &[SingularityResult]) -> Option<f64> {
    table.iter().filter_map(|r| r.value).min_by(f64::total_cmp)
}

/// Relation between snappability and singularity distance at one base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub snap: Option<f64>,
    pub singular: Option<f64>,
    /// `s ≤ ς` (with `None` read as infinity).
    pub holds: bool,
    /// The snap saddle is shaky, so both values must coincide.
    pub equality_expected: bool,
    pub equal: bool,
}

/// Checks `s(V) ≤ ς(V)` for a non-shaky base, with equality when the snap
/// saddle is shaky.
pub fn bound(snap: &SnapResult, singular: &SingularityResult, rel_tol: f64) -> Bound {
    let s = snap.value.unwrap_or(f64::INFINITY);
    let z = singular.value.unwrap_or(f64::INFINITY);
    let slack = rel_tol * s.abs().max(z.abs()).min(f64::MAX);
    let equal = s == z || (s - z).abs() <= slack;
    Bound {
        snap: snap.value,
        singular: singular.value,
        holds: snap.base_shaky || s <= z + slack,
        equality_expected: snap.saddle_shaky && !snap.base_shaky,
        equal,
    }
}

/// Verdict on whether a tracked Q_t path stays real.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reality {
    /// Neither endpoint is shaky, so the path is real; the tracker agreed.
    Guaranteed,
    /// Some endpoint is shaky; reality is only observed.
    NotGuaranteed { observed_real: bool },
}

/// Classifies a path; a complex path between non-shaky ends is a tracker
/// fault.
pub fn reality_check(
    report: &PathReport,
    base_shaky: bool,
    end_shaky: bool,
    imag_tol: f64,
) -> Result<Reality, SnapError> {
    let observed_real = report.max_imaginary <= imag_tol;
    if base_shaky || end_shaky {
        return Ok(Reality::NotGuaranteed { observed_real });
    }
    if !observed_real {
        return Err(SnapError::Numerical(format!(
            "path between non-shaky realizations left the reals (|Im| = {:.3e})",
            report.max_imaginary
        )));
    }
    Ok(Reality::Guaranteed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::DensityMode;
    use crate::landscape::tests::quad;

    #[test]
    fn jacobian_matches_differences() {
        let fw = quad();
        let ls = Landscape::new(&fw, DensityMode::Full, None).unwrap();
        let sys = ShakySystem::new(&ls, 3);
        let n = sys.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut f = vec![0.0; n];
        let mut j = DMatrix::zeros(n, n);
        sys.evaluate(&x, &mut f, Some(&mut j));
        let h = 1e-6;
        for c in 0..n {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
            sys.evaluate(&xp, &mut fp, None);
            sys.evaluate(&xm, &mut fm, None);
            for r in 0..n {
                let d = (fp[r] - fm[r]) / (2.0 * h);
                assert!((d - j[(r, c)]).abs() < 1e-6 * (1.0 + d.abs()), "({r},{c}): {d} vs {}", j[(r, c)]);
            }
        }
    }

    #[test]
    fn lift_solves_linear_part_at_critical_point() {
        let fw = quad();
        let ls = Landscape::new(&fw, DensityMode::Full, None).unwrap();
        let sys = ShakySystem::new(&ls, 3);
        // Collinear configuration: every pair of bars is parallel.
        let theta = [3.0, 1.0, 0.0, -1.0, 0.0];
        let x = sys.lift(&theta);
        let mut f = vec![0.0; sys.dim()];
        sys.evaluate(&x, &mut f, None);
        let m = ls.num_params();
        // Kernel part is exact at a shaky point.
        assert!(f[2 * m..2 * m + ls.num_classes() + 1].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn reality_violation_is_an_error() {
        let report = PathReport {
            status: PathStatus::Converged,
            endpoint: vec![],
            deviation: 0.0,
            reached: true,
            steps: 1,
            max_imaginary: 1e-3,
            monotone: true,
            samples: vec![],
        };
        assert!(reality_check(&report, false, false, 1e-8).is_err());
        assert_eq!(
            reality_check(&report, true, false, 1e-8).unwrap(),
            Reality::NotGuaranteed { observed_real: false }
        );
    }
}
