//! Local and global snappability, the Q_t path algorithm and deformation
//! statistics.

use nalgebra::DMatrix;
use polysolve::{
    solve_multistart, solve_total_degree, track, MultistartConfig, ParameterFamily, PathStatus, Provenance, Scalar,
    System, TrackerConfig, C64,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critical::{admissible, polish, CriticalSet, FlowOptions, Strategy, TransitionGraph};
use crate::error::SnapError;
use crate::landscape::Landscape;
use crate::rigidity::{landscape_shakiness, reduced_matrix, SHAKY_TOL};

/// The realization equations `Q_c(θ) = Q_c` of the edge classes.
pub struct RealizationSystem<'a> {
    pub landscape: &'a Landscape,
    /// Target squared class lengths.
    pub targets: Vec<f64>,
}

impl<'a> RealizationSystem<'a> {
    pub fn undeformed(landscape: &'a Landscape) -> Self {
        Self {
            targets: landscape.classes.iter().map(|c| c.q0).collect(),
            landscape,
        }
    }
}

impl System for RealizationSystem<'_> {
    fn dim(&self) -> usize {
        self.landscape.num_params()
    }

    fn num_equations(&self) -> usize {
        self.landscape.num_classes()
    }

    fn degrees(&self) -> Vec<u32> {
        vec![2; self.landscape.num_classes()]
    }

    fn evaluate<T: Scalar>(&self, x: &[T], f: &mut [T], jac: Option<&mut DMatrix<T>>) {
        for (c, cl) in self.landscape.classes.iter().enumerate() {
            f[c] = cl.poly.value(x) - T::from_real(self.targets[c]);
        }
        if let Some(j) = jac {
            j.copy_from(&self.landscape.class_jacobian(x));
        }
    }
}

/// `Q(θ) − Q − t(s)·ΔQ` with `t(s) = 1 − (1 − s)²`, which keeps paths
/// analytic at a shaky endpoint where two realizations merge.
pub struct LengthPath<'a> {
    pub landscape: &'a Landscape,
    /// Squared class lengths at `t = 0`.
    pub start: Vec<f64>,
    pub delta: Vec<f64>,
    pub reparameterized: bool,
}

impl<'a> LengthPath<'a> {
    /// Path from the undeformed metric to the squared class lengths of
    /// `target`.
    pub fn towards(landscape: &'a Landscape, target: &[f64]) -> Self {
        let start: Vec<f64> = landscape.classes.iter().map(|c| c.q0).collect();
        let end = landscape.class_squares(target);
        Self {
            delta: end.iter().zip(&start).map(|(a, b)| a - b).collect(),
            start,
            landscape,
            reparameterized: true,
        }
    }

    /// The metric parameter `t` at path parameter `s`.
    pub fn t_of(&self, s: f64) -> f64 {
        if self.reparameterized {
            1.0 - (1.0 - s) * (1.0 - s)
        } else {
            s
        }
    }

    fn dt_ds(&self, s: f64) -> f64 {
        if self.reparameterized {
            2.0 * (1.0 - s)
        } else {
            1.0
        }
    }
}

impl ParameterFamily for LengthPath<'_> {
    fn dim(&self) -> usize {
        self.landscape.num_params()
    }

    fn degrees(&self) -> Vec<u32> {
        vec![2; self.landscape.num_classes()]
    }

    fn evaluate<T: Scalar>(&self, x: &[T], s: f64, h: &mut [T], hx: Option<&mut DMatrix<T>>, ht: Option<&mut [T]>) {
        let t = self.t_of(s);
        for (c, cl) in self.landscape.classes.iter().enumerate() {
            h[c] = cl.poly.value(x) - T::from_real(self.start[c] + t * self.delta[c]);
        }
        if let Some(j) = hx {
            j.copy_from(&self.landscape.class_jacobian(x));
        }
        if let Some(d) = ht {
            let g = self.dt_ds(s);
            for (c, v) in d.iter_mut().enumerate() {
                *v = T::from_real(-self.delta[c] * g);
            }
        }
    }
}

/// Outcome of tracking a base realization along a Q_t path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub status: PathStatus,
    /// Extrapolated realization at `t = 1`.
    pub endpoint: Vec<f64>,
    /// Max-norm distance of the endpoint from the target saddle.
    pub deviation: f64,
    pub reached: bool,
    pub steps: usize,
    /// Largest imaginary part met along the path.
    pub max_imaginary: f64,
    /// Every element energy is non-decreasing in `t` on the sample grid.
    pub monotone: bool,
    /// `(t, θ)` samples along the path.
    pub samples: Vec<(f64, Vec<f64>)>,
}

/// Three-point extrapolation to `s = 1`.
pub(crate) fn extrapolate(points: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let n = points[0].1.len();
    (0..n)
        .map(|k| {
            let mut v = 0.0;
            for (i, (si, xi)) in points.iter().enumerate() {
                let mut w = 1.0;
                for (j, (sj, _)) in points.iter().enumerate() {
                    if i != j {
                        w *= (1.0 - sj) / (si - sj);
                    }
                }
                v += w * xi[k];
            }
            v
        })
        .collect()
}

/// Energies of every density term at `theta`.
pub fn element_energies(ls: &Landscape, theta: &[f64]) -> Vec<f64> {
    let q: Vec<f64> = ls.edge_polys.iter().map(|p| p.value(theta)).collect();
    ls.density
        .terms
        .iter()
        .map(|t| {
            let local: Vec<f64> = t.edges.iter().map(|&e| q[e]).collect();
            t.weight * t.form.density(&local)
        })
        .collect()
}

/// Checks that each element energy grows along increasing `t`.
pub fn energies_monotone(ls: &Landscape, samples: &[(f64, Vec<f64>)]) -> bool {
    let energies: Vec<Vec<f64>> = samples.iter().map(|(_, th)| element_energies(ls, th)).collect();
    let top = energies.iter().flatten().fold(0.0, |a: f64, &b| a.max(b.abs()));
    energies
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| *b >= *a - 1e-9 * top))
}

pub(crate) fn to_complex(x: &[f64]) -> Vec<C64> {
    x.iter().map(|&v| C64::new(v, 0.0)).collect()
}

/// Path parameters at which samples are recorded; the tail feeds the
/// extrapolation to `s = 1`.
pub fn sample_stops() -> Vec<f64> {
    let mut stops: Vec<f64> = (1..=96).map(|k| k as f64 / 100.0).collect();
    stops.extend([0.97, 0.98, 0.99, 0.996, 0.998, 0.999]);
    stops
}

/// Tracks `start` from `s0` to the stops in `stops`, recording samples.
pub(crate) fn follow<P: ParameterFamily>(
    path: &P,
    start: &[C64],
    s0: f64,
    stops: &[f64],
    cfg: &TrackerConfig,
) -> (PathStatus, Vec<(f64, Vec<C64>)>, usize) {
    let mut x = start.to_vec();
    let mut s = s0;
    let mut out = vec![(s0, x.clone())];
    let mut steps = 0;
    for &stop in stops {
        let rec = track(path, &x, s, stop, cfg, false);
        steps += rec.steps;
        if rec.status != PathStatus::Converged {
            return (rec.status, out, steps);
        }
        x = rec.x;
        s = stop;
        out.push((s, x.clone()));
    }
    (PathStatus::Converged, out, steps)
}

/// Tracks the base realization along the Q_t path towards `target` and
/// compares the endpoint with it.
pub fn track_to(ls: &Landscape, base: &[f64], target: &[f64], cfg: &TrackerConfig, tol: f64) -> PathReport {
    let path = LengthPath::towards(ls, target);
    let (status, raw, steps) = follow(&path, &to_complex(base), 0.0, &sample_stops(), cfg);
    let max_imaginary = raw
        .iter()
        .flat_map(|(_, x)| x.iter().map(|z| z.im.abs()))
        .fold(0.0, f64::max);
    let samples: Vec<(f64, Vec<f64>)> = raw
        .iter()
        .map(|(s, x)| (path.t_of(*s), x.iter().map(|z| z.re).collect()))
        .collect();
    let endpoint = if status == PathStatus::Converged {
        let tail: Vec<(f64, Vec<f64>)> = raw[raw.len() - 3..]
            .iter()
            .map(|(s, x)| (*s, x.iter().map(|z| z.re).collect()))
            .collect();
        extrapolate(&tail)
    } else {
        samples.last().map(|s| s.1.clone()).unwrap_or_default()
    };
    let deviation = endpoint.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    PathReport {
        status,
        reached: status == PathStatus::Converged && deviation <= tol,
        monotone: energies_monotone(ls, &samples),
        endpoint,
        deviation,
        steps,
        max_imaginary,
        samples,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapMode {
    /// Q_t path tracking on the square realization equations.
    IsostaticAffine,
    /// Saddle-to-minimum descent flows for overbraced frameworks.
    Descent,
}

/// Picks the Q_t pipeline when the parameterized realization equations are
/// square with full generic rank.
pub fn choose_mode(ls: &Landscape, seed: u64) -> SnapMode {
    let m = ls.num_params();
    if m != ls.num_classes() {
        return SnapMode::Descent;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = reduced_matrix(ls, &theta);
    let sv = r.singular_values();
    if sv.min() > 1e-10 * sv.max() {
        SnapMode::IsostaticAffine
    } else {
        SnapMode::Descent
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapOptions {
    pub mode: Option<SnapMode>,
    pub tracker: TrackerConfig,
    pub flow: FlowOptions,
    /// Endpoint tolerance relative to the mean length.
    pub match_tol: f64,
    /// Saddle values closer than this form a tie.
    pub tie_tol: f64,
}

impl Default for SnapOptions {
    fn default() -> Self {
        Self {
            mode: None,
            tracker: TrackerConfig {
                max_step: 0.02,
                ..Default::default()
            },
            flow: FlowOptions::default(),
            match_tol: 1e-6,
            tie_tol: 1e-12,
        }
    }
}

/// Local snappability of one undeformed realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapResult {
    pub base: Vec<f64>,
    /// `None` encodes `s = ∞`.
    pub value: Option<f64>,
    /// Index of the implicated saddle in the critical set.
    pub saddle: Option<usize>,
    pub saddle_shaky: bool,
    pub mode: SnapMode,
    pub path: Option<PathReport>,
    /// Other saddles tied with the implicated one that also succeeded.
    pub ties: Vec<usize>,
    /// False when the critical set itself is not exhaustive.
    pub exhaustive: bool,
    pub base_shaky: bool,
    pub warnings: Vec<String>,
}

/// Tracks a shaky base: solve at a random `t*`, track every solution back to
/// `t = 0`, keep those ending at the base and follow them to `t = 1`.
pub fn track_from_shaky_base(
    ls: &Landscape,
    base: &[f64],
    target: &[f64],
    cfg: &TrackerConfig,
    tol: f64,
) -> Result<Option<PathReport>, SnapError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a17);
    let t_star: f64 = rng.random_range(0.2..0.5);
    let path = LengthPath {
        reparameterized: false,
        ..LengthPath::towards(ls, target)
    };
    let sys = RealizationSystem {
        landscape: ls,
        targets: path.start.iter().zip(&path.delta).map(|(a, d)| a + t_star * d).collect(),
    };
    let set = solve_total_degree(&sys, cfg)?;
    for sol in set.solutions.iter().filter(|s| s.is_real()) {
        let back = track(&path, &sol.point, t_star, 0.0, cfg, false);
        if back.status != PathStatus::Converged {
            continue;
        }
        let dev = back.x.iter().zip(base).map(|(a, b)| (a.re - b).abs()).fold(0.0, f64::max);
        if dev > tol {
            continue;
        }
        // Continue from t* with the reparameterized path.
        let rep = LengthPath::towards(ls, target);
        let s_star = 1.0 - (1.0 - t_star).sqrt();
        let stops: Vec<f64> = sample_stops().into_iter().filter(|&s| s > s_star).collect();
        let (status, raw, steps) = follow(&rep, &sol.point, s_star, &stops, cfg);
        if status != PathStatus::Converged {
            continue;
        }
        let tail: Vec<(f64, Vec<f64>)> = raw[raw.len() - 3..]
            .iter()
            .map(|(s, x)| (*s, x.iter().map(|z| z.re).collect()))
            .collect();
        let endpoint = extrapolate(&tail);
        let deviation = endpoint.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let samples: Vec<(f64, Vec<f64>)> = raw
            .iter()
            .map(|(s, x)| (rep.t_of(*s), x.iter().map(|z| z.re).collect()))
            .collect();
        return Ok(Some(PathReport {
            status,
            reached: deviation <= tol,
            monotone: energies_monotone(ls, &samples),
            max_imaginary: raw.iter().flat_map(|(_, x)| x.iter().map(|z| z.im.abs())).fold(0.0, f64::max),
            endpoint,
            deviation,
            steps: steps + back.steps,
            samples,
        }));
    }
    Ok(None)
}

/// Saddle indices ordered by density value, then by index.
fn saddles_by_value(set: &CriticalSet) -> Vec<usize> {
    let mut s: Vec<usize> = set.saddles().map(|(i, _)| i).collect();
    s.sort_by(|&a, &b| set.points[a].value.total_cmp(&set.points[b].value).then(a.cmp(&b)));
    s
}

/// Local snappability `s(V)` of the base realization.
pub fn local_snappability(
    ls: &Landscape,
    base: &[f64],
    set: &CriticalSet,
    graph: Option<&TransitionGraph>,
    opts: &SnapOptions,
) -> Result<SnapResult, SnapError> {
    let mode = opts.mode.unwrap_or_else(|| choose_mode(ls, opts.tracker.seed));
    let tol = opts.match_tol * ls.mean_length();
    let base_shaky = landscape_shakiness(ls, base, SHAKY_TOL).shaky;
    let mut result = SnapResult {
        base: base.to_vec(),
        value: None,
        saddle: None,
        saddle_shaky: false,
        mode,
        path: None,
        ties: Vec::new(),
        exhaustive: set.exhaustive(),
        base_shaky,
        warnings: Vec::new(),
    };
    let order = saddles_by_value(set);
    let base_index = set.find(base, tol);
    let mut k = 0;
    while k < order.len() {
        // Group of saddles tied in value.
        let v0 = set.points[order[k]].value;
        let mut group = vec![order[k]];
        while k + group.len() < order.len() && set.points[order[k + group.len()]].value - v0 <= opts.tie_tol {
            group.push(order[k + group.len()]);
        }
        k += group.len();
        let mut hits: Vec<(usize, Option<PathReport>)> = Vec::new();
        for &si in &group {
            let saddle = &set.points[si];
            match mode {
                SnapMode::IsostaticAffine => {
                    let report = if base_shaky {
                        track_from_shaky_base(ls, base, &saddle.theta, &opts.tracker, tol)?
                    } else {
                        Some(track_to(ls, base, &saddle.theta, &opts.tracker, tol))
                    };
                    match report {
                        Some(r) if r.reached => hits.push((si, Some(r))),
                        Some(r) if r.status != PathStatus::Converged => result
                            .warnings
                            .push(format!("path towards saddle {si} failed: {:?}", r.status)),
                        _ => {}
                    }
                }
                SnapMode::Descent => {
                    let Some(g) = graph else {
                        return Err(SnapError::Numerical("descent mode needs a transition graph".into()));
                    };
                    let reaches = g
                        .edges
                        .iter()
                        .any(|e| e.saddle == si && !e.degenerate && e.target.is_some() && e.target == base_index);
                    if reaches {
                        hits.push((si, None));
                    }
                }
            }
        }
        if let Some((first, path)) = hits.first().cloned() {
            result.value = Some(set.points[first].value);
            result.saddle = Some(first);
            result.saddle_shaky = set.points[first].shaky();
            result.path = path;
            result.ties = hits.iter().skip(1).map(|h| h.0).collect();
            return Ok(result);
        }
    }
    Ok(result)
}

/// `s(L)` over all undeformed realizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalSnap {
    pub value: Option<f64>,
    pub table: Vec<SnapResult>,
    pub lower_bound: Option<f64>,
    pub exhaustive: bool,
}

pub fn global_snappability(
    ls: &Landscape,
    bases: &[Vec<f64>],
    set: &CriticalSet,
    graph: Option<&TransitionGraph>,
    opts: &SnapOptions,
) -> Result<GlobalSnap, SnapError> {
    let table = bases
        .iter()
        .map(|b| local_snappability(ls, b, set, graph, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let value = table.iter().filter_map(|r| r.value).min_by(f64::total_cmp);
    Ok(GlobalSnap {
        value,
        exhaustive: set.exhaustive(),
        lower_bound: lower_bound(set),
        table,
    })
}

/// `o(L)`: the smallest saddle density, `None` for an empty saddle set.
pub fn lower_bound(set: &CriticalSet) -> Option<f64> {
    set.saddles().map(|(_, p)| p.value).min_by(f64::total_cmp)
}

/// Length changes between two metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeformStats {
    /// `√Σ(L² − L'²)²`.
    pub e_min: f64,
    pub avg_abs: f64,
    pub avg_rel: f64,
    pub max_abs: f64,
    pub max_rel: f64,
}

pub fn deformation_statistics(lengths: &[f64], deformed: &[f64]) -> Result<DeformStats, crate::error::ModelError> {
    if lengths.len() != deformed.len() {
        return Err(crate::error::ModelError::Mismatch {
            expected: lengths.len(),
            got: deformed.len(),
        });
    }
    if lengths.is_empty() {
        return Ok(DeformStats::default());
    }
    let n = lengths.len() as f64;
    let abs: Vec<f64> = lengths.iter().zip(deformed).map(|(l, p)| (p - l).abs()).collect();
    let rel: Vec<f64> = abs.iter().zip(lengths).map(|(d, l)| d / l).collect();
    Ok(DeformStats {
        e_min: lengths
            .iter()
            .zip(deformed)
            .map(|(l, p)| (l * l - p * p).powi(2))
            .sum::<f64>()
            .sqrt(),
        avg_abs: abs.iter().sum::<f64>() / n,
        avg_rel: rel.iter().sum::<f64>() / n,
        max_abs: abs.iter().copied().fold(0.0, f64::max),
        max_rel: rel.iter().copied().fold(0.0, f64::max),
    })
}

/// Real admissible solutions of the undeformed realization equations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realizations {
    pub points: Vec<Vec<f64>>,
    /// Non-real finite solutions.
    pub complex: usize,
    pub rejected: usize,
    pub provenance: Provenance,
}

/// Enumerates undeformed realizations of a square realization system; for
/// overbraced ones the undeformed critical points are returned instead.
pub fn undeformed_realizations(
    ls: &Landscape,
    strategy: &Strategy,
    cfg: &TrackerConfig,
    critical: Option<&CriticalSet>,
) -> Result<Realizations, SnapError> {
    if ls.num_params() != ls.num_classes() {
        let Some(set) = critical else {
            return Err(SnapError::Numerical("overbraced framework: undeformed points come from the critical set".into()));
        };
        return Ok(Realizations {
            points: set.undeformed().map(|(_, p)| p.theta.clone()).collect(),
            complex: 0,
            rejected: 0,
            provenance: set.provenance.clone(),
        });
    }
    let sys = RealizationSystem::undeformed(ls);
    let set = match strategy {
        Strategy::TotalDegree => solve_total_degree(&sys, cfg)?,
        Strategy::Multistart(ms) => solve_multistart(&sys, ms, cfg),
    };
    let mut points = Vec::new();
    let mut rejected = 0;
    for p in set.real_points() {
        let p = polish(ls, &p, None).map(|(t, _)| t).unwrap_or(p);
        if admissible(ls, &p).is_ok() {
            points.push(p);
        } else {
            rejected += 1;
        }
    }
    Ok(Realizations {
        complex: set.solutions.len() - set.num_real(),
        points,
        rejected,
        provenance: set.provenance,
    })
}

/// Seeds for a multistart critical-point search: random points around
/// pairwise interpolations of the given realizations.
pub fn interpolation_seeds(realizations: &[Vec<f64>], per_pair: usize, radius: f64, seed: u64) -> MultistartConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seeds = Vec::new();
    for (i, a) in realizations.iter().enumerate() {
        for b in realizations.iter().skip(i + 1) {
            for _ in 0..per_pair {
                let w: f64 = rng.random_range(0.0..1.0);
                seeds.push(
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (1.0 - w) * x + w * y + radius * rng.random_range(-1.0..1.0))
                        .collect(),
                );
            }
        }
    }
    MultistartConfig {
        random_starts: 0,
        seeds,
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics_of_identical_metrics_vanish() {
        let l = [1.0, 2.0, 3.0];
        assert_eq!(deformation_statistics(&l, &l).unwrap(), DeformStats::default());
    }

    #[test]
    fn statistics_by_hand() {
        let s = deformation_statistics(&[1.0, 2.0], &[1.1, 1.8]).unwrap();
        let e = ((1.0f64 - 1.21).powi(2) + (4.0f64 - 3.24).powi(2)).sqrt();
        assert!((s.e_min - e).abs() < 1e-15);
        assert!((s.avg_abs - 0.15).abs() < 1e-15);
        assert!((s.max_rel - 0.1).abs() < 1e-15);
    }

    #[test]
    fn extrapolation_is_exact_for_quadratics() {
        let f = |s: f64| vec![1.0 + 2.0 * s - 3.0 * s * s];
        let pts: Vec<(f64, Vec<f64>)> = [0.9, 0.95, 0.99].iter().map(|&s| (s, f(s))).collect();
        assert!((extrapolate(&pts)[0] - f(1.0)[0]).abs() < 1e-12);
    }
}
