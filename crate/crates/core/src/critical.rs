//! Critical points of the density: the Lagrangian system, its solutions,
//! their classification and the descent flows that link saddles to minima.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use polysolve::{
    newton, solve_multistart, solve_total_degree, MultistartConfig, Provenance, Scalar, System, TrackerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elasticity::cayley_menger_volume;
use crate::error::SnapError;
use crate::landscape::Landscape;
use crate::rigidity::{energy_self_stress, landscape_shakiness, multipliers, SelfStress, Shakiness, SHAKY_TOL};

/// `∇u − Σ λ ∇f = 0`, `f = 0` in the free coordinates and multipliers.
pub struct GradientSystem<'a> {
    pub landscape: &'a Landscape,
}

impl<'a> GradientSystem<'a> {
    pub fn new(landscape: &'a Landscape) -> Self {
        Self { landscape }
    }

    pub fn num_params(&self) -> usize {
        self.landscape.num_params()
    }

    pub fn num_multipliers(&self) -> usize {
        self.landscape.constraints.len()
    }
}

impl System for GradientSystem<'_> {
    fn dim(&self) -> usize {
        self.num_params() + self.num_multipliers()
    }

    fn degrees(&self) -> Vec<u32> {
        vec![3; self.dim()]
    }

    fn evaluate<T: Scalar>(&self, x: &[T], f: &mut [T], jac: Option<&mut DMatrix<T>>) {
        let m = self.num_params();
        let k = self.num_multipliers();
        let (theta, lambda) = x.split_at(m);
        let want = jac.is_some();
        let ev = self.landscape.evaluate(theta, want);
        let (vals, grads, hs) = self.landscape.constraint_data(theta, want);
        for i in 0..m {
            let mut s = ev.gradient[i];
            for c in 0..k {
                s -= lambda[c] * grads[(c, i)];
            }
            f[i] = s;
        }
        for c in 0..k {
            f[m + c] = vals[c];
        }
        if let Some(j) = jac {
            let h = ev.hessian.expect("requested");
            for r in 0..m {
                for s in 0..m {
                    let mut v = h[(r, s)];
                    for c in 0..k {
                        v -= lambda[c] * hs[c][(r, s)];
                    }
                    j[(r, s)] = v;
                }
                for c in 0..k {
                    j[(r, m + c)] = -grads[(c, r)];
                    j[(m + c, r)] = grads[(c, r)];
                }
            }
            for c in 0..k {
                for d in 0..k {
                    j[(m + c, m + d)] = T::zero();
                }
            }
        }
    }

    fn labels(&self) -> Vec<String> {
        let mut out = self.landscape.parameterization.names.clone();
        out.extend((0..self.num_multipliers()).map(|c| format!("lambda{}", c + 1)));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Min,
    Saddle,
    Max,
    /// An eigenvalue lies within the classification threshold of zero.
    Borderline,
}

/// Constraint-reduced Hessian spectrum at a critical point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub kind: Kind,
    /// Increasing eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Matching unit eigenvectors in the free coordinates.
    pub directions: Vec<Vec<f64>>,
    pub threshold: f64,
}

impl Classification {
    pub fn negative_directions(&self) -> usize {
        self.eigenvalues.iter().filter(|&&e| e < -self.threshold).count()
    }
}

/// Orthonormal basis of the null space of the constraint gradients.
fn tangent_basis(grads: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    if grads.nrows() == 0 {
        return DMatrix::identity(m, m);
    }
    let svd = grads.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * smax).count();
    // Full V from the complement of the row space.
    let mut basis: Vec<DVector<f64>> = (0..rank).map(|i| vt.row(i).transpose()).collect();
    let start = basis.len();
    for axis in 0..m {
        let mut w = DVector::zeros(m);
        w[axis] = 1.0;
        for b in &basis {
            let p = w.dot(b);
            w -= b * p;
        }
        let n = w.norm();
        if n > 1e-8 {
            basis.push(w / n);
        }
        if basis.len() == m {
            break;
        }
    }
    DMatrix::from_columns(&basis[start..])
}

/// Hessian of the Lagrangian in the free coordinates.
pub fn lagrangian_hessian(ls: &Landscape, theta: &[f64], lambda: &[f64]) -> DMatrix<f64> {
    let mut h = ls.hessian(theta);
    if !ls.constraints.is_empty() {
        let (_, _, hs) = ls.constraint_data(theta, true);
        for (l, hc) in lambda.iter().zip(&hs) {
            h -= hc * *l;
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Second-derivative test on the constraint tangent space.
pub fn classify(ls: &Landscape, theta: &[f64], lambda: &[f64]) -> Classification {
    let h = lagrangian_hessian(ls, theta, lambda);
    classify_hessian(&h, &ls.constraint_data(theta, false).1)
}

/// Classifies a symmetric Lagrangian Hessian on the null space of the
/// constraint gradients (one row per constraint).
pub fn classify_hessian(h: &DMatrix<f64>, grads: &DMatrix<f64>) -> Classification {
    let z = tangent_basis(grads, h.nrows());
    let reduced = z.transpose() * h * &z;
    let eig = reduced.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let directions: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let v = &z * eig.eigenvectors.column(i);
            (v.clone() / v.norm()).as_slice().to_vec()
        })
        .collect();
    let top = eigenvalues.iter().fold(0.0, |a: f64, e| a.max(e.abs()));
    let tau = 1e-8 * top;
    let kind = if eigenvalues.iter().any(|e| e.abs() <= tau) {
        Kind::Borderline
    } else if eigenvalues.iter().all(|&e| e > tau) {
        Kind::Min
    } else if eigenvalues.iter().all(|&e| e < -tau) {
        Kind::Max
    } else {
        Kind::Saddle
    };
    Classification {
        kind,
        eigenvalues,
        directions,
        threshold: tau,
    }
}

/// A classified, annotated critical realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub theta: Vec<f64>,
    pub multipliers: Vec<f64>,
    /// `u/E`.
    pub value: f64,
    /// All lengths agree with the intrinsic metric.
    pub undeformed: bool,
    pub classification: Classification,
    pub stress: SelfStress,
    pub shakiness: Shakiness,
    /// `‖F‖∞` of the Lagrangian system.
    pub residual: f64,
}

impl CriticalPoint {
    pub fn kind(&self) -> Kind {
        self.classification.kind
    }

    pub fn is_saddle(&self) -> bool {
        self.kind() == Kind::Saddle
    }

    pub fn is_min(&self) -> bool {
        self.kind() == Kind::Min
    }

    pub fn shaky(&self) -> bool {
        self.shakiness.shaky
    }

    pub fn max_deviation(&self, other: &[f64]) -> f64 {
        self.theta.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Largest relative deviation of a squared class length from its target.
pub fn strain_level(ls: &Landscape, theta: &[f64]) -> f64 {
    ls.classes
        .iter()
        .map(|c| ((c.poly.value(theta) - c.q0) / c.q0).abs())
        .fold(0.0, f64::max)
}

/// Annotates a point assumed critical.
pub fn critical_point(ls: &Landscape, theta: &[f64], lambda: Option<&[f64]>) -> CriticalPoint {
    let lambda = lambda.map(<[f64]>::to_vec).unwrap_or_else(|| multipliers(ls, theta));
    let sys = GradientSystem::new(ls);
    let x: Vec<f64> = theta.iter().chain(&lambda).copied().collect();
    let mut f = vec![0.0; sys.dim()];
    sys.evaluate(&x, &mut f, None);
    let undeformed = strain_level(ls, theta) < 1e-8;
    let mut classification = classify(ls, theta, &lambda);
    if undeformed && classification.kind == Kind::Borderline {
        // Flat directions of an undeformed realization are continuous flexes.
        classification.kind = Kind::Min;
    }
    CriticalPoint {
        theta: theta.to_vec(),
        multipliers: lambda,
        value: ls.value(theta),
        undeformed,
        classification,
        stress: energy_self_stress(ls, theta),
        shakiness: landscape_shakiness(ls, theta, SHAKY_TOL),
        residual: polysolve::norm_inf(&f),
    }
}

/// Newton polish of `(θ, λ)` on the Lagrangian system.
pub fn polish(ls: &Landscape, theta: &[f64], lambda: Option<&[f64]>) -> Option<(Vec<f64>, Vec<f64>)> {
    let sys = GradientSystem::new(ls);
    let m = ls.num_params();
    let lambda = lambda.map(<[f64]>::to_vec).unwrap_or_else(|| multipliers(ls, theta));
    let x: Vec<f64> = theta.iter().chain(&lambda).copied().collect();
    let out = newton(&sys, &x, 1e-15, 30);
    if !out.x.iter().all(|v| v.is_finite()) {
        return None;
    }
    let (t, l) = out.x.split_at(m);
    Some((t.to_vec(), l.to_vec()))
}

/// Reason a real solution is not an admissible realization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    ShortEdge,
    CollapsedBody,
    /// A parameter declared positive is not.
    Sign,
}

/// Admissibility: no vanishing edge, no collapsed body simplex and the sign
/// convention of the parameterization.
pub fn admissible(ls: &Landscape, theta: &[f64]) -> Result<(), Rejection> {
    if ls.parameterization.positive.iter().any(|&k| !(theta[k] > 0.0)) {
        return Err(Rejection::Sign);
    }
    let scale = ls.mean_length();
    let q: Vec<f64> = ls.edge_polys.iter().map(|p| p.value(theta)).collect();
    if q.iter().any(|&x| !(x.max(0.0).sqrt() >= 1e-8 * scale)) {
        return Err(Rejection::ShortEdge);
    }
    for t in &ls.density.terms {
        if t.body.is_none() || t.edges.len() < 3 {
            continue;
        }
        let local: Vec<f64> = t.edges.iter().map(|&e| q[e]).collect();
        let vol = cayley_menger_volume(&local).unwrap_or(0.0);
        if !(vol >= 1e-8 * t.form.volume) {
            return Err(Rejection::CollapsedBody);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub complex: usize,
    pub short_edge: usize,
    pub collapsed_body: usize,
    pub sign: usize,
    /// Real solutions that did not polish to a critical point.
    pub unpolished: usize,
    /// Polished points coinciding with an earlier one.
    pub duplicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TotalDegree,
    /// Damped Newton from seeds in the free coordinates.
    Multistart(MultistartConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub strategy: Strategy,
    pub tracker: TrackerConfig,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::TotalDegree,
            tracker: TrackerConfig::default(),
        }
    }
}

/// All admissible critical points found by one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalSet {
    pub points: Vec<CriticalPoint>,
    pub provenance: Provenance,
    pub filtered: FilterCounts,
    /// Real solutions before filtering.
    pub real_solutions: usize,
}

impl CriticalSet {
    pub fn exhaustive(&self) -> bool {
        self.provenance.exhaustive
    }

    pub fn minima(&self) -> impl Iterator<Item = (usize, &CriticalPoint)> {
        self.points.iter().enumerate().filter(|(_, p)| p.is_min())
    }

    pub fn saddles(&self) -> impl Iterator<Item = (usize, &CriticalPoint)> {
        self.points.iter().enumerate().filter(|(_, p)| p.is_saddle())
    }

    pub fn undeformed(&self) -> impl Iterator<Item = (usize, &CriticalPoint)> {
        self.points.iter().enumerate().filter(|(_, p)| p.undeformed)
    }

    /// Index of the point within `tol` (max norm) of `theta`.
    pub fn find(&self, theta: &[f64], tol: f64) -> Option<usize> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.max_deviation(theta)))
            .filter(|(_, d)| *d <= tol)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

fn order_key(p: &CriticalPoint) -> (u8, u8) {
    let kind = match p.kind() {
        Kind::Min => 0,
        Kind::Saddle => 1,
        Kind::Max => 2,
        Kind::Borderline => 3,
    };
    (u8::from(!p.undeformed), kind)
}

/// Sorts undeformed realizations first, then by kind, energy and coordinates.
pub fn sort_points(points: &mut [CriticalPoint]) {
    points.sort_by(|a, b| {
        order_key(a)
            .cmp(&order_key(b))
            .then(a.value.total_cmp(&b.value))
            .then_with(|| {
                a.theta
                    .iter()
                    .zip(&b.theta)
                    .map(|(x, y)| (-x).total_cmp(&-y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
}

/// Filters, polishes, deduplicates and annotates candidate solutions.
pub fn assemble(ls: &Landscape, candidates: Vec<Vec<f64>>, filtered: &mut FilterCounts) -> Vec<CriticalPoint> {
    let m = ls.num_params();
    let scale = ls.mean_length();
    let mut points: Vec<CriticalPoint> = Vec::new();
    for x in candidates {
        let (t, l) = x.split_at(m);
        let Some((t, l)) = polish(ls, t, Some(l)) else {
            filtered.unpolished += 1;
            continue;
        };
        match admissible(ls, &t) {
            Err(Rejection::ShortEdge) => filtered.short_edge += 1,
            Err(Rejection::CollapsedBody) => filtered.collapsed_body += 1,
            Err(Rejection::Sign) => filtered.sign += 1,
            Ok(()) => {
                let cp = critical_point(ls, &t, Some(&l));
                let grad_scale = ls.gradient(&t).iter().fold(0.0, |a: f64, g| a.max(g.abs()));
                if !(cp.residual <= 1e-8 * (1.0 + grad_scale) * scale.max(1.0)) {
                    filtered.unpolished += 1;
                    continue;
                }
                if points.iter().any(|p| p.max_deviation(&t) < 1e-7 * scale) {
                    filtered.duplicates += 1;
                    continue;
                }
                points.push(cp);
            }
        }
    }
    sort_points(&mut points);
    points
}

/// Solves the Lagrangian system and returns the admissible critical points.
pub fn enumerate_critical_points(ls: &Landscape, options: &SolveOptions) -> Result<CriticalSet, SnapError> {
    let sys = GradientSystem::new(ls);
    let m = ls.num_params();
    let set = match &options.strategy {
        Strategy::TotalDegree => solve_total_degree(&sys, &options.tracker)?,
        Strategy::Multistart(ms) => {
            let mut rng = ChaCha8Rng::seed_from_u64(options.tracker.seed);
            let mut seeds: Vec<Vec<f64>> = ms.seeds.clone();
            for _ in 0..ms.random_starts {
                seeds.push(
                    (0..m)
                        .map(|i| ms.center.get(i).copied().unwrap_or(0.0) + ms.radius * rng.random_range(-1.0..1.0))
                        .collect(),
                );
            }
            let seeds = seeds
                .into_iter()
                .map(|t| {
                    let l = if t.len() == m { multipliers(ls, &t) } else { Vec::new() };
                    t.into_iter().chain(l).collect()
                })
                .collect();
            let cfg = MultistartConfig {
                random_starts: 0,
                seeds,
                ..ms.clone()
            };
            solve_multistart(&sys, &cfg, &options.tracker)
        }
    };
    let mut filtered = FilterCounts {
        complex: set.solutions.len() - set.num_real(),
        ..Default::default()
    };
    let real = set.real_points();
    let real_solutions = real.len();
    let points = assemble(ls, real, &mut filtered);
    Ok(CriticalSet {
        points,
        provenance: set.provenance,
        filtered,
        real_solutions,
    })
}

/// How a descent flow ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    /// Converged to a critical point.
    Converged,
    /// Passed through a vanishing edge, a collapsed body or the sign
    /// convention of the parameterization.
    LeftAdmissible,
    /// Step budget exhausted.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Seed offset along the eigenvector, relative to the mean length.
    pub offset: f64,
    pub max_steps: usize,
    /// Stop when `‖∇u‖∞` falls below this times the initial gradient scale.
    pub gradient_tol: f64,
    /// Keep every n-th point of the trajectory.
    pub record_every: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            offset: 1e-4,
            max_steps: 200_000,
            gradient_tol: 1e-12,
            record_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub status: FlowStatus,
    pub endpoint: Vec<f64>,
    pub value: f64,
    pub steps: usize,
    /// Density is non-increasing along the recorded trajectory.
    pub monotone: bool,
    /// Free coordinates along the flow.
    pub trajectory: Vec<Vec<f64>>,
}

/// Projection of `v` onto the tangent space of the constraints.
fn project(grads: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if grads.nrows() == 0 {
        return v.clone();
    }
    let gg = grads * grads.transpose();
    match gg.lu().solve(&(grads * v)) {
        Some(c) => v - grads.transpose() * c,
        None => v.clone(),
    }
}

/// Gauss-Newton return onto `f = 0`.
fn restore(ls: &Landscape, theta: &mut [f64]) {
    for _ in 0..20 {
        let (vals, grads, _) = ls.constraint_data(theta, false);
        let r = DVector::from_vec(vals);
        if r.amax() < 1e-15 * ls.mean_length().powi(3) {
            return;
        }
        let Ok(step) = grads.clone().svd(true, true).solve(&r, 1e-14) else {
            return;
        };
        for (t, s) in theta.iter_mut().zip(step.iter()) {
            *t -= s;
        }
    }
}

/// Steepest descent with backtracking from `start`; projected when the
/// landscape carries volume constraints.
pub fn descend(ls: &Landscape, start: &[f64], opts: &FlowOptions) -> Flow {
    let constrained = !ls.constraints.is_empty();
    let mut theta = start.to_vec();
    if constrained {
        restore(ls, &mut theta);
    }
    let mut value = ls.value(&theta);
    let mut trajectory = vec![theta.clone()];
    let mut alpha = {
        let h = ls.hessian(&theta);
        1.0 / h.abs().max().max(1e-300)
    };
    let tangent_grad = |t: &[f64]| {
        let g = DVector::from_vec(ls.gradient(t));
        if constrained {
            project(&ls.constraint_data(t, false).1, &g)
        } else {
            g
        }
    };
    let hess_scale = ls.hessian(&theta).abs().max().max(f64::MIN_POSITIVE);
    let tol = opts.gradient_tol * hess_scale * ls.mean_length();
    let mut status = FlowStatus::Stalled;
    let mut steps = 0;
    while steps < opts.max_steps {
        steps += 1;
        let g = tangent_grad(&theta);
        if g.amax() <= tol {
            status = FlowStatus::Converged;
            break;
        }
        if admissible(ls, &theta).is_err() {
            status = FlowStatus::LeftAdmissible;
            break;
        }
        // Newton inside a convex basin once the step is short.
        let h = lagrangian_hessian(ls, &theta, &multipliers(ls, &theta));
        let newton_step = if constrained {
            None
        } else {
            h.clone().cholesky().map(|c| c.solve(&g))
        };
        if let Some(p) = newton_step.filter(|p| p.amax() < 1e-3 * ls.mean_length()) {
            let trial: Vec<f64> = theta.iter().zip(p.iter()).map(|(t, s)| t - s).collect();
            let tv = ls.value(&trial);
            // Energy differences this small are rounding noise.
            let noise = 1e-12 * value.abs();
            if tv <= value + noise {
                theta = trial;
                value = tv;
                if steps % opts.record_every == 0 {
                    trajectory.push(theta.clone());
                }
                continue;
            }
        }
        let g2 = g.norm_squared();
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial: Vec<f64> = theta.iter().zip(g.iter()).map(|(t, s)| t - alpha * s).collect();
            if constrained {
                restore(ls, &mut trial);
            }
            let tv = ls.value(&trial);
            if tv <= value - 1e-4 * alpha * g2 {
                theta = trial;
                value = tv;
                accepted = true;
                alpha *= 1.5;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Too flat to make Armijo progress: treat as converged if the
            // gradient is tiny relative to the landscape.
            if g.amax() <= 1e3 * tol {
                status = FlowStatus::Converged;
            }
            break;
        }
        if steps % opts.record_every == 0 {
            trajectory.push(theta.clone());
        }
    }
    if trajectory.last() != Some(&theta) {
        trajectory.push(theta.clone());
    }
    let values: Vec<f64> = trajectory.iter().map(|t| ls.value(t)).collect();
    let monotone = values.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs());
    Flow {
        status,
        value: ls.value(&theta),
        endpoint: theta,
        steps,
        monotone,
        trajectory,
    }
}

/// Flow from a saddle along `±` its `direction`-th eigenvector (0 = most
/// negative).
pub fn descend_flow(ls: &Landscape, saddle: &CriticalPoint, direction: usize, sign: f64, opts: &FlowOptions) -> Flow {
    let dir = &saddle.classification.directions[direction];
    let eps = opts.offset * ls.mean_length() * sign;
    let start: Vec<f64> = saddle.theta.iter().zip(dir).map(|(t, d)| t + eps * d).collect();
    descend(ls, &start, opts)
}

/// One saddle-to-minimum relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub saddle: usize,
    /// 0-based index into the saddle's increasing eigenvalues.
    pub direction: usize,
    pub sign: i8,
    /// Reached critical point, when the flow ended at a known one.
    pub target: Option<usize>,
    pub status: FlowStatus,
    /// True when the flow is not a clean saddle-to-minimum connection.
    pub degenerate: bool,
    pub endpoint: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionGraph {
    /// Indices into the critical set of the nodes (minima and saddles).
    pub nodes: Vec<usize>,
    pub edges: Vec<Transition>,
}

impl TransitionGraph {
    /// Targets reached from `saddle` along `direction`, solid edges only.
    pub fn targets(&self, saddle: usize, direction: usize) -> Vec<usize> {
        let mut t: Vec<usize> = self
            .edges
            .iter()
            .filter(|e| e.saddle == saddle && e.direction == direction && !e.degenerate)
            .filter_map(|e| e.target)
            .collect();
        t.sort_unstable();
        t.dedup();
        t
    }

    /// Graphviz rendering; degenerate flows are dotted.
    pub fn to_dot(&self, set: &CriticalSet, names: &[String]) -> String {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("V{}", i + 1));
        let mut s = String::from("digraph transitions {\n  rankdir=LR;\n");
        for &i in &self.nodes {
            let p = &set.points[i];
            let color = if p.undeformed {
                "palegreen"
            } else if p.is_min() {
                "khaki1"
            } else {
                "salmon"
            };
            let _ = writeln!(
                s,
                "  \"{}\" [style=filled, fillcolor={color}, label=\"{}\\nu/E={:.6e}{}\"];",
                name(i),
                name(i),
                p.value,
                if p.shaky() { "\\nshaky" } else { "" }
            );
        }
        for e in &self.edges {
            let Some(t) = e.target else { continue };
            let mut attrs = Vec::new();
            if e.direction > 0 {
                attrs.push(format!("label=\"{}\"", e.direction + 1));
            }
            if e.degenerate {
                attrs.push("style=dotted".to_string());
            }
            let attrs = if attrs.is_empty() { String::new() } else { format!(" [{}]", attrs.join(", ")) };
            let _ = writeln!(s, "  \"{}\" -> \"{}\"{attrs};", name(e.saddle), name(t));
        }
        s.push_str("}\n");
        s
    }
}

/// Follows every negative direction of every saddle with both signs.
pub fn transition_graph(ls: &Landscape, set: &CriticalSet, opts: &FlowOptions) -> TransitionGraph {
    let tasks: Vec<(usize, usize, f64)> = set
        .saddles()
        .flat_map(|(i, p)| {
            (0..p.classification.negative_directions()).flat_map(move |d| [(i, d, 1.0), (i, d, -1.0)])
        })
        .collect();
    let flows = polysolve::map_indexed(tasks.len(), polysolve::Execution::default(), |k| {
        let (i, d, sgn) = tasks[k];
        descend_flow(ls, &set.points[i], d, sgn, opts)
    });
    let tol = 1e-6 * ls.mean_length();
    let edges = tasks
        .iter()
        .zip(flows)
        .map(|(&(i, d, sgn), flow)| {
            let target = match flow.status {
                FlowStatus::Converged => polish(ls, &flow.endpoint, None)
                    .and_then(|(t, _)| set.find(&t, tol))
                    .or_else(|| set.find(&flow.endpoint, 1e3 * tol)),
                _ => None,
            };
            let degenerate = flow.status != FlowStatus::Converged
                || target.is_none_or(|t| !set.points[t].is_min())
                || !flow.monotone;
            Transition {
                saddle: i,
                direction: d,
                sign: if sgn > 0.0 { 1 } else { -1 },
                target,
                status: flow.status,
                degenerate,
                endpoint: flow.endpoint,
            }
        })
        .collect();
    let nodes = set
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_min() || p.is_saddle())
        .map(|(i, _)| i)
        .collect();
    TransitionGraph { nodes, edges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::DensityMode;
    use crate::fixtures;

    fn quad() -> Landscape {
        Landscape::new(&fixtures::load("quad").unwrap(), DensityMode::Full, None).unwrap()
    }

    #[test]
    fn jacobian_matches_differences() {
        let ls = Landscape::new(&fixtures::load("loop4r_tetra").unwrap(), DensityMode::Full, None).unwrap();
        let sys = GradientSystem::new(&ls);
        let n = sys.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut f = vec![0.0; n];
        let mut j = DMatrix::zeros(n, n);
        sys.evaluate(&x, &mut f, Some(&mut j));
        let h = 1e-6;
        for k in 0..n {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[k] += h;
            b[k] -= h;
            let (mut fa, mut fb) = (vec![0.0; n], vec![0.0; n]);
            sys.evaluate(&a, &mut fa, None);
            sys.evaluate(&b, &mut fb, None);
            for r in 0..n {
                let fd = (fa[r] - fb[r]) / (2.0 * h);
                assert!((j[(r, k)] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "({r},{k}) {} vs {fd}", j[(r, k)]);
            }
        }
    }

    #[test]
    fn undeformed_quad_is_min_and_stays_put() {
        let ls = quad();
        let cp = critical_point(&ls, &[3.0, 1.0, 1.0, -1.0, -1.0], None);
        assert!(cp.undeformed && cp.is_min());
        let flow = descend(&ls, &cp.theta, &FlowOptions::default());
        assert_eq!(flow.status, FlowStatus::Converged);
        assert!(cp.max_deviation(&flow.endpoint) < 1e-12);
    }

    #[test]
    fn descent_is_monotone_and_reaches_a_minimum() {
        let ls = quad();
        let flow = descend(&ls, &[2.8, 1.3, 0.8, -0.7, -1.2], &FlowOptions::default());
        assert_eq!(flow.status, FlowStatus::Converged);
        assert!(flow.monotone);
        let cp = critical_point(&ls, &flow.endpoint, None);
        assert!(cp.is_min());
    }
}
