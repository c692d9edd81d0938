//! Stewart-Gough manipulators: direct kinematics and the singularity
//! distance in joint space.
//!
//! The platform is described by its first three anchors; the other three
//! follow from affine coordinates in the frame spanned by the edges from the
//! first anchor and their cross product. Three side conditions keep the
//! map a direct isometry. Unknowns are ordered `x₁ x₂ x₃ y₁ y₂ y₃ z₁ z₂ z₃`.

use nalgebra::{DMatrix, DVector, Vector3};
use polysolve::{
    solve_multistart, solve_total_degree, MultistartConfig, ParameterFamily, PathStatus, Scalar, System,
    TrackerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critical::{classify_hessian, Classification, Kind, Strategy};
use crate::error::{ModelError, SnapError};
use crate::framework::NumberSpec;
use crate::rigidity::{line_complex_rank, LineComplex, SHAKY_TOL};
use crate::snap::{extrapolate, follow, sample_stops, to_complex, PathReport};

const UNKNOWNS: usize = 9;
/// Edge-difference coefficients of `v₂ − v₁` and `v₃ − v₁`.
const FIRST: [f64; 3] = [-1.0, 1.0, 0.0];
const SECOND: [f64; 3] = [-1.0, 0.0, 1.0];
/// Side conditions as coefficient vectors: `v₂ − v₃`, `v₃ − v₁`, `v₁ − v₂`.
const SIDES: [[f64; 3]; 3] = [[0.0, 1.0, -1.0], [-1.0, 0.0, 1.0], [1.0, -1.0, 0.0]];

fn idx(axis: usize, point: usize) -> usize {
    axis * 3 + point
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleSpec {
    pub v2v3: NumberSpec,
    pub v3v1: NumberSpec,
    pub v1v2: NumberSpec,
}

/// JSON form of a manipulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorFile {
    #[serde(default)]
    pub name: Option<String>,
    pub base: Vec<[NumberSpec; 3]>,
    /// Squared side lengths of the anchor triangle.
    pub platform_triangle: TriangleSpec,
    pub affine_coords: Vec<[NumberSpec; 3]>,
    pub legs: Vec<NumberSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manipulator {
    pub name: Option<String>,
    pub base: [[f64; 3]; 6],
    /// Squared lengths `‖v₂−v₃‖², ‖v₃−v₁‖², ‖v₁−v₂‖²`.
    pub sides: [f64; 3],
    /// `(ξ, υ, ζ)` of anchors 4..6.
    pub affine: [[f64; 3]; 3],
    pub legs: [f64; 6],
}

fn values<const N: usize>(specs: &[NumberSpec], what: &str) -> Result<[f64; N], ModelError> {
    if specs.len() != N {
        return Err(ModelError::Parameterization(format!(
            "{what}: expected {N} entries, got {}",
            specs.len()
        )));
    }
    let v: Vec<f64> = specs.iter().map(NumberSpec::value).collect::<Result<_, _>>()?;
    Ok(v.try_into().expect("length checked"))
}

impl Manipulator {
    pub fn from_file(file: &ManipulatorFile) -> Result<Self, ModelError> {
        let rows = |v: &[[NumberSpec; 3]], n: usize, what: &str| -> Result<Vec<[f64; 3]>, ModelError> {
            if v.len() != n {
                return Err(ModelError::Parameterization(format!("{what}: expected {n} rows, got {}", v.len())));
            }
            v.iter().map(|r| values::<3>(r, what)).collect()
        };
        let t = &file.platform_triangle;
        let m = Self {
            name: file.name.clone(),
            base: rows(&file.base, 6, "base")?.try_into().expect("six rows"),
            sides: [t.v2v3.value()?, t.v3v1.value()?, t.v1v2.value()?],
            affine: rows(&file.affine_coords, 3, "affine_coords")?.try_into().expect("three rows"),
            legs: values::<6>(&file.legs, "legs")?,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self, SnapError> {
        let file: ManipulatorFile = serde_json::from_str(text)?;
        Ok(Self::from_file(&file)?)
    }

    fn validate(&self) -> Result<(), ModelError> {
        for (i, &l) in self.legs.iter().enumerate() {
            if !(l > 0.0) {
                return Err(ModelError::NonPositiveLength {
                    edge: format!("leg {}", i + 1),
                    value: l,
                });
            }
        }
        let [a, b, c] = self.sides.map(|s| s.max(0.0).sqrt());
        let slack = 1e-12 * (a + b + c);
        if a + b <= c + slack || b + c <= a + slack || c + a <= b + slack {
            return Err(ModelError::Degenerate("platform anchors 1-3 are collinear".into()));
        }
        Ok(())
    }

    fn zeta(&self) -> bool {
        self.affine.iter().any(|a| a[2] != 0.0)
    }

    /// Coefficients of `v₁, v₂, v₃` and of the cross product for anchor `i`.
    fn combination(&self, i: usize) -> ([f64; 3], f64) {
        if i < 3 {
            let mut c = [0.0; 3];
            c[i] = 1.0;
            (c, 0.0)
        } else {
            let [xi, up, ze] = self.affine[i - 3];
            ([1.0 - xi - up, xi, up], ze)
        }
    }

    /// Platform anchors from the unknown vector.
    pub fn anchors<T: Scalar>(&self, x: &[T]) -> [[T; 3]; 6] {
        let cr = cross_of(x);
        std::array::from_fn(|i| {
            let (c, z) = self.combination(i);
            std::array::from_fn(|a| {
                let mut v = cr[a] * T::from_real(z);
                for p in 0..3 {
                    v += x[idx(a, p)] * T::from_real(c[p]);
                }
                v
            })
        })
    }

    /// Squared leg lengths at `x`.
    pub fn leg_squares<T: Scalar>(&self, x: &[T]) -> [T; 6] {
        let anchors = self.anchors(x);
        std::array::from_fn(|i| {
            let mut s = T::zero();
            for a in 0..3 {
                let d = anchors[i][a] - T::from_real(self.base[i][a]);
                s += d * d;
            }
            s
        })
    }

    pub fn leg_lengths(&self, x: &[f64]) -> [f64; 6] {
        self.leg_squares(x).map(|q| q.max(0.0).sqrt())
    }

    /// Squared leg lengths with gradients and, optionally, Hessians.
    fn legs_with_derivatives<T: Scalar>(&self, x: &[T], hessians: bool) -> Vec<(T, Vec<T>, Option<DMatrix<T>>)> {
        let anchors = self.anchors(x);
        let dcross = cross_jacobian(x);
        (0..6)
            .map(|i| {
                let (c, z) = self.combination(i);
                let d: [T; 3] = std::array::from_fn(|a| anchors[i][a] - T::from_real(self.base[i][a]));
                // Rows: axis of the anchor, columns: unknowns.
                let mut jac = [[T::zero(); UNKNOWNS]; 3];
                for a in 0..3 {
                    for p in 0..3 {
                        jac[a][idx(a, p)] += T::from_real(c[p]);
                    }
                    if z != 0.0 {
                        for k in 0..UNKNOWNS {
                            jac[a][k] += dcross[a][k] * T::from_real(z);
                        }
                    }
                }
                let mut value = T::zero();
                let mut grad = vec![T::zero(); UNKNOWNS];
                for a in 0..3 {
                    value += d[a] * d[a];
                    for k in 0..UNKNOWNS {
                        grad[k] += T::from_real(2.0) * d[a] * jac[a][k];
                    }
                }
                let hess = hessians.then(|| {
                    let mut h = DMatrix::from_fn(UNKNOWNS, UNKNOWNS, |k, l| {
                        let mut s = T::zero();
                        for a in 0..3 {
                            s += jac[a][k] * jac[a][l];
                        }
                        s * T::from_real(2.0)
                    });
                    if z != 0.0 {
                        for a in 0..3 {
                            let hc = cross_hessian(a);
                            h += hc.map(|v| T::from_real(2.0 * z * v)) * d[a];
                        }
                    }
                    h
                });
                (value - T::from_real(self.legs[i] * self.legs[i]), grad, hess)
            })
            .collect()
    }

    /// Side conditions `e₁, e₂, e₃` with their gradients (rows).
    pub fn side_conditions<T: Scalar>(&self, x: &[T]) -> ([T; 3], DMatrix<T>) {
        let mut vals = [T::zero(); 3];
        let mut grads = DMatrix::zeros(3, UNKNOWNS);
        for (k, t) in SIDES.iter().enumerate() {
            let mut s = -T::from_real(self.sides[k]);
            for a in 0..3 {
                let mut d = T::zero();
                for p in 0..3 {
                    d += x[idx(a, p)] * T::from_real(t[p]);
                }
                s += d * d;
                for p in 0..3 {
                    grads[(k, idx(a, p))] = d * T::from_real(2.0 * t[p]);
                }
            }
            vals[k] = s;
        }
        (vals, grads)
    }

    /// Design platform anchors 4..6 from a triangle.
    pub fn reconstruct(&self, v: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3], ModelError> {
        reconstruct_platform(v, &self.affine)
    }

    /// Unknown vector of a platform triangle.
    pub fn pack(v: &[[f64; 3]; 3]) -> Vec<f64> {
        (0..UNKNOWNS).map(|k| v[k % 3][k / 3]).collect()
    }

    /// Lines of the six legs.
    pub fn leg_lines(&self, x: &[f64]) -> Vec<([f64; 3], [f64; 3])> {
        let anchors = self.anchors(x);
        (0..6).map(|i| (self.base[i], anchors[i])).collect()
    }

    /// Rank of the legs' Plücker matrix.
    pub fn line_complex(&self, x: &[f64]) -> Result<LineComplex, ModelError> {
        line_complex_rank(&self.leg_lines(x), SHAKY_TOL)
    }

    /// True when the platform centroid lies below the best-fit plane of the
    /// base, whose normal points along `+z` of the fixed frame.
    pub fn below_base(&self, x: &[f64]) -> bool {
        let pts: Vec<Vector3<f64>> = self.base.iter().map(|b| Vector3::from(*b)).collect();
        let centroid = pts.iter().sum::<Vector3<f64>>() / 6.0;
        let centered = DMatrix::from_fn(6, 3, |i, j| pts[i][j] - centroid[j]);
        let svd = centered.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let smallest = (0..3)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .expect("three");
        let mut normal = Vector3::new(vt[(smallest, 0)], vt[(smallest, 1)], vt[(smallest, 2)]);
        let up = if normal.z.abs() > 1e-12 {
            normal.z
        } else if normal.y.abs() > 1e-12 {
            normal.y
        } else {
            normal.x
        };
        if up < 0.0 {
            normal = -normal;
        }
        let anchors = self.anchors(x);
        let top = anchors.iter().map(|a| Vector3::from(*a)).sum::<Vector3<f64>>() / 6.0;
        (top - centroid).dot(&normal) < 0.0
    }
}

/// `(v₂ − v₁) × (v₃ − v₁)`.
fn cross_of<T: Scalar>(x: &[T]) -> [T; 3] {
    let d = |coef: &[f64; 3], a: usize| {
        let mut s = T::zero();
        for p in 0..3 {
            s += x[idx(a, p)] * T::from_real(coef[p]);
        }
        s
    };
    let u: [T; 3] = std::array::from_fn(|a| d(&FIRST, a));
    let w: [T; 3] = std::array::from_fn(|a| d(&SECOND, a));
    [
        u[1] * w[2] - u[2] * w[1],
        u[2] * w[0] - u[0] * w[2],
        u[0] * w[1] - u[1] * w[0],
    ]
}

/// Antisymmetric `M_a` with `c_a = uᵀ M_a w`.
fn cross_form(a: usize, b: usize, e: usize) -> f64 {
    let (a1, a2) = ((a + 1) % 3, (a + 2) % 3);
    (b == a1 && e == a2) as i32 as f64 - (b == a2 && e == a1) as i32 as f64
}

fn cross_jacobian<T: Scalar>(x: &[T]) -> [[T; UNKNOWNS]; 3] {
    let mut out = [[T::zero(); UNKNOWNS]; 3];
    for (a, row) in out.iter_mut().enumerate() {
        for p in 0..3 {
            for b in 0..3 {
                let mut s = T::zero();
                for q in 0..3 {
                    let w = FIRST[p] * SECOND[q] - FIRST[q] * SECOND[p];
                    if w == 0.0 {
                        continue;
                    }
                    for e in 0..3 {
                        let m = cross_form(a, b, e);
                        if m != 0.0 {
                            s += x[idx(e, q)] * T::from_real(w * m);
                        }
                    }
                }
                row[idx(b, p)] = s;
            }
        }
    }
    out
}

fn cross_hessian(a: usize) -> DMatrix<f64> {
    DMatrix::from_fn(UNKNOWNS, UNKNOWNS, |k, l| {
        let (b, p) = (k / 3, k % 3);
        let (e, q) = (l / 3, l % 3);
        (FIRST[p] * SECOND[q] - FIRST[q] * SECOND[p]) * cross_form(a, b, e)
    })
}

/// Anchors 4..6 from anchors 1..3 and affine coordinates in the frame
/// `(v₂ − v₁, v₃ − v₁, (v₂ − v₁) × (v₃ − v₁))` at `v₁`.
pub fn reconstruct_platform(v: &[[f64; 3]; 3], affine: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3], ModelError> {
    let [p1, p2, p3] = v.map(Vector3::from);
    let (u, w) = (p2 - p1, p3 - p1);
    let n = u.cross(&w);
    if n.norm() <= 1e-12 * u.norm() * w.norm() {
        return Err(ModelError::Degenerate("platform anchors 1-3 are collinear".into()));
    }
    Ok(affine.map(|[xi, up, ze]| (p1 + u * xi + w * up + n * ze).into()))
}

/// Leg equations and side conditions.
pub struct KinematicsSystem<'a> {
    pub manipulator: &'a Manipulator,
    /// Target squared leg lengths.
    pub targets: [f64; 6],
}

impl<'a> KinematicsSystem<'a> {
    pub fn new(manipulator: &'a Manipulator) -> Self {
        Self {
            targets: manipulator.legs.map(|l| l * l),
            manipulator,
        }
    }
}

fn kinematics_degrees(m: &Manipulator) -> Vec<u32> {
    let leg = if m.zeta() { 4 } else { 2 };
    let mut d = vec![leg; 6];
    d.extend([2, 2, 2]);
    d
}

fn kinematics_eval<T: Scalar>(m: &Manipulator, x: &[T], targets: &[f64; 6], f: &mut [T], jac: Option<&mut DMatrix<T>>) {
    let legs = m.legs_with_derivatives(x, false);
    let (vals, grads) = m.side_conditions(x);
    for (i, (r, _, _)) in legs.iter().enumerate() {
        f[i] = *r + T::from_real(m.legs[i] * m.legs[i] - targets[i]);
    }
    for k in 0..3 {
        f[6 + k] = vals[k];
    }
    if let Some(j) = jac {
        for (i, (_, g, _)) in legs.iter().enumerate() {
            for k in 0..UNKNOWNS {
                j[(i, k)] = g[k];
            }
        }
        for r in 0..3 {
            for k in 0..UNKNOWNS {
                j[(6 + r, k)] = grads[(r, k)];
            }
        }
    }
}

impl System for KinematicsSystem<'_> {
    fn dim(&self) -> usize {
        UNKNOWNS
    }

    fn degrees(&self) -> Vec<u32> {
        kinematics_degrees(self.manipulator)
    }

    fn evaluate<T: Scalar>(&self, x: &[T], f: &mut [T], jac: Option<&mut DMatrix<T>>) {
        kinematics_eval(self.manipulator, x, &self.targets, f, jac);
    }

    fn labels(&self) -> Vec<String> {
        labels()
    }
}

fn labels() -> Vec<String> {
    ["x", "y", "z"]
        .iter()
        .flat_map(|a| (1..=3).map(move |p| format!("{a}{p}")))
        .collect()
}

/// Legs swept from the design lengths to `target` with
/// `t = 1 − (1 − s)²` in squared lengths.
pub struct LegPath<'a> {
    pub manipulator: &'a Manipulator,
    pub start: [f64; 6],
    pub delta: [f64; 6],
}

impl<'a> LegPath<'a> {
    pub fn towards(manipulator: &'a Manipulator, target: &[f64]) -> Self {
        let start = manipulator.legs.map(|l| l * l);
        let end = manipulator.leg_squares(target);
        Self {
            delta: std::array::from_fn(|i| end[i] - start[i]),
            start,
            manipulator,
        }
    }

    pub fn t_of(s: f64) -> f64 {
        1.0 - (1.0 - s) * (1.0 - s)
    }
}

impl ParameterFamily for LegPath<'_> {
    fn dim(&self) -> usize {
        UNKNOWNS
    }

    fn degrees(&self) -> Vec<u32> {
        kinematics_degrees(self.manipulator)
    }

    fn evaluate<T: Scalar>(&self, x: &[T], s: f64, h: &mut [T], hx: Option<&mut DMatrix<T>>, ht: Option<&mut [T]>) {
        let t = Self::t_of(s);
        let targets = std::array::from_fn(|i| self.start[i] + t * self.delta[i]);
        kinematics_eval(self.manipulator, x, &targets, h, hx);
        if let Some(d) = ht {
            for (i, v) in d.iter_mut().enumerate() {
                *v = if i < 6 {
                    T::from_real(-self.delta[i] * 2.0 * (1.0 - s))
                } else {
                    T::zero()
                };
            }
        }
    }
}

/// A real assembly mode of the manipulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: Vec<f64>,
    pub below_base: bool,
    pub residual: f64,
}

/// All real platform poses for the design leg lengths, sorted with poses
/// above the base first.
pub fn direct_kinematics(m: &Manipulator, strategy: &Strategy, cfg: &TrackerConfig) -> Result<Vec<Pose>, SnapError> {
    let sys = KinematicsSystem::new(m);
    let set = match strategy {
        Strategy::TotalDegree => solve_total_degree(&sys, cfg)?,
        Strategy::Multistart(ms) => solve_multistart(&sys, ms, cfg),
    };
    let scale = m.legs.iter().sum::<f64>() / 6.0;
    let mut out: Vec<Pose> = Vec::new();
    for sol in &set.solutions {
        let Some(x) = &sol.real_point else { continue };
        if out.iter().any(|p| dist(&p.x, x) < 1e-8 * scale) {
            continue;
        }
        out.push(Pose {
            below_base: m.below_base(x),
            residual: sol.residual,
            x: x.clone(),
        });
    }
    out.sort_by(|a, b| a.below_base.cmp(&b.below_base).then(a.x[6].total_cmp(&b.x[6]).reverse()));
    Ok(out)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Distance in joint space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `Σ (L′² − L²)² / (8 L³)` over the total leg length.
    Relative,
    /// `Σ (L′² − L²)²`.
    Absolute,
}

impl Metric {
    pub fn weights(self, legs: &[f64; 6]) -> [f64; 6] {
        match self {
            Metric::Relative => {
                let total: f64 = legs.iter().sum();
                legs.map(|l| 1.0 / (8.0 * l.powi(3) * total))
            }
            Metric::Absolute => [1.0; 6],
        }
    }

    /// Metric value at deformed leg lengths.
    pub fn value(self, legs: &[f64; 6], deformed: &[f64; 6]) -> f64 {
        let w = self.weights(legs);
        (0..6).map(|i| w[i] * (deformed[i].powi(2) - legs[i].powi(2)).powi(2)).sum()
    }

    /// Per-leg contributions at a pose.
    pub fn leg_energies(self, m: &Manipulator, x: &[f64]) -> [f64; 6] {
        let w = self.weights(&m.legs);
        let q = m.leg_squares(x);
        std::array::from_fn(|i| w[i] * (q[i] - m.legs[i].powi(2)).powi(2))
    }

    pub fn at(self, m: &Manipulator, x: &[f64]) -> f64 {
        self.leg_energies(m, x).iter().sum()
    }
}

/// Stationarity of the metric under the side conditions, in `(x, η)`.
pub struct MetricSystem<'a> {
    pub manipulator: &'a Manipulator,
    pub metric: Metric,
}

impl MetricSystem<'_> {
    /// Metric gradient and optionally its Hessian.
    fn derivatives<T: Scalar>(&self, x: &[T], hessian: bool) -> (Vec<T>, Option<DMatrix<T>>) {
        let w = self.metric.weights(&self.manipulator.legs);
        let legs = self.manipulator.legs_with_derivatives(x, hessian);
        let mut g = vec![T::zero(); UNKNOWNS];
        let mut h = hessian.then(|| DMatrix::zeros(UNKNOWNS, UNKNOWNS));
        for (i, (r, gr, hr)) in legs.iter().enumerate() {
            let c = T::from_real(2.0 * w[i]);
            for k in 0..UNKNOWNS {
                g[k] += c * *r * gr[k];
            }
            if let (Some(h), Some(hr)) = (h.as_mut(), hr) {
                let gv = DVector::from_column_slice(gr);
                *h += (&gv * gv.transpose() + hr * *r) * c;
            }
        }
        (g, h)
    }

    /// Multipliers from the stationarity equations in the least-squares
    /// sense.
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        let (g, _) = self.derivatives(x, false);
        let (_, grads) = self.manipulator.side_conditions(x);
        let eta = grads
            .transpose()
            .svd(true, true)
            .solve(&DVector::from_vec(g), 1e-14)
            .unwrap_or_else(|_| DVector::zeros(3));
        let mut out = x.to_vec();
        out.extend(eta.iter());
        out
    }

    /// Hessian of the Lagrangian in `x`.
    pub fn lagrangian_hessian(&self, x: &[f64], eta: &[f64]) -> DMatrix<f64> {
        let (_, h) = self.derivatives(x, true);
        let mut h = h.expect("requested");
        for (k, t) in SIDES.iter().enumerate() {
            h -= side_hessian(t) * eta[k];
        }
        (&h + h.transpose()) * 0.5
    }
}

fn side_hessian(t: &[f64; 3]) -> DMatrix<f64> {
    DMatrix::from_fn(UNKNOWNS, UNKNOWNS, |k, l| {
        if k / 3 == l / 3 {
            2.0 * t[k % 3] * t[l % 3]
        } else {
            0.0
        }
    })
}

impl System for MetricSystem<'_> {
    fn dim(&self) -> usize {
        UNKNOWNS + 3
    }

    fn degrees(&self) -> Vec<u32> {
        let leg = if self.manipulator.zeta() { 4 } else { 2 };
        let mut d = vec![2 * leg - 1; UNKNOWNS];
        d.extend([2, 2, 2]);
        d
    }

    fn evaluate<T: Scalar>(&self, z: &[T], f: &mut [T], jac: Option<&mut DMatrix<T>>) {
        let (x, eta) = z.split_at(UNKNOWNS);
        let (g, h) = self.derivatives(x, jac.is_some());
        let (vals, grads) = self.manipulator.side_conditions(x);
        for k in 0..UNKNOWNS {
            let mut s = g[k];
            for c in 0..3 {
                s -= eta[c] * grads[(c, k)];
            }
            f[k] = s;
        }
        for c in 0..3 {
            f[UNKNOWNS + c] = vals[c];
        }
        if let Some(j) = jac {
            j.fill(T::zero());
            let mut h = h.expect("requested");
            for (c, t) in SIDES.iter().enumerate() {
                h -= side_hessian(t).map(T::from_real) * eta[c];
            }
            for r in 0..UNKNOWNS {
                for s in 0..UNKNOWNS {
                    j[(r, s)] = h[(r, s)];
                }
                for c in 0..3 {
                    j[(r, UNKNOWNS + c)] = -grads[(c, r)];
                    j[(UNKNOWNS + c, r)] = grads[(c, r)];
                }
            }
        }
    }

    fn labels(&self) -> Vec<String> {
        let mut l = labels();
        l.extend((1..=3).map(|k| format!("eta{k}")));
        l
    }
}

/// A critical pose of a joint-space metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCritical {
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
    pub value: f64,
    pub classification: Classification,
    pub line_complex: LineComplex,
    pub below_base: bool,
    pub residual: f64,
}

impl MetricCritical {
    pub fn shaky(&self) -> bool {
        self.line_complex.ratio < SHAKY_TOL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgSearch {
    /// Seeds on each segment between two poses.
    pub per_segment: usize,
    pub random_starts: usize,
    /// Perturbation radius relative to the mean leg length.
    pub radius: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Additional explicit seeds in the unknowns `x`.
    pub seeds: Vec<Vec<f64>>,
}

impl Default for SgSearch {
    fn default() -> Self {
        Self {
            per_segment: 40,
            random_starts: 400,
            radius: 0.05,
            max_iters: 100,
            seed: 23,
            seeds: Vec::new(),
        }
    }
}

/// Critical poses of the metric found by multistart, sorted by value.
pub fn metric_critical_points(
    m: &Manipulator,
    metric: Metric,
    poses: &[Pose],
    search: &SgSearch,
) -> Result<Vec<MetricCritical>, SnapError> {
    let sys = MetricSystem { manipulator: m, metric };
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut xs: Vec<Vec<f64>> = search.seeds.clone();
    for (i, a) in poses.iter().enumerate() {
        xs.push(a.x.clone());
        for b in &poses[i + 1..] {
            for k in 1..=search.per_segment {
                let t = k as f64 / (search.per_segment + 1) as f64;
                xs.push(a.x.iter().zip(&b.x).map(|(p, q)| p + t * (q - p)).collect());
            }
        }
    }
    let scale = m.legs.iter().sum::<f64>() / 6.0;
    let pool = xs.clone();
    if !pool.is_empty() {
        for _ in 0..search.random_starts {
            let c = &pool[rng.random_range(0..pool.len())];
            xs.push(c.iter().map(|v| v + search.radius * scale * rng.random_range(-1.0..1.0)).collect());
        }
    }
    let ms = MultistartConfig {
        random_starts: 0,
        center: Vec::new(),
        radius: 0.0,
        seeds: xs.iter().map(|x| sys.lift(x)).collect(),
        max_iters: search.max_iters,
    };
    let cfg = TrackerConfig {
        seed: search.seed,
        ..Default::default()
    };
    let set = solve_multistart(&sys, &ms, &cfg);
    let mut out: Vec<MetricCritical> = Vec::new();
    for sol in &set.solutions {
        let Some(z) = &sol.real_point else { continue };
        let (x, eta) = z.split_at(UNKNOWNS);
        if out.iter().any(|c| dist(&c.x, x) < 1e-8 * scale) {
            continue;
        }
        let Ok(line_complex) = m.line_complex(x) else { continue };
        let (_, grads) = m.side_conditions(x);
        let classification = classify_hessian(&sys.lagrangian_hessian(x, eta), &grads);
        out.push(MetricCritical {
            value: metric.at(m, x),
            below_base: m.below_base(x),
            x: x.to_vec(),
            eta: eta.to_vec(),
            classification,
            line_complex,
            residual: sol.residual,
        });
    }
    out.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(out)
}

/// Tracks the base pose along the leg path towards `target`.
pub fn track_pose(m: &Manipulator, metric: Metric, base: &[f64], target: &[f64], cfg: &TrackerConfig, tol: f64) -> PathReport {
    let path = LegPath::towards(m, target);
    let (status, raw, steps) = follow(&path, &to_complex(base), 0.0, &sample_stops(), cfg);
    let samples: Vec<(f64, Vec<f64>)> = raw
        .iter()
        .map(|(s, x)| (LegPath::t_of(*s), x.iter().map(|z| z.re).collect()))
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
    let energies: Vec<[f64; 6]> = samples.iter().map(|(_, x)| metric.leg_energies(m, x)).collect();
    let top = energies.iter().flatten().fold(0.0, |a: f64, &b| a.max(b.abs()));
    let monotone = energies
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| *b >= *a - 1e-9 * top));
    let deviation = dist(&endpoint, target);
    PathReport {
        status,
        reached: status == PathStatus::Converged && deviation <= tol,
        max_imaginary: raw
            .iter()
            .flat_map(|(_, x)| x.iter().map(|z| z.im.abs()))
            .fold(0.0, f64::max),
        monotone,
        endpoint,
        deviation,
        steps,
        samples,
    }
}

/// Joint-space singularity distance of one pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgResult {
    pub metric: Metric,
    pub base: Vec<f64>,
    pub value: Option<f64>,
    pub saddle: Option<MetricCritical>,
    pub path: Option<PathReport>,
    /// Shaky saddles tried, in increasing value.
    pub candidates: usize,
    pub base_shaky: bool,
    pub warnings: Vec<String>,
}

/// The lowest shaky saddle reached from `base` along a monotone leg path.
pub fn sg_singularity_distance(
    m: &Manipulator,
    base: &[f64],
    metric: Metric,
    critical: &[MetricCritical],
    cfg: &TrackerConfig,
    match_tol: f64,
) -> Result<SgResult, SnapError> {
    lowest_reached(m, base, metric, critical, cfg, match_tol, true)
}

/// The lowest saddle of any kind reached from `base` along a monotone leg path.
pub fn sg_snappability(
    m: &Manipulator,
    base: &[f64],
    metric: Metric,
    critical: &[MetricCritical],
    cfg: &TrackerConfig,
    match_tol: f64,
) -> Result<SgResult, SnapError> {
    lowest_reached(m, base, metric, critical, cfg, match_tol, false)
}

fn lowest_reached(
    m: &Manipulator,
    base: &[f64],
    metric: Metric,
    critical: &[MetricCritical],
    cfg: &TrackerConfig,
    match_tol: f64,
    shaky_only: bool,
) -> Result<SgResult, SnapError> {
    let base_shaky = m.line_complex(base)?.ratio < SHAKY_TOL;
    let mut result = SgResult {
        metric,
        base: base.to_vec(),
        value: None,
        saddle: None,
        path: None,
        candidates: 0,
        base_shaky,
        warnings: Vec::new(),
    };
    if base_shaky && shaky_only {
        result.value = Some(0.0);
        return Ok(result);
    }
    let tol = match_tol * m.legs.iter().sum::<f64>() / 6.0;
    for c in critical.iter().filter(|c| c.classification.kind == Kind::Saddle) {
        if shaky_only && !c.shaky() {
            result.warnings.push(format!("saddle at {:.6e} is not shaky", c.value));
            continue;
        }
        result.candidates += 1;
        let report = track_pose(m, metric, base, &c.x, cfg, tol);
        if report.reached && report.monotone {
            result.value = Some(c.value);
            result.saddle = Some(c.clone());
            result.path = Some(report);
            return Ok(result);
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn sg() -> Manipulator {
        Manipulator::from_json(fixtures::STEWART_GOUGH).unwrap()
    }

    #[test]
    fn reconstruct_reproduces_design_and_is_planar() {
        let m = sg();
        let tri = [[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.3, 1.5, 0.0]];
        let rest = m.reconstruct(&tri).unwrap();
        let x = Manipulator::pack(&tri);
        let anchors = m.anchors(&x);
        for j in 0..3 {
            assert_eq!(anchors[j + 3], rest[j]);
            assert_eq!(rest[j][2], 0.0);
        }
        assert!(reconstruct_platform(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], &m.affine).is_err());
    }

    #[test]
    fn derivatives_match_differences() {
        let mut m = sg();
        m.affine[1][2] = 0.7;
        let sys = MetricSystem {
            manipulator: &m,
            metric: Metric::Relative,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut f = vec![0.0; 12];
        let mut j = DMatrix::zeros(12, 12);
        sys.evaluate(&z, &mut f, Some(&mut j));
        let h = 1e-6;
        for c in 0..12 {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[c] += h;
            zm[c] -= h;
            let (mut fp, mut fm) = (vec![0.0; 12], vec![0.0; 12]);
            sys.evaluate(&zp, &mut fp, None);
            sys.evaluate(&zm, &mut fm, None);
            for r in 0..12 {
                let d = (fp[r] - fm[r]) / (2.0 * h);
                assert!((d - j[(r, c)]).abs() < 1e-6 * (1.0 + d.abs()), "({r},{c})");
            }
        }
    }

    #[test]
    fn metrics_are_even_in_length_change() {
        let legs = [1.0, 2.0, 1.5, 1.2, 0.8, 1.1];
        for metric in [Metric::Relative, Metric::Absolute] {
            assert_eq!(metric.value(&legs, &legs), 0.0);
            let up = legs.map(|l| l * 1.01);
            assert!(metric.value(&legs, &up) > 0.0);
        }
    }
}
