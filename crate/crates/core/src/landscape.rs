//! The energy density as a polynomial in the free coordinates of a
//! parameterized realization.

use nalgebra::DMatrix;
use polysolve::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elasticity::cayley_menger_volume;
use crate::energy::{needs_isochoric, DensityFunction, DensityMode};
use crate::error::ModelError;
use crate::framework::{AffineExpr, BodyKind, Framework, Parameterization};

/// Squared length of an edge as a sum of squared affine differences.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePoly {
    pub diffs: Vec<AffineExpr>,
}

fn affine_sub(a: &AffineExpr, b: &AffineExpr) -> AffineExpr {
    let mut terms: Vec<(usize, f64)> = a.terms.clone();
    for &(k, c) in &b.terms {
        match terms.iter_mut().find(|t| t.0 == k) {
            Some(t) => t.1 -= c,
            None => terms.push((k, -c)),
        }
    }
    terms.retain(|t| t.1 != 0.0);
    terms.sort_by_key(|t| t.0);
    AffineExpr {
        constant: a.constant - b.constant,
        terms,
    }
}

impl EdgePoly {
    pub fn between(p: &Parameterization, a: usize, b: usize) -> Self {
        Self {
            diffs: p.coords[a].iter().zip(&p.coords[b]).map(|(x, y)| affine_sub(x, y)).collect(),
        }
    }

    pub fn value<T: Scalar>(&self, theta: &[T]) -> T {
        let mut s = T::zero();
        for d in &self.diffs {
            let v = d.eval(theta);
            s += v * v;
        }
        s
    }

    /// Adds `scale · ∇Q` to `row`.
    pub fn add_gradient<T: Scalar>(&self, theta: &[T], scale: T, row: &mut [T]) {
        for d in &self.diffs {
            let v = d.eval(theta) * scale * T::from_real(2.0);
            for &(k, a) in &d.terms {
                row[k] += v * T::from_real(a);
            }
        }
    }

    /// Constant Hessian `2 Σ ∇d ∇dᵀ`.
    pub fn hessian(&self, m: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(m, m);
        for d in &self.diffs {
            for &(k, a) in &d.terms {
                for &(l, b) in &d.terms {
                    h[(k, l)] += 2.0 * a * b;
                }
            }
        }
        h
    }

    /// Dense `(c, b, A)` with `Q = c + bᵀθ + θᵀAθ`.
    fn coefficients(&self, m: usize) -> (f64, Vec<f64>, DMatrix<f64>) {
        let mut c = 0.0;
        let mut b = vec![0.0; m];
        let mut a = DMatrix::zeros(m, m);
        for d in &self.diffs {
            c += d.constant * d.constant;
            for &(k, x) in &d.terms {
                b[k] += 2.0 * d.constant * x;
                for &(l, y) in &d.terms {
                    a[(k, l)] += x * y;
                }
            }
        }
        (c, b, a)
    }
}

/// Edges sharing one squared-length polynomial and one undeformed length.
#[derive(Clone, Debug)]
pub struct EdgeClass {
    pub edges: Vec<usize>,
    pub poly: EdgePoly,
    /// Undeformed squared length.
    pub q0: f64,
    pub hessian: DMatrix<f64>,
}

/// `Vol'(T) = target` for the oriented volume of a tetrahedron.
#[derive(Clone, Debug)]
pub struct VolumeConstraint {
    pub body: usize,
    /// Bodies whose oriented volume this constraint stands for.
    pub bodies: Vec<(usize, [usize; 4])>,
    pub vertices: [usize; 4],
    /// Column `j` of the edge matrix `v_{j+1} − v_0`, one affine form per axis.
    columns: [[AffineExpr; 3]; 3],
    pub target: f64,
}

fn cross<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl VolumeConstraint {
    fn columns_at<T: Scalar>(&self, theta: &[T]) -> [[T; 3]; 3] {
        self.columns.clone().map(|c| c.map(|a| a.eval(theta)))
    }

    fn column_derivative<T: Scalar>(&self, j: usize, k: usize) -> [T; 3] {
        let mut out = [T::zero(); 3];
        for (axis, a) in self.columns[j].iter().enumerate() {
            for &(idx, c) in &a.terms {
                if idx == k {
                    out[axis] = T::from_real(c);
                }
            }
        }
        out
    }

    /// Constraint value, gradient and Hessian.
    pub fn evaluate<T: Scalar>(&self, theta: &[T], grad: Option<&mut [T]>, hess: Option<&mut DMatrix<T>>) -> T {
        let c = self.columns_at(theta);
        let sixth = T::from_real(1.0 / 6.0);
        let value = dot(&cross(&c[0], &c[1]), &c[2]) * sixth - T::from_real(self.target);
        let m = theta.len();
        let triple = |a: &[T; 3], b: &[T; 3], d: &[T; 3]| dot(&cross(a, b), d);
        if let Some(g) = grad {
            for k in 0..m {
                let d: [[T; 3]; 3] = [0, 1, 2].map(|j| self.column_derivative(j, k));
                g[k] = (triple(&d[0], &c[1], &c[2]) + triple(&c[0], &d[1], &c[2]) + triple(&c[0], &c[1], &d[2]))
                    * sixth;
            }
        }
        if let Some(h) = hess {
            let ds: Vec<[[T; 3]; 3]> = (0..m).map(|k| [0, 1, 2].map(|j| self.column_derivative(j, k))).collect();
            for k in 0..m {
                for l in 0..m {
                    let (a, b) = (&ds[k], &ds[l]);
                    h[(k, l)] = (triple(&a[0], &b[1], &c[2])
                        + triple(&b[0], &a[1], &c[2])
                        + triple(&a[0], &c[1], &b[2])
                        + triple(&b[0], &c[1], &a[2])
                        + triple(&c[0], &a[1], &b[2])
                        + triple(&c[0], &b[1], &a[2]))
                        * sixth;
                }
            }
        }
        value
    }
}

/// The density and its constraints in parameter space.
#[derive(Clone, Debug)]
pub struct Landscape {
    pub parameterization: Parameterization,
    pub dimension: usize,
    pub edge_polys: Vec<EdgePoly>,
    pub classes: Vec<EdgeClass>,
    /// Class of each expanded edge.
    pub edge_class: Vec<usize>,
    /// Hessian of `u` in squared class lengths.
    pub class_hessian: DMatrix<f64>,
    /// Hessian of `u` in squared edge lengths.
    pub edge_hessian: DMatrix<f64>,
    pub lengths: Vec<f64>,
    pub constraints: Vec<VolumeConstraint>,
    pub density: DensityFunction,
    /// Edge endpoints of the expansion.
    pub endpoints: Vec<(usize, usize)>,
}

/// Values produced by [`Landscape::evaluate`].
pub struct Evaluation<T: Scalar> {
    pub value: T,
    pub gradient: Vec<T>,
    pub hessian: Option<DMatrix<T>>,
    /// `∂u/∂Q_c` per class.
    pub class_gradient: Vec<T>,
}

impl Landscape {
    /// Builds the landscape; `reference` fixes the orientation of isochoric
    /// volume constraints.
    pub fn new(fw: &Framework, mode: DensityMode, reference: Option<&[f64]>) -> Result<Self, ModelError> {
        let density = DensityFunction::new(fw, mode)?;
        Self::from_density(fw, density, reference)
    }

    pub fn from_density(fw: &Framework, density: DensityFunction, reference: Option<&[f64]>) -> Result<Self, ModelError> {
        let p = fw.parameterization.clone();
        let m = p.len();
        let bj = &fw.expanded;
        let edge_polys: Vec<EdgePoly> = bj.edges.iter().map(|e| EdgePoly::between(&p, e.a, e.b)).collect();
        // Group edges by polynomial and length.
        let coeffs: Vec<_> = edge_polys.iter().map(|e| e.coefficients(m)).collect();
        let mut classes: Vec<EdgeClass> = Vec::new();
        let mut edge_class = vec![0; bj.edges.len()];
        for (e, poly) in edge_polys.iter().enumerate() {
            let q0 = bj.lengths[e].powi(2);
            let (c, b, a) = &coeffs[e];
            let found = classes.iter().position(|cl| {
                let (c2, b2, a2) = &coeffs[cl.edges[0]];
                let tol = 1e-12 * (1.0 + c.abs());
                (cl.q0 - q0).abs() <= 1e-12 * q0
                    && (c - c2).abs() <= tol
                    && b.iter().zip(b2).all(|(x, y)| (x - y).abs() <= tol)
                    && (a - a2).abs().max() <= tol
            });
            match found {
                Some(i) => {
                    classes[i].edges.push(e);
                    edge_class[e] = i;
                }
                None => {
                    edge_class[e] = classes.len();
                    classes.push(EdgeClass {
                        edges: vec![e],
                        poly: poly.clone(),
                        q0,
                        hessian: poly.hessian(m),
                    });
                }
            }
        }
        let edge_hessian = density.squared_length_hessian();
        let nc = classes.len();
        let mut class_hessian = DMatrix::zeros(nc, nc);
        for (e, &ce) in edge_class.iter().enumerate() {
            for (f, &cf) in edge_class.iter().enumerate() {
                class_hessian[(ce, cf)] += edge_hessian[(e, f)];
            }
        }
        let mut out = Self {
            parameterization: p,
            dimension: fw.dimension,
            edge_polys,
            classes,
            edge_class,
            class_hessian,
            edge_hessian,
            lengths: bj.lengths.clone(),
            constraints: Vec::new(),
            density,
            endpoints: bj.edges.iter().map(|e| (e.a, e.b)).collect(),
        };
        if needs_isochoric(fw) {
            out.constraints = out.isochoric_constraints(fw, reference)?;
        }
        Ok(out)
    }

    fn isochoric_constraints(&self, fw: &Framework, reference: Option<&[f64]>) -> Result<Vec<VolumeConstraint>, ModelError> {
        let p = &self.parameterization;
        let mut out: Vec<VolumeConstraint> = Vec::new();
        for (bi, body) in fw.bodies.iter().enumerate() {
            if body.kind != BodyKind::Polyhedron {
                continue;
            }
            // Representative: the largest simplex by intrinsic volume.
            let vol = |s: &Vec<usize>| {
                let l = |i: usize, j: usize| {
                    let k = fw.expanded.edge_index(s[i], s[j]).unwrap();
                    fw.expanded.lengths[k].powi(2)
                };
                cayley_menger_volume(&[l(0, 1), l(0, 2), l(0, 3), l(1, 2), l(1, 3), l(2, 3)]).unwrap_or(0.0)
            };
            let s = body
                .simplices
                .iter()
                .max_by(|a, b| vol(a).total_cmp(&vol(b)))
                .expect("body has simplices");
            let v = [s[0], s[1], s[2], s[3]];
            let columns = [1, 2, 3].map(|j| {
                [0, 1, 2].map(|axis| affine_sub(&p.coords[v[j]][axis], &p.coords[v[0]][axis]))
            });
            let mut c = VolumeConstraint {
                body: bi,
                bodies: vec![(bi, v)],
                vertices: v,
                columns,
                target: 0.0,
            };
            let magnitude = vol(s);
            let sign = match reference {
                Some(theta) => {
                    let signed = c.evaluate::<f64>(theta, None, None);
                    if signed < 0.0 {
                        -1.0
                    } else {
                        1.0
                    }
                }
                None => 1.0,
            };
            c.target = sign * magnitude;
            out.push(c);
        }
        // Symmetric images give identical constraints.
        let m = p.len();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let probes: Vec<Vec<f64>> = (0..3).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut unique: Vec<VolumeConstraint> = Vec::new();
        for c in out {
            let dup = unique.iter().position(|u| {
                probes.iter().all(|t| {
                    (u.evaluate::<f64>(t, None, None) - c.evaluate::<f64>(t, None, None)).abs() < 1e-9
                })
            });
            match dup {
                Some(i) => unique[i].bodies.extend(c.bodies),
                None => unique.push(c),
            }
        }
        Ok(unique)
    }

    pub fn num_params(&self) -> usize {
        self.parameterization.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn mean_length(&self) -> f64 {
        self.lengths.iter().sum::<f64>() / self.lengths.len() as f64
    }

    /// Squared class lengths at `theta`.
    pub fn class_squares<T: Scalar>(&self, theta: &[T]) -> Vec<T> {
        self.classes.iter().map(|c| c.poly.value(theta)).collect()
    }

    /// Jacobian of the squared class lengths (one row per class).
    pub fn class_jacobian<T: Scalar>(&self, theta: &[T]) -> DMatrix<T> {
        let m = theta.len();
        let mut j = DMatrix::zeros(self.classes.len(), m);
        let mut row = vec![T::zero(); m];
        for (c, cl) in self.classes.iter().enumerate() {
            row.iter_mut().for_each(|r| *r = T::zero());
            cl.poly.add_gradient(theta, T::one(), &mut row);
            for k in 0..m {
                j[(c, k)] = row[k];
            }
        }
        j
    }

    /// Density, gradient and optionally the Hessian at `theta`.
    pub fn evaluate<T: Scalar>(&self, theta: &[T], with_hessian: bool) -> Evaluation<T> {
        let m = theta.len();
        let nc = self.classes.len();
        let delta: Vec<T> = self
            .classes
            .iter()
            .map(|c| c.poly.value(theta) - T::from_real(c.q0))
            .collect();
        let mut g = vec![T::zero(); nc];
        for a in 0..nc {
            let mut s = T::zero();
            for b in 0..nc {
                let h = self.class_hessian[(a, b)];
                if h != 0.0 {
                    s += delta[b] * T::from_real(h);
                }
            }
            g[a] = s;
        }
        let mut value = T::zero();
        for a in 0..nc {
            value += delta[a] * g[a];
        }
        value *= T::from_real(0.5);
        let mut gradient = vec![T::zero(); m];
        for (c, cl) in self.classes.iter().enumerate() {
            cl.poly.add_gradient(theta, g[c], &mut gradient);
        }
        let hessian = with_hessian.then(|| {
            let j = self.class_jacobian(theta);
            let hc = self.class_hessian.map(T::from_real);
            let mut h = j.transpose() * hc * &j;
            for (c, cl) in self.classes.iter().enumerate() {
                for k in 0..m {
                    for l in 0..m {
                        let v = cl.hessian[(k, l)];
                        if v != 0.0 {
                            h[(k, l)] += g[c] * T::from_real(v);
                        }
                    }
                }
            }
            h
        });
        Evaluation {
            value,
            gradient,
            hessian,
            class_gradient: g,
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta, false).value
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.evaluate(theta, false).gradient
    }

    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        self.evaluate(theta, true).hessian.expect("requested")
    }

    pub fn positions(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        self.parameterization.positions_f64(theta)
    }

    /// Deformed edge lengths of the expansion.
    pub fn edge_lengths(&self, theta: &[f64]) -> Vec<f64> {
        self.edge_polys.iter().map(|e| e.value(theta).max(0.0).sqrt()).collect()
    }

    /// `∂u/∂Q_e` per expanded edge.
    pub fn edge_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let delta: Vec<f64> = self
            .edge_polys
            .iter()
            .zip(&self.lengths)
            .map(|(p, l)| p.value(theta) - l * l)
            .collect();
        (0..delta.len())
            .map(|e| (0..delta.len()).map(|f| self.edge_hessian[(e, f)] * delta[f]).sum())
            .collect()
    }

    /// Constraint values, gradients (rows) and Hessians.
    pub fn constraint_data<T: Scalar>(&self, theta: &[T], with_hessian: bool) -> (Vec<T>, DMatrix<T>, Vec<DMatrix<T>>) {
        let m = theta.len();
        let k = self.constraints.len();
        let mut vals = Vec::with_capacity(k);
        let mut grads = DMatrix::zeros(k, m);
        let mut hs = Vec::new();
        let mut g = vec![T::zero(); m];
        for (i, c) in self.constraints.iter().enumerate() {
            let mut h = DMatrix::zeros(m, m);
            vals.push(c.evaluate(theta, Some(&mut g), with_hessian.then_some(&mut h)));
            for j in 0..m {
                grads[(i, j)] = g[j];
            }
            if with_hessian {
                hs.push(h);
            }
        }
        (vals, grads, hs)
    }

    /// Shortest deformed edge relative to the mean undeformed length.
    pub fn min_relative_length(&self, theta: &[f64]) -> f64 {
        self.edge_lengths(theta).into_iter().fold(f64::INFINITY, f64::min) / self.mean_length()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::framework::FrameworkFile;

    pub(crate) fn quad() -> Framework {
        let f = FrameworkFile::from_json(
            r#"{"dimension": 2, "joints": ["A","B","C","D"],
                "bars": [["A","B"],["A","C"],["A","D"],["B","C"],["B","D"],["C","D"]],
                "lengths": {"A-B": 6, "A-C": "sqrt(17)", "A-D": "sqrt(5)", "B-C": "sqrt(5)",
                            "B-D": "sqrt(17)", "C-D": "sqrt(8)"},
                "parameterization": {"params": ["x1","x2","y2","x3","y3"],
                    "coordinates": {"A": ["-x1", "0"], "B": ["x1", "0"], "C": ["x2", "y2"], "D": ["x3", "y3"]},
                    "positive": ["x1"]}}"#,
        )
        .unwrap();
        Framework::from_file(f).unwrap()
    }

    fn fd_gradient(ls: &Landscape, t: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..t.len())
            .map(|k| {
                let mut a = t.to_vec();
                let mut b = t.to_vec();
                a[k] += h;
                b[k] -= h;
                (ls.value(&a) - ls.value(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn undeformed_is_zero_and_critical() {
        let fw = quad();
        let ls = Landscape::new(&fw, DensityMode::Full, None).unwrap();
        assert_eq!(ls.num_classes(), 6);
        let v1 = [3.0, 1.0, 1.0, -1.0, -1.0];
        assert!(ls.value(&v1).abs() < 1e-28);
        assert!(ls.gradient(&v1).iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn gradient_and_hessian_match_differences() {
        let fw = quad();
        let ls = Landscape::new(&fw, DensityMode::Full, None).unwrap();
        let t = [2.9, 1.2, 1.3, -1.1, 0.6];
        let g = ls.gradient(&t);
        let fd = fd_gradient(&ls, &t);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7 * (1.0 + a.abs()));
        }
        let h = ls.hessian(&t);
        let eps = 1e-6;
        for k in 0..5 {
            let mut a = t.to_vec();
            let mut b = t.to_vec();
            a[k] += eps;
            b[k] -= eps;
            let (ga, gb) = (ls.gradient(&a), ls.gradient(&b));
            for l in 0..5 {
                assert!((h[(l, k)] - (ga[l] - gb[l]) / (2.0 * eps)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn complex_evaluation_agrees_on_reals() {
        let fw = quad();
        let ls = Landscape::new(&fw, DensityMode::Full, None).unwrap();
        let t = [2.9, 1.2, 1.3, -1.1, 0.6];
        let tc: Vec<polysolve::C64> = t.iter().map(|&x| x.into()).collect();
        let ec = ls.evaluate(&tc, true);
        let er = ls.evaluate(&t, true);
        assert!((ec.value.re - er.value).abs() < 1e-15);
        assert!((ec.hessian.unwrap().map(|z| z.re) - er.hessian.unwrap()).abs().max() < 1e-13);
    }
}
