//! Rigidity matrices, shakiness, self-stresses and line-geometry tests.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::framework::Framework;
use crate::landscape::Landscape;

/// Default relative singular-value threshold.
pub const SHAKY_TOL: f64 = 1e-8;

/// Origin of a column of the rigidity matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    /// Squared-distance constraint of an expanded edge.
    Bar(usize),
    /// Linear constraint fixing one coordinate direction of a vertex.
    Pin { vertex: usize, axis: usize },
}

/// `wd × n` matrix whose columns are the constraint gradients.
#[derive(Clone, Debug)]
pub struct RigidityMatrix {
    pub matrix: DMatrix<f64>,
    pub columns: Vec<Column>,
    pub dimension: usize,
    pub vertices: usize,
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit vectors spanning the directions that pin the frame at three anchors.
fn pin_directions(coords: &[Vec<f64>], d: usize) -> Vec<(usize, Vec<f64>)> {
    let n = coords.len();
    let mut out = Vec::new();
    let a = 0;
    for axis in 0..d {
        let mut e = vec![0.0; d];
        e[axis] = 1.0;
        out.push((a, e));
    }
    if n < 2 {
        return out;
    }
    let b = (1..n)
        .max_by(|&i, &j| norm(&sub(&coords[i], &coords[a])).total_cmp(&norm(&sub(&coords[j], &coords[a]))))
        .unwrap();
    let ab = sub(&coords[b], &coords[a]);
    let lab = norm(&ab);
    let t: Vec<f64> = if lab > 0.0 {
        ab.iter().map(|x| x / lab).collect()
    } else {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    };
    // Orthonormal complement of the a-b direction.
    let mut perps: Vec<Vec<f64>> = Vec::new();
    for axis in 0..d {
        let mut w = vec![0.0; d];
        w[axis] = 1.0;
        for u in std::iter::once(&t).chain(perps.iter()) {
            let p: f64 = w.iter().zip(u).map(|(x, y)| x * y).sum();
            w.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        let nw = norm(&w);
        if nw > 1e-6 {
            perps.push(w.iter().map(|x| x / nw).collect());
        }
        if perps.len() == d - 1 {
            break;
        }
    }
    if d == 2 {
        out.push((b, perps[0].clone()));
        return out;
    }
    let dist_to_line = |i: usize| {
        let v = sub(&coords[i], &coords[a]);
        let p: f64 = v.iter().zip(&t).map(|(x, y)| x * y).sum();
        norm(&v.iter().zip(&t).map(|(x, y)| x - p * y).collect::<Vec<_>>())
    };
    for p in perps {
        out.push((b, p));
    }
    let c = (1..n).filter(|&i| i != b).max_by(|&i, &j| dist_to_line(i).total_cmp(&dist_to_line(j)));
    if let Some(c) = c.filter(|&c| dist_to_line(c) > 0.0) {
        let u = Vector3::from_row_slice(&ab);
        let w = Vector3::from_row_slice(&sub(&coords[c], &coords[a]));
        out.push((c, u.cross(&w).normalize().as_slice().to_vec()));
    }
    out
}

impl RigidityMatrix {
    /// Builds the matrix of a bar-joint structure given by edge endpoints.
    pub fn from_edges(dimension: usize, endpoints: &[(usize, usize)], coords: &[Vec<f64>]) -> Self {
        let d = dimension;
        let w = coords.len();
        let scale = if endpoints.is_empty() {
            1.0
        } else {
            endpoints.iter().map(|&(a, b)| norm(&sub(&coords[a], &coords[b]))).sum::<f64>() / endpoints.len() as f64
        };
        let pins = pin_directions(coords, d);
        let mut m = DMatrix::zeros(w * d, endpoints.len() + pins.len());
        let mut columns = Vec::new();
        for (k, &(a, b)) in endpoints.iter().enumerate() {
            for axis in 0..d {
                let diff = coords[a][axis] - coords[b][axis];
                m[(a * d + axis, k)] = diff;
                m[(b * d + axis, k)] = -diff;
            }
            columns.push(Column::Bar(k));
        }
        for (j, (v, dir)) in pins.iter().enumerate() {
            let col = endpoints.len() + j;
            for axis in 0..d {
                m[(v * d + axis, col)] = scale * dir[axis];
            }
            let axis = dir.iter().map(|x| x.abs()).enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
            columns.push(Column::Pin { vertex: *v, axis });
        }
        Self {
            matrix: m,
            columns,
            dimension: d,
            vertices: w,
        }
    }

    pub fn of_framework(fw: &Framework, coords: &[Vec<f64>]) -> Result<Self, ModelError> {
        if coords.len() != fw.expanded.vertices.len() || coords.iter().any(|c| c.len() != fw.dimension) {
            return Err(ModelError::Mismatch { expected: fw.expanded.vertices.len() * fw.dimension, got: coords.iter().map(Vec::len).sum() });
        }
        let ends: Vec<(usize, usize)> = fw.expanded.edges.iter().map(|e| (e.a, e.b)).collect();
        Ok(Self::from_edges(fw.dimension, &ends, coords))
    }

    pub fn of_landscape(ls: &Landscape, theta: &[f64]) -> Self {
        Self::from_edges(ls.dimension, &ls.endpoints, &ls.positions(theta))
    }

    /// Singular values in decreasing order.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.matrix.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// `σ_{wd} / σ_1`, zero when there are fewer constraints than coordinates.
    pub fn shakiness_ratio(&self) -> f64 {
        rank_ratio(&self.singular_values(), self.matrix.nrows())
    }

    pub fn rank(&self, tol: f64) -> usize {
        numeric_rank(&self.singular_values(), tol)
    }
}

fn rank_ratio(s: &[f64], needed: usize) -> f64 {
    if needed == 0 {
        return 1.0;
    }
    if s.len() < needed || s[0] == 0.0 {
        return 0.0;
    }
    s[needed - 1] / s[0]
}

fn numeric_rank(s: &[f64], tol: f64) -> usize {
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&x| x > tol * top).count(),
        _ => 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shakiness {
    pub shaky: bool,
    /// Smallest relevant singular value over the largest.
    pub ratio: f64,
}

impl Shakiness {
    fn from_ratio(ratio: f64, tol: f64) -> Self {
        Self {
            shaky: ratio < tol,
            ratio,
        }
    }
}

pub fn is_shaky(fw: &Framework, coords: &[Vec<f64>], tol: f64) -> Result<Shakiness, ModelError> {
    Ok(Shakiness::from_ratio(RigidityMatrix::of_framework(fw, coords)?.shakiness_ratio(), tol))
}

/// Shakiness of the realization `theta` of a landscape.
pub fn landscape_shakiness(ls: &Landscape, theta: &[f64], tol: f64) -> Shakiness {
    Shakiness::from_ratio(RigidityMatrix::of_landscape(ls, theta).shakiness_ratio(), tol)
}

/// Rigidity matrix in the free coordinates: one column per edge class.
pub fn reduced_matrix(ls: &Landscape, theta: &[f64]) -> DMatrix<f64> {
    ls.class_jacobian(theta).transpose()
}

/// Shakiness of the reduced matrix (flexes compatible with the
/// parameterization only).
pub fn reduced_shakiness(ls: &Landscape, theta: &[f64], tol: f64) -> Shakiness {
    let r = reduced_matrix(ls, theta);
    let mut s: Vec<f64> = r.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Shakiness::from_ratio(rank_ratio(&s, r.nrows()), tol)
}

/// Numeric generator of the shakiness ideal in the free coordinates.
///
/// Square reduced matrices use `det R`; overbraced ones use `det(R Rᵀ)`.
pub struct ShakinessGenerator<'a> {
    pub landscape: &'a Landscape,
}

impl ShakinessGenerator<'_> {
    pub fn is_square(&self) -> bool {
        self.landscape.num_params() == self.landscape.num_classes()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let r = reduced_matrix(self.landscape, theta);
        if self.is_square() {
            r.determinant()
        } else {
            (&r * r.transpose()).determinant()
        }
    }
}

/// Edge stress coefficients and their equilibrium residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfStress {
    /// One coefficient per expanded edge.
    pub omega: Vec<f64>,
    /// `max_i ‖Σ_j ω_ij (v_i − v_j)‖`.
    pub residual: f64,
    /// `residual / (‖ω‖∞ · mean edge length)`, zero for a zero stress.
    pub relative_residual: f64,
}

impl SelfStress {
    pub fn max_abs(&self) -> f64 {
        self.omega.iter().fold(0.0, |a, w| a.max(w.abs()))
    }

    /// Non-zero against `1e-8 × scale`.
    pub fn is_nonzero(&self, scale: f64) -> bool {
        self.max_abs() > 1e-8 * scale
    }
}

/// Evaluates the vertex equilibrium equations for a stress.
pub fn equilibrium(dimension: usize, endpoints: &[(usize, usize)], coords: &[Vec<f64>], omega: &[f64]) -> SelfStress {
    let mut force = vec![vec![0.0; dimension]; coords.len()];
    for (&(a, b), &w) in endpoints.iter().zip(omega) {
        for axis in 0..dimension {
            let diff = coords[a][axis] - coords[b][axis];
            force[a][axis] += w * diff;
            force[b][axis] -= w * diff;
        }
    }
    let residual = force.iter().map(|f| norm(f)).fold(0.0, f64::max);
    let scale = if endpoints.is_empty() {
        1.0
    } else {
        endpoints.iter().map(|&(a, b)| norm(&sub(&coords[a], &coords[b]))).sum::<f64>() / endpoints.len() as f64
    };
    let wmax = omega.iter().fold(0.0, |a: f64, w| a.max(w.abs()));
    SelfStress {
        omega: omega.to_vec(),
        residual,
        relative_residual: if wmax > 0.0 { residual / (wmax * scale) } else { 0.0 },
    }
}

/// Basis of the self-stresses of a realization (null space of the bar
/// columns).
pub fn self_stresses(fw: &Framework, coords: &[Vec<f64>], tol: f64) -> Result<Vec<SelfStress>, ModelError> {
    let r = RigidityMatrix::of_framework(fw, coords)?;
    let b = fw.expanded.edges.len();
    let bars = r.matrix.columns(0, b).into_owned();
    let ends: Vec<(usize, usize)> = fw.expanded.edges.iter().map(|e| (e.a, e.b)).collect();
    let basis = null_space(&bars, tol);
    Ok(basis
        .iter()
        .map(|w| equilibrium(fw.dimension, &ends, coords, w.as_slice()))
        .collect())
}

/// Right null space of `a` via the SVD of `aᵀa`.
pub fn null_space(a: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let n = a.ncols();
    if n == 0 {
        return Vec::new();
    }
    let ata = a.transpose() * a;
    let eig = ata.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let mut out = Vec::new();
    for i in 0..n {
        if eig.eigenvalues[i].abs() <= tol * tol * top.max(f64::MIN_POSITIVE) {
            out.push(eig.eigenvectors.column(i).into_owned());
        }
    }
    out
}

/// Gradient of `det[v1−v0, v2−v0, v3−v0]/6` with respect to the four vertices.
fn tetra_volume_gradient(p: &[Vector3<f64>; 4]) -> [Vector3<f64>; 4] {
    let (a, b, c) = (p[1] - p[0], p[2] - p[0], p[3] - p[0]);
    let g1 = b.cross(&c) / 6.0;
    let g2 = c.cross(&a) / 6.0;
    let g3 = a.cross(&b) / 6.0;
    [-(g1 + g2 + g3), g1, g2, g3]
}

/// Coefficients `c_e` with `∇Vol = Σ c_e ∇(L_e²)` over the six tetra edges,
/// keyed by the expanded edge index.
fn volume_edge_coefficients(ls: &Landscape, coords: &[Vec<f64>], v: [usize; 4]) -> Vec<(usize, f64)> {
    let p = v.map(|i| Vector3::from_row_slice(&coords[i]));
    let g = tetra_volume_gradient(&p);
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let mut a = DMatrix::zeros(12, 6);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let d = p[i] - p[j];
        for axis in 0..3 {
            a[(3 * i + axis, k)] = 2.0 * d[axis];
            a[(3 * j + axis, k)] = -2.0 * d[axis];
        }
    }
    let rhs = DVector::from_iterator(12, g.iter().flat_map(|x| x.iter().copied()));
    let coef = a.svd(true, true).solve(&rhs, 1e-14).unwrap_or_else(|_| DVector::zeros(6));
    pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let e = ls
                .endpoints
                .iter()
                .position(|&(x, y)| (x, y) == (v[i], v[j]) || (x, y) == (v[j], v[i]))
                .expect("tetra edge in expansion");
            (e, coef[k])
        })
        .collect()
}

/// Least-squares multipliers with `∇u = Σ λ ∇f` at `theta`.
pub fn multipliers(ls: &Landscape, theta: &[f64]) -> Vec<f64> {
    if ls.constraints.is_empty() {
        return Vec::new();
    }
    let (_, grads, _) = ls.constraint_data(theta, false);
    let g = DVector::from_vec(ls.gradient(theta));
    let a = grads.transpose();
    match a.svd(true, true).solve(&g, 1e-14) {
        Ok(l) => l.as_slice().to_vec(),
        Err(_) => vec![0.0; ls.constraints.len()],
    }
}

/// The stress carried by a critical point of the density: `ω = 2 ∂u/∂(L²)`
/// with volume multipliers spread over the edges of each constrained
/// tetrahedron.
pub fn energy_self_stress(ls: &Landscape, theta: &[f64]) -> SelfStress {
    let coords = ls.positions(theta);
    let mut omega: Vec<f64> = ls.edge_gradient(theta).iter().map(|g| 2.0 * g).collect();
    let lambda = multipliers(ls, theta);
    for (c, &l) in ls.constraints.iter().zip(&lambda) {
        let share = l / c.bodies.len() as f64;
        for &(_, v) in &c.bodies {
            // The constraint is written in the representative's orientation.
            let p = v.map(|i| Vector3::from_row_slice(&coords[i]));
            let rep = c.vertices.map(|i| Vector3::from_row_slice(&coords[i]));
            let vol = |q: &[Vector3<f64>; 4]| (q[1] - q[0]).cross(&(q[2] - q[0])).dot(&(q[3] - q[0]));
            let sign = if vol(&p) * vol(&rep) < 0.0 { -1.0 } else { 1.0 };
            for (e, coef) in volume_edge_coefficients(ls, &coords, v) {
                omega[e] -= 2.0 * share * sign * coef;
            }
        }
    }
    equilibrium(ls.dimension, &ls.endpoints, &coords, &omega)
}

/// Constraint counts and generic rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsostaticReport {
    /// Coordinates after removing the trivial motions.
    pub unknowns: usize,
    /// Bar constraints not redundant inside a single body.
    pub constraints: usize,
    pub generic_rank: usize,
    pub isostatic: bool,
    /// Free coordinates of the parameterization.
    pub reduced_unknowns: usize,
    /// Edge classes of the parameterization.
    pub reduced_constraints: usize,
    pub reduced_rank: usize,
    pub reduced_isostatic: bool,
}

/// Counts and ranks at a random generic realization.
pub fn isostatic_check(fw: &Framework, seed: u64) -> Result<IsostaticReport, ModelError> {
    let d = fw.dimension;
    let w = fw.expanded.vertices.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<Vec<f64>> = (0..w).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ends: Vec<(usize, usize)> = fw.expanded.edges.iter().map(|e| (e.a, e.b)).collect();
    let b = ends.len();
    let bars = RigidityMatrix::from_edges(d, &ends, &coords).matrix.columns(0, b).into_owned();
    let sv = |m: &DMatrix<f64>| {
        let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    };
    let rank = numeric_rank(&sv(&bars), 1e-10);
    let trivial = d * (d + 1) / 2;
    let unknowns = (w * d).saturating_sub(trivial);
    let mut redundant_inside = 0;
    for body in &fw.bodies {
        let cols: Vec<usize> = (0..b)
            .filter(|&k| body.vertices.contains(&ends[k].0) && body.vertices.contains(&ends[k].1))
            .collect();
        if cols.is_empty() {
            continue;
        }
        let sub = bars.select_columns(&cols);
        redundant_inside += cols.len() - numeric_rank(&sv(&sub), 1e-10);
    }
    let constraints = b - redundant_inside;
    let ls = Landscape::from_density(fw, crate::energy::DensityFunction::new(fw, crate::energy::DensityMode::Full)?, None)?;
    let m = ls.num_params();
    let theta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let reduced_rank = numeric_rank(&sv(&reduced_matrix(&ls, &theta)), 1e-10);
    let n = ls.num_classes();
    Ok(IsostaticReport {
        unknowns,
        constraints,
        generic_rank: rank,
        isostatic: rank == unknowns && rank == constraints,
        reduced_unknowns: m,
        reduced_constraints: n,
        reduced_rank,
        reduced_isostatic: m == n && reduced_rank == m,
    })
}

/// Rank of a set of lines in Plücker coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineComplex {
    pub rank: usize,
    /// Decreasing singular values of the normalized Plücker matrix.
    pub singular_values: Vec<f64>,
    /// Smallest over largest singular value.
    pub ratio: f64,
}

/// Normalized Plücker coordinates `(d, p × d)` of the line through `p`, `q`.
pub fn plucker(p: &[f64; 3], q: &[f64; 3]) -> Result<[f64; 6], ModelError> {
    let (p, q) = (Vector3::from(*p), Vector3::from(*q));
    let d = q - p;
    let n = d.norm();
    if !(n > 1e-14 * (1.0 + p.norm())) {
        return Err(ModelError::Degenerate("coincident points do not span a line".into()));
    }
    let d = d / n;
    let m = p.cross(&d);
    Ok([d.x, d.y, d.z, m.x, m.y, m.z])
}

pub fn line_complex_rank(lines: &[([f64; 3], [f64; 3])], tol: f64) -> Result<LineComplex, ModelError> {
    let rows: Vec<[f64; 6]> = lines.iter().map(|(p, q)| plucker(p, q)).collect::<Result<_, _>>()?;
    let m = DMatrix::from_fn(rows.len(), 6, |i, j| rows[i][j]);
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let ratio = match (s.first(), s.last()) {
        (Some(&a), Some(&b)) if a > 0.0 => b / a,
        _ => 0.0,
    };
    Ok(LineComplex {
        rank: numeric_rank(&s, tol),
        singular_values: s,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::DensityMode;
    use crate::fixtures;
    use crate::framework::FrameworkFile;

    fn quad_ls() -> Landscape {
        let fw = fixtures::load("quad").unwrap();
        Landscape::new(&fw, DensityMode::Full, None).unwrap()
    }

    #[test]
    fn single_bar_has_one_bar_and_three_pins() {
        let f = FrameworkFile::from_json(r#"{"dimension": 2, "bars": [["a","b"]], "realization": {"a": [0,0], "b": [2,1]}}"#).unwrap();
        let fw = Framework::from_file(f).unwrap();
        let coords = vec![vec![0.0, 0.0], vec![2.0, 1.0]];
        let r = RigidityMatrix::of_framework(&fw, &coords).unwrap();
        assert_eq!(r.matrix.shape(), (4, 4));
        assert_eq!(r.columns.iter().filter(|c| matches!(c, Column::Pin { .. })).count(), 3);
        assert_eq!(r.matrix.column(0).as_slice(), &[-2.0, -1.0, 2.0, 1.0]);
        assert!(!is_shaky(&fw, &coords, SHAKY_TOL).unwrap().shaky);
    }

    #[test]
    fn collinear_quad_is_shaky_and_generic_is_not() {
        let ls = quad_ls();
        let v1 = [3.0, 1.0, 1.0, -1.0, -1.0];
        assert!(!landscape_shakiness(&ls, &v1, SHAKY_TOL).shaky);
        let flat = [3.0, 1.0, 0.0, -1.5, 0.0];
        assert!(landscape_shakiness(&ls, &flat, SHAKY_TOL).shaky);
        assert!(reduced_shakiness(&ls, &flat, SHAKY_TOL).shaky);
    }

    #[test]
    fn undeformed_stress_vanishes() {
        let ls = quad_ls();
        let s = energy_self_stress(&ls, &[3.0, 1.0, 1.0, -1.0, -1.0]);
        assert!(s.max_abs() < 1e-14);
    }

    #[test]
    fn quad_counts() {
        let fw = fixtures::load("quad").unwrap();
        let r = isostatic_check(&fw, 1).unwrap();
        assert_eq!((r.reduced_unknowns, r.reduced_constraints, r.reduced_rank), (5, 6, 5));
        assert_eq!((r.unknowns, r.constraints, r.generic_rank), (5, 6, 5));
        assert!(!r.isostatic && !r.reduced_isostatic);
    }

    #[test]
    fn random_lines_span_and_concurrent_lines_do_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pt = || [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
        let lines: Vec<_> = (0..6).map(|_| (pt(), pt())).collect();
        assert_eq!(line_complex_rank(&lines, SHAKY_TOL).unwrap().rank, 6);
        // Lines through one point span only a 3-dimensional family.
        let star: Vec<_> = (0..6).map(|_| ([0.5, 0.5, 0.5], pt())).collect();
        assert_eq!(line_complex_rank(&star, SHAKY_TOL).unwrap().rank, 3);
        assert!(line_complex_rank(&[([1.0, 0.0, 0.0], [1.0, 0.0, 0.0])], SHAKY_TOL).is_err());
    }
}
