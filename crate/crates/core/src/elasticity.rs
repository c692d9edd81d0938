//! Linear-elastic material law and Green-Lagrange strain energies of bars,
//! triangles and tetrahedra.
//!
//! All energies are reported per unit Young modulus.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Relative volume below which a simplex counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Poisson ratio in `[0, 1/2]`.
    pub nu: f64,
    /// Young modulus; only a scale, energies are reported per unit modulus.
    pub young: f64,
}

impl Material {
    pub fn new(nu: f64) -> Result<Self, ModelError> {
        check_nu(nu)?;
        Ok(Self { nu, young: 1.0 })
    }

    pub fn incompressible(&self) -> bool {
        self.nu == 0.5
    }
}

impl Default for Material {
    fn default() -> Self {
        Self { nu: 0.5, young: 1.0 }
    }
}

fn check_nu(nu: f64) -> Result<(), ModelError> {
    if !(0.0..=0.5).contains(&nu) || nu.is_nan() {
        return Err(ModelError::PoissonRange(nu));
    }
    Ok(())
}

/// Stress-from-strain matrix (per unit modulus) in Voigt order
/// `(ε_x, ε_y[, ε_z], γ_xy[, γ_xz, γ_yz])`.
///
/// For `nu = 1/2` in three dimensions the matrix is singular and the
/// Moore-Penrose pseudoinverse of the compliance matrix is returned.
pub fn constitutive_matrix(nu: f64, dim: usize) -> Result<DMatrix<f64>, ModelError> {
    check_nu(nu)?;
    match dim {
        1 => Ok(DMatrix::from_element(1, 1, 1.0)),
        2 => {
            let c = 1.0 / (1.0 - nu * nu);
            Ok(DMatrix::from_row_slice(
                3,
                3,
                &[c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, c * (1.0 - nu) / 2.0],
            ))
        }
        3 => {
            let mut m = DMatrix::zeros(6, 6);
            let (diag, off, shear) = if nu == 0.5 {
                (4.0 / 9.0, -2.0 / 9.0, 1.0 / 3.0)
            } else {
                let c = 1.0 / ((1.0 + nu) * (1.0 - 2.0 * nu));
                (c * (1.0 - nu), c * nu, 1.0 / (2.0 * (1.0 + nu)))
            };
            for i in 0..3 {
                for j in 0..3 {
                    m[(i, j)] = if i == j { diag } else { off };
                }
                m[(3 + i, 3 + i)] = shear;
            }
            Ok(m)
        }
        _ => Err(ModelError::Dimension(dim)),
    }
}

/// Number of vertex pairs of a `k`-simplex.
pub const fn pair_count(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Vertex pairs of a `k`-simplex in lexicographic order.
pub fn simplex_pairs(k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..=k {
        for j in i + 1..=k {
            out.push((i, j));
        }
    }
    out
}

/// Index of pair `(i, j)` in [`simplex_pairs`].
pub fn pair_index(k: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    simplex_pairs(k).iter().position(|&p| p == (i, j)).expect("pair in simplex")
}

/// Canonical-frame edge matrix of a simplex from its pairwise distances.
///
/// Columns are `v_1 − v_0, …, v_k − v_0` with `v_1` on the positive x axis,
/// `v_2` in the upper xy half-plane and, for tetrahedra, `v_3` above it
/// when `upper` is true. Lengths follow [`simplex_pairs`] order.
pub fn coordinatize_simplex_oriented(lengths: &[f64], upper: bool) -> Result<DMatrix<f64>, ModelError> {
    let sq: Vec<f64> = lengths.iter().map(|l| l * l).collect();
    match lengths.len() {
        1 => {
            if lengths[0] <= 0.0 {
                return Err(ModelError::Degenerate("zero-length segment".into()));
            }
            Ok(DMatrix::from_element(1, 1, lengths[0]))
        }
        3 => {
            let (ab, ac, bc) = (lengths[0], lengths[1], lengths[2]);
            check_triangle(ab, ac, bc)?;
            let xb = ab;
            let xc = (sq[0] + sq[1] - sq[2]) / (2.0 * ab);
            let yc = (sq[1] - xc * xc).max(0.0).sqrt();
            let yc = if upper { yc } else { -yc };
            Ok(DMatrix::from_row_slice(2, 2, &[xb, xc, 0.0, yc]))
        }
        6 => {
            let (ab, ac, ad, bc, bd, cd) = (sq[0], sq[1], sq[2], sq[3], sq[4], sq[5]);
            check_triangle(lengths[0], lengths[1], lengths[3])?;
            let vol = cayley_menger_volume(&sq)?;
            let mean = lengths.iter().sum::<f64>() / 6.0;
            if vol <= DEGENERACY_TOL * mean.powi(3) {
                return Err(ModelError::Degenerate(format!(
                    "tetrahedron volume {vol:e} below tolerance"
                )));
            }
            let xb = lengths[0];
            let xc = (ab + ac - bc) / (2.0 * xb);
            let yc = (ac - xc * xc).sqrt();
            let xd = (ab + ad - bd) / (2.0 * xb);
            let yd = (ac + ad - cd - 2.0 * xc * xd) / (2.0 * yc);
            let zd = (ad - xd * xd - yd * yd).max(0.0).sqrt();
            let zd = if upper { zd } else { -zd };
            Ok(DMatrix::from_row_slice(
                3,
                3,
                &[xb, xc, xd, 0.0, yc, yd, 0.0, 0.0, zd],
            ))
        }
        n => Err(ModelError::Invalid(format!(
            "simplex needs 1, 3 or 6 lengths, got {n}"
        ))),
    }
}

/// [`coordinatize_simplex_oriented`] with the positive orientation.
pub fn coordinatize_simplex(lengths: &[f64]) -> Result<DMatrix<f64>, ModelError> {
    coordinatize_simplex_oriented(lengths, true)
}

fn check_triangle(ab: f64, ac: f64, bc: f64) -> Result<(), ModelError> {
    let mean = (ab + ac + bc) / 3.0;
    let slack = DEGENERACY_TOL * mean;
    let checks = [
        (ab + ac - bc, "L_ab + L_ac > L_bc"),
        (ab + bc - ac, "L_ab + L_bc > L_ac"),
        (ac + bc - ab, "L_ac + L_bc > L_ab"),
    ];
    for (gap, name) in checks {
        if !(gap > slack) {
            return Err(ModelError::Degenerate(format!(
                "triangle inequality {name} violated ({ab}, {ac}, {bc})"
            )));
        }
    }
    Ok(())
}

/// Unsigned content of a triangle (3 squared lengths) or tetrahedron
/// (6 squared lengths) from the Cayley-Menger determinant.
pub fn cayley_menger_volume(sq: &[f64]) -> Result<f64, ModelError> {
    let (det, factor) = match sq.len() {
        3 => {
            let (a, b, c) = (sq[0], sq[1], sq[2]);
            // 16·Area² = 2(ab + ac + bc) − (a² + b² + c²)
            (2.0 * (a * b + a * c + b * c) - (a * a + b * b + c * c), 16.0)
        }
        6 => {
            let m = DMatrix::from_row_slice(
                5,
                5,
                &[
                    0.0, 1.0, 1.0, 1.0, 1.0, //
                    1.0, 0.0, sq[0], sq[1], sq[2], //
                    1.0, sq[0], 0.0, sq[3], sq[4], //
                    1.0, sq[1], sq[3], 0.0, sq[5], //
                    1.0, sq[2], sq[4], sq[5], 0.0,
                ],
            );
            (m.determinant(), 288.0)
        }
        n => {
            return Err(ModelError::Invalid(format!(
                "Cayley-Menger needs 3 or 6 squared lengths, got {n}"
            )))
        }
    };
    let scale = sq.iter().fold(0.0f64, |a, &b| a.max(b.abs())).powi(if sq.len() == 3 { 2 } else { 3 });
    if det < -1e-12 * scale {
        return Err(ModelError::NotEmbeddable(format!(
            "Cayley-Menger determinant {det:e} is negative"
        )));
    }
    Ok((det.max(0.0) / factor).sqrt())
}

/// Signed volume of the tetrahedron `p0 p1 p2 p3`.
pub fn oriented_volume(p: &[Vector3<f64>; 4]) -> f64 {
    Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]).determinant() / 6.0
}

/// The linear map sending undeformed edge vectors onto deformed ones.
///
/// Both arguments are square edge matrices with columns `v_i − v_0`.
pub fn affine_map(undeformed: &DMatrix<f64>, deformed: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
    let inv = undeformed
        .clone()
        .try_inverse()
        .ok_or_else(|| ModelError::Degenerate("singular undeformed edge matrix".into()))?;
    Ok(deformed * inv)
}

/// Green-Lagrange strain `½(AᵀA − I)` flattened to Voigt order with
/// engineering shears.
pub fn green_lagrange_strain(a: &DMatrix<f64>) -> DVector<f64> {
    let k = a.ncols();
    let e = (a.transpose() * a - DMatrix::identity(k, k)) * 0.5;
    voigt(&e)
}

fn voigt(e: &DMatrix<f64>) -> DVector<f64> {
    match e.ncols() {
        1 => DVector::from_vec(vec![e[(0, 0)]]),
        2 => DVector::from_vec(vec![e[(0, 0)], e[(1, 1)], 2.0 * e[(0, 1)]]),
        _ => DVector::from_vec(vec![
            e[(0, 0)],
            e[(1, 1)],
            e[(2, 2)],
            2.0 * e[(0, 1)],
            2.0 * e[(0, 2)],
            2.0 * e[(1, 2)],
        ]),
    }
}

/// Energy per unit volume `½ eᵀ D e`.
pub fn strain_energy_density(strain: &DVector<f64>, stiffness: &DMatrix<f64>) -> f64 {
    0.5 * strain.dot(&(stiffness * strain))
}

/// Energy density of a simplex as a quadratic form in its deformed squared
/// edge lengths.
///
/// With `q = (1, Q'_01, Q'_02, …)` in [`simplex_pairs`] order the density is
/// `qᵀ K q`. The deformed Gram matrix is linear in `Q'`, so the strain and
/// hence the whole form follow from the undeformed canonical frame alone.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexForm {
    pub k: usize,
    /// Undeformed content (length, area or volume).
    pub volume: f64,
    /// Symmetric `(n+1)×(n+1)` form with `n` the pair count.
    pub form: DMatrix<f64>,
    /// Linear map from `q` to the Voigt strain.
    pub strain_map: DMatrix<f64>,
    /// Constitutive matrix (per unit Young modulus).
    pub stiffness: DMatrix<f64>,
}

impl SimplexForm {
    /// Builds the form from undeformed lengths in pair order.
    pub fn new(lengths: &[f64], nu: f64) -> Result<Self, ModelError> {
        let k = match lengths.len() {
            1 => 1,
            3 => 2,
            6 => 3,
            n => {
                return Err(ModelError::Invalid(format!(
                    "simplex needs 1, 3 or 6 lengths, got {n}"
                )))
            }
        };
        let x = coordinatize_simplex(lengths)?;
        let xinv = x
            .clone()
            .try_inverse()
            .ok_or_else(|| ModelError::Degenerate("singular edge matrix".into()))?;
        let n = pair_count(k);
        let basis = n + 1;
        // Gram entry (i, j) of deformed edge vectors as coefficients over q.
        let gram = |i: usize, j: usize| -> DVector<f64> {
            let mut c = DVector::zeros(basis);
            let p0i = 1 + pair_index(k, 0, i + 1);
            if i == j {
                c[p0i] = 1.0;
            } else {
                let p0j = 1 + pair_index(k, 0, j + 1);
                let pij = 1 + pair_index(k, i + 1, j + 1);
                c[p0i] = 0.5;
                c[p0j] = 0.5;
                c[pij] = -0.5;
            }
            c
        };
        // Strain tensor entries E_ab = ½(Σ xinv_ia G_ij xinv_jb − δ_ab).
        let strain_entry = |a: usize, b: usize| -> DVector<f64> {
            let mut c = DVector::zeros(basis);
            for i in 0..k {
                for j in 0..k {
                    let w = xinv[(i, a)] * xinv[(j, b)];
                    if w != 0.0 {
                        c += gram(i, j) * w;
                    }
                }
            }
            if a == b {
                c[0] -= 1.0;
            }
            c * 0.5
        };
        let comps: Vec<(usize, usize, f64)> = match k {
            1 => vec![(0, 0, 1.0)],
            2 => vec![(0, 0, 1.0), (1, 1, 1.0), (0, 1, 2.0)],
            _ => vec![
                (0, 0, 1.0),
                (1, 1, 1.0),
                (2, 2, 1.0),
                (0, 1, 2.0),
                (0, 2, 2.0),
                (1, 2, 2.0),
            ],
        };
        let mut strain_map = DMatrix::zeros(comps.len(), basis);
        for (r, &(a, b, s)) in comps.iter().enumerate() {
            strain_map.set_row(r, &(strain_entry(a, b) * s).transpose());
        }
        let d = constitutive_matrix(nu, k)?;
        let mut form = strain_map.transpose() * &d * &strain_map * 0.5;
        form = (&form + form.transpose()) * 0.5;
        let volume = match k {
            1 => lengths[0],
            _ => x.determinant().abs() / if k == 2 { 2.0 } else { 6.0 },
        };
        Ok(Self {
            k,
            volume,
            form,
            strain_map,
            stiffness: d,
        })
    }

    /// Density at deformed squared lengths `q` (without the leading 1).
    ///
    /// Evaluated through the strain, which stays accurate near zero strain.
    pub fn density(&self, q: &[f64]) -> f64 {
        let strain = self.strain(q);
        strain_energy_density(&strain, &self.stiffness)
    }

    /// Voigt strain at deformed squared lengths `q`.
    pub fn strain(&self, q: &[f64]) -> DVector<f64> {
        let mut v = DVector::zeros(q.len() + 1);
        v[0] = 1.0;
        for (i, qi) in q.iter().enumerate() {
            v[i + 1] = *qi;
        }
        &self.strain_map * v
    }
}

/// `U_ab / E = Area·L·(L'² − L²)² / (8 L⁴)`.
pub fn bar_energy(l: f64, l_prime: f64, area: f64) -> Result<f64, ModelError> {
    if !(l > 0.0) || !(area > 0.0) {
        return Err(ModelError::Invalid(format!(
            "bar needs positive length and area, got L = {l}, Area = {area}"
        )));
    }
    let d = l_prime * l_prime - l * l;
    Ok(area * l * d * d / (8.0 * l.powi(4)))
}

/// Energy of a triangular panel of thickness `height`.
pub fn triangle_energy(lengths: [f64; 3], deformed: [f64; 3], height: f64, nu: f64) -> Result<f64, ModelError> {
    if !(height > 0.0) {
        return Err(ModelError::Invalid(format!("panel height must be positive, got {height}")));
    }
    let f = SimplexForm::new(&lengths, nu)?;
    let q = deformed.map(|l| l * l);
    Ok(height * f.volume * f.density(&q))
}

/// Energy of a solid tetrahedron.
///
/// At `nu = 1/2` the caller must keep the deformed volume equal to the
/// undeformed one; the form is blind to uniform dilation there.
pub fn tetra_energy(lengths: [f64; 6], deformed: [f64; 6], nu: f64) -> Result<f64, ModelError> {
    let f = SimplexForm::new(&lengths, nu)?;
    let q = deformed.map(|l| l * l);
    Ok(f.volume * f.density(&q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::*;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
        }
    }

    #[test]
    fn constitutive_examples() {
        let d = constitutive_matrix(0.5, 3).unwrap();
        assert!(close(d[(0, 0)], 4.0 / 9.0, 1e-15) && close(d[(0, 1)], -2.0 / 9.0, 1e-15));
        assert!(close(d[(3, 3)], 1.0 / 3.0, 1e-15));
        let d = constitutive_matrix(0.0, 2).unwrap();
        assert_eq!(d, DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5]));
        let d = constitutive_matrix(0.25, 3).unwrap();
        assert!(close(d[(0, 0)], 1.2, 1e-14) && close(d[(0, 1)], 0.4, 1e-14) && close(d[(5, 5)], 0.4, 1e-14));
        assert!(constitutive_matrix(0.6, 3).is_err());
    }

    #[test]
    fn incompressible_matrix_is_pseudoinverse_with_dilation_null_space() {
        let d = constitutive_matrix(0.5, 3).unwrap();
        let e = DVector::from_vec(vec![0.7, 0.7, 0.7, 0.0, 0.0, 0.0]);
        assert!((&d * &e).norm() < 1e-15);
        // Compliance at nu = 1/2 and the pseudoinverse identity D C D = D.
        let mut c = DMatrix::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                c[(i, j)] = if i == j { 1.0 } else { -0.5 };
            }
            c[(3 + i, 3 + i)] = 3.0;
        }
        let pinv = c.clone().pseudo_inverse(1e-12).unwrap();
        assert!((pinv - &d).norm() < 1e-12);
        assert_eq!(d.rank(1e-12), 5);
    }

    #[test]
    fn coordinatize_examples() {
        let x = coordinatize_simplex(&[1.0, 1.0, 1.0]).unwrap();
        assert!(close(x[(0, 0)], 1.0, 1e-15) && close(x[(0, 1)], 0.5, 1e-15));
        assert!(close(x[(1, 1)], 3f64.sqrt() / 2.0, 1e-15));
        assert!(matches!(coordinatize_simplex(&[1.0, 1.0, 2.0]), Err(ModelError::Degenerate(_))));
        let t = coordinatize_simplex(&[1.0; 6]).unwrap();
        assert!(close(t[(2, 2)], (2.0f64 / 3.0).sqrt(), 1e-14));
        let v = cayley_menger_volume(&[1.0; 6]).unwrap();
        assert!(close(v, 2f64.sqrt() / 12.0, 1e-14));
        assert!(close(t.determinant() / 6.0, v, 1e-14));
    }

    #[test]
    fn cayley_menger_examples() {
        assert!(close(cayley_menger_volume(&[1.0; 3]).unwrap(), 3f64.sqrt() / 4.0, 1e-15));
        // unit square corners: flat
        let v = cayley_menger_volume(&[1.0, 2.0, 1.0, 1.0, 2.0, 1.0]).unwrap();
        assert!(v < 1e-7);
        assert!(cayley_menger_volume(&[1.0, 1.0, 1.0, 1.0, 1.0, 100.0]).is_err());
    }

    #[test]
    fn affine_map_and_strain_examples() {
        let x = coordinatize_simplex(&[1.0, 1.2, 0.9, 1.1, 1.3, 1.05]).unwrap();
        let a = affine_map(&x, &x).unwrap();
        assert!((a - DMatrix::identity(3, 3)).norm() < 1e-14);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.1, 1.0, 1.0]));
        let e = green_lagrange_strain(&a);
        assert!(close(e[0], 0.105, 1e-15) && e.iter().skip(1).all(|v| v.abs() < 1e-16));
        let stretched = &a * &x;
        let a2 = affine_map(&x, &stretched).unwrap();
        assert!((a2 - a).norm() < 1e-14);
    }

    #[test]
    fn bar_energy_examples() {
        assert_eq!(bar_energy(1.0, 1.0, 2.0).unwrap(), 0.0);
        assert!(close(bar_energy(1.0, 1.1, 1.0).unwrap(), 0.0055125, 1e-13));
        assert!(bar_energy(0.0, 1.0, 1.0).is_err());
        // 1-simplex form reproduces the bar density
        let f = SimplexForm::new(&[1.3], 0.3).unwrap();
        let e = bar_energy(1.3, 1.4, 1.0).unwrap();
        assert!(close(f.volume * f.density(&[1.96]), e, 1e-14));
    }

    /// Explicit coordinates, affine map, strain, quadratic form.
    fn dual_path(lengths: &[f64], deformed: &[f64], nu: f64) -> f64 {
        let k = match lengths.len() {
            3 => 2,
            _ => 3,
        };
        let x = coordinatize_simplex(lengths).unwrap();
        let y = coordinatize_simplex(deformed).unwrap();
        let a = affine_map(&x, &y).unwrap();
        let e = green_lagrange_strain(&a);
        let vol = x.determinant().abs() / if k == 2 { 2.0 } else { 6.0 };
        vol * strain_energy_density(&e, &constitutive_matrix(nu, k).unwrap())
    }

    #[test]
    fn triangle_energy_examples() {
        assert!(triangle_energy([1.0; 3], [1.0; 3], 1.0, 0.3).unwrap().abs() < 1e-24);
        let e = triangle_energy([1.0, 1.0, 1.0], [1.0, 1.0, 1.05], 1.0, 0.5).unwrap();
        assert!(close(e, dual_path(&[1.0; 3], &[1.0, 1.0, 1.05], 0.5), 1e-13));
        assert!(e > 0.0);
        // relabeling a <-> b keeps the energy (reflected frame)
        let e1 = triangle_energy([1.0, 1.1, 0.9], [1.02, 1.07, 0.95], 1.0, 0.3).unwrap();
        let e2 = triangle_energy([1.0, 0.9, 1.1], [1.02, 0.95, 1.07], 1.0, 0.3).unwrap();
        assert!(close(e1, e2, 1e-13));
    }

    #[test]
    fn tetra_energy_examples() {
        let l = [1.0; 6];
        assert!(tetra_energy(l, l, 0.25).unwrap().abs() < 1e-24);
        let mut d = l;
        d[0] = 1.02;
        let e = tetra_energy(l, d, 0.25).unwrap();
        assert!(close(e, dual_path(&l, &d, 0.25), 1e-12));
        // nu = 1/2 energy is homogeneous of degree 4 in the deformed lengths
        let base = [1.0, 1.1, 0.95, 1.05, 1.2, 0.9];
        let def = [1.02, 1.07, 0.97, 1.01, 1.18, 0.93];
        let u1 = tetra_energy(base, def, 0.5).unwrap();
        for s in [0.9, 1.3] {
            let us = tetra_energy(base, def.map(|v| v * s), 0.5).unwrap();
            assert!(close(us, s.powi(4) * u1, 1e-12));
        }
        assert!(tetra_energy(base, base.map(|v| v * 1.1), 0.5).unwrap().abs() < 1e-14);
    }
}
