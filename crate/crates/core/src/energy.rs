//! Framework-level strain-energy density over the space of intrinsic metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::elasticity::{simplex_pairs, SimplexForm};
use crate::error::ModelError;
use crate::framework::{compute_dimensioning, BodyKind, Dimensioning, Framework};

/// Which simplices of a body enter the density.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMode {
    /// Every non-degenerate simplex of every body.
    #[default]
    Full,
    /// One representative simplex per body (largest volume).
    Affine,
}

/// One weighted element: a bar or a body simplex.
#[derive(Clone, Debug)]
pub struct Term {
    /// Share of the element in the numerator (volume units).
    pub weight: f64,
    /// Expanded edge indices in the pair order of the simplex.
    pub edges: Vec<usize>,
    pub form: SimplexForm,
    /// Owning body, `None` for a bar.
    pub body: Option<usize>,
}

/// The density `u(L')` of a framework, normalized per unit Young modulus.
#[derive(Clone, Debug)]
pub struct DensityFunction {
    pub terms: Vec<Term>,
    /// Total material volume (denominator).
    pub total: f64,
    /// Undeformed lengths.
    pub lengths: Vec<f64>,
    pub dimensioning: Dimensioning,
    pub mode: DensityMode,
    pub nu: f64,
}

impl DensityFunction {
    pub fn new(fw: &Framework, mode: DensityMode) -> Result<Self, ModelError> {
        let dims = compute_dimensioning(fw)?;
        Self::with_dimensioning(fw, mode, dims)
    }

    /// Assembles the density with a given dimensioning (e.g. a rescaled
    /// cross-section).
    pub fn with_dimensioning(
        fw: &Framework,
        mode: DensityMode,
        dims: Dimensioning,
    ) -> Result<Self, ModelError> {
        let bj = &fw.expanded;
        let nu = fw.material.nu;
        let mut terms = Vec::new();
        let mut total = 0.0;
        for (k, e) in bj.edges.iter().enumerate() {
            if e.bar && e.bodies.is_empty() {
                let l = bj.lengths[k];
                let w = dims.bar_area * l;
                terms.push(Term {
                    weight: w,
                    edges: vec![k],
                    form: SimplexForm::new(&[l], nu)?,
                    body: None,
                });
                total += w;
            }
        }
        for (bi, body) in fw.bodies.iter().enumerate() {
            let k = body.simplex_dim();
            let mut forms = Vec::new();
            for s in &body.simplices {
                let edges: Vec<usize> = simplex_pairs(k)
                    .iter()
                    .map(|&(i, j)| bj.edge_index(s[i], s[j]).expect("simplex edge"))
                    .collect();
                let ls: Vec<f64> = edges.iter().map(|&e| bj.lengths[e]).collect();
                forms.push((edges, SimplexForm::new(&ls, nu)?));
            }
            if mode == DensityMode::Affine {
                let best = forms
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .1.volume.total_cmp(&b.1 .1.volume))
                    .map(|(i, _)| i)
                    .expect("body has a simplex");
                forms = vec![forms.swap_remove(best)];
            }
            let sum_vol: f64 = forms.iter().map(|f| f.1.volume).sum();
            let vol_body = dims.body_volumes[bi];
            for (edges, form) in forms {
                terms.push(Term {
                    weight: vol_body * form.volume / sum_vol,
                    edges,
                    form,
                    body: Some(bi),
                });
            }
            total += vol_body;
        }
        if !(total > 0.0) {
            return Err(ModelError::ZeroWeight);
        }
        Ok(Self {
            terms,
            total,
            lengths: bj.lengths.clone(),
            dimensioning: dims,
            mode,
            nu,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.lengths.len()
    }

    fn check(&self, n: usize) -> Result<(), ModelError> {
        if n != self.num_edges() {
            return Err(ModelError::Mismatch {
                expected: self.num_edges(),
                got: n,
            });
        }
        Ok(())
    }

    /// `u(L')/E`.
    pub fn density(&self, lengths: &[f64]) -> Result<f64, ModelError> {
        self.check(lengths.len())?;
        let q: Vec<f64> = lengths.iter().map(|l| l * l).collect();
        Ok(self.density_squared(&q))
    }

    /// Density at squared lengths.
    pub fn density_squared(&self, q: &[f64]) -> f64 {
        let mut sum = 0.0;
        for t in &self.terms {
            let local: Vec<f64> = t.edges.iter().map(|&e| q[e]).collect();
            sum += t.weight * t.form.density(&local);
        }
        sum / self.total
    }

    /// Density of a realization given by vertex coordinates.
    pub fn density_from_realization(&self, fw: &Framework, coords: &[Vec<f64>]) -> Result<f64, ModelError> {
        if coords.len() != fw.expanded.vertices.len() {
            return Err(ModelError::Mismatch {
                expected: fw.expanded.vertices.len(),
                got: coords.len(),
            });
        }
        self.density(&fw.expanded.measure(coords))
    }

    /// Matrix `M` with `u = (1, Q')ᵀ M (1, Q')`.
    pub fn quadratic_form(&self) -> DMatrix<f64> {
        let b = self.num_edges();
        let mut m = DMatrix::zeros(b + 1, b + 1);
        for t in &self.terms {
            let idx: Vec<usize> = std::iter::once(0).chain(t.edges.iter().map(|e| e + 1)).collect();
            let s = t.weight / self.total;
            for (i, &gi) in idx.iter().enumerate() {
                for (j, &gj) in idx.iter().enumerate() {
                    m[(gi, gj)] += s * t.form.form[(i, j)];
                }
            }
        }
        m
    }

    /// Hessian of `u` with respect to squared lengths, `2 M_QQ`.
    ///
    /// The density equals `½ δᵀ H δ` with `δ = Q' − Q`, which avoids the
    /// cancellation of the full quadratic form near the undeformed metric.
    pub fn squared_length_hessian(&self) -> DMatrix<f64> {
        let b = self.num_edges();
        let mut h = DMatrix::zeros(b, b);
        for t in &self.terms {
            let s = 2.0 * t.weight / self.total;
            for (i, &ei) in t.edges.iter().enumerate() {
                for (j, &ej) in t.edges.iter().enumerate() {
                    h[(ei, ej)] += s * t.form.form[(i + 1, j + 1)];
                }
            }
        }
        (&h + h.transpose()) * 0.5
    }

    /// `∂u/∂Q'_e` at squared lengths `q`.
    pub fn gradient_squared(&self, q: &[f64]) -> DVector<f64> {
        let delta = DVector::from_iterator(
            q.len(),
            q.iter().zip(&self.lengths).map(|(a, l)| a - l * l),
        );
        self.squared_length_hessian() * delta
    }

    /// Mean density per body (used for reporting).
    pub fn body_densities(&self, lengths: &[f64], bodies: usize) -> Vec<f64> {
        let q: Vec<f64> = lengths.iter().map(|l| l * l).collect();
        let mut num = vec![0.0; bodies];
        let mut den = vec![0.0; bodies];
        for t in &self.terms {
            if let Some(b) = t.body {
                let local: Vec<f64> = t.edges.iter().map(|&e| q[e]).collect();
                num[b] += t.weight * t.form.density(&local);
                den[b] += t.weight;
            }
        }
        num.iter().zip(&den).map(|(n, d)| if *d > 0.0 { n / d } else { 0.0 }).collect()
    }
}

/// `d(L', L'') = |u(L') − u(L'')| / E`.
pub fn pseudometric(df: &DensityFunction, a: &[f64], b: &[f64]) -> Result<f64, ModelError> {
    Ok((df.density(a)? - df.density(b)?).abs())
}

/// Density of a framework at a grid of Poisson ratios (diagnostic only).
pub fn nu_sweep(fw: &Framework, lengths: &[f64], grid: &[f64], mode: DensityMode) -> Result<Vec<(f64, f64)>, ModelError> {
    grid.iter()
        .map(|&nu| {
            let df = DensityFunction::new(&fw.with_nu(nu)?, mode)?;
            Ok((nu, df.density(lengths)?))
        })
        .collect()
}

/// True when the density has a polyhedron whose volume must be held fixed.
pub fn needs_isochoric(fw: &Framework) -> bool {
    fw.material.incompressible() && fw.bodies.iter().any(|b| b.kind == BodyKind::Polyhedron)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framework::FrameworkFile;

    fn quad() -> Framework {
        let f = FrameworkFile::from_json(
            r#"{"dimension": 2, "joints": ["A","B","C","D"],
                "bars": [["A","B"],["A","C"],["A","D"],["B","C"],["B","D"],["C","D"]],
                "realization": {"A": [-3,0], "B": [3,0], "C": [1,1], "D": [-1,-1]}}"#,
        )
        .unwrap();
        Framework::from_file(f).unwrap()
    }

    #[test]
    fn zero_at_reference_and_bar_formula() {
        let fw = quad();
        let df = DensityFunction::new(&fw, DensityMode::Full).unwrap();
        assert_eq!(df.density(&df.lengths.clone()).unwrap(), 0.0);
        let mut lp = df.lengths.clone();
        lp[2] *= 1.01;
        let l = &df.lengths;
        let expect = (lp[2].powi(2) - l[2].powi(2)).powi(2) / (8.0 * l[2].powi(3)) / l.iter().sum::<f64>();
        assert!((df.density(&lp).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn quadratic_form_matches_density() {
        let fw = quad();
        let df = DensityFunction::new(&fw, DensityMode::Full).unwrap();
        let m = df.quadratic_form();
        let lp: Vec<f64> = df.lengths.iter().enumerate().map(|(i, l)| l * (1.0 + 0.01 * i as f64)).collect();
        let z = DVector::from_iterator(7, std::iter::once(1.0).chain(lp.iter().map(|l| l * l)));
        let via_form = z.dot(&(&m * &z));
        let direct = df.density(&lp).unwrap();
        assert!((via_form - direct).abs() < 1e-10 * direct.abs().max(1e-12));
    }

    #[test]
    fn single_bar_block() {
        let f = FrameworkFile::from_json(
            r#"{"dimension": 2, "bars": [["a","b"]], "lengths": {"a-b": 1}}"#,
        )
        .unwrap();
        let fw = Framework::from_file(f).unwrap();
        let df = DensityFunction::new(&fw, DensityMode::Full).unwrap();
        let m = df.quadratic_form();
        // (Q' − 1)² / 8
        let expect = DMatrix::from_row_slice(2, 2, &[0.125, -0.125, -0.125, 0.125]);
        assert!((m - expect).abs().max() < 1e-15);
    }
}
