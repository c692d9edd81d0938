//! Sparse monomial representation of polynomial systems.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::SolveError;
use crate::system::{Scalar, System};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub exps: Vec<u32>,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(terms: Vec<(f64, Vec<u32>)>) -> Self {
        Self {
            terms: terms
                .into_iter()
                .map(|(coef, exps)| Monomial { coef, exps })
                .collect(),
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Value and gradient at `x`.
    pub fn eval_with_gradient<T: Scalar>(&self, x: &[T], grad: Option<&mut [T]>) -> T {
        let mut value = T::zero();
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|gi| *gi = T::zero());
        }
        for term in &self.terms {
            let c = T::from_real(term.coef);
            let mut prod = c;
            for (xi, &e) in x.iter().zip(&term.exps) {
                if e > 0 {
                    prod *= xi.powi(e as i32);
                }
            }
            value += prod;
            if let Some(g) = grad.as_deref_mut() {
                for (k, &ek) in term.exps.iter().enumerate() {
                    if ek == 0 {
                        continue;
                    }
                    let mut d = c * T::from_real(ek as f64);
                    for (j, (xj, &ej)) in x.iter().zip(&term.exps).enumerate() {
                        let e = if j == k { ej - 1 } else { ej };
                        if e > 0 {
                            d *= xj.powi(e as i32);
                        }
                    }
                    g[k] += d;
                }
            }
        }
        value
    }
}

/// A square or rectangular system of sparse polynomials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonomialSystem {
    pub nvars: usize,
    pub polys: Vec<Polynomial>,
}

impl MonomialSystem {
    /// Builds a system and checks that every unknown is used.
    pub fn new(nvars: usize, polys: Vec<Polynomial>) -> Result<Self, SolveError> {
        if nvars == 0 {
            return Err(SolveError::Empty);
        }
        for v in 0..nvars {
            let used = polys.iter().any(|p| {
                p.terms
                    .iter()
                    .any(|t| t.exps.get(v).copied().unwrap_or(0) > 0)
            });
            if !used {
                return Err(SolveError::UnusedVariable(v));
            }
        }
        let mut polys = polys;
        for p in &mut polys {
            for t in &mut p.terms {
                t.exps.resize(nvars, 0);
            }
        }
        Ok(Self { nvars, polys })
    }
}

impl System for MonomialSystem {
    fn dim(&self) -> usize {
        self.nvars
    }

    fn num_equations(&self) -> usize {
        self.polys.len()
    }

    fn degrees(&self) -> Vec<u32> {
        self.polys.iter().map(Polynomial::degree).collect()
    }

    fn evaluate<T: Scalar>(&self, x: &[T], f: &mut [T], jac: Option<&mut DMatrix<T>>) {
        match jac {
            Some(j) => {
                let mut g = vec![T::zero(); self.nvars];
                for (i, p) in self.polys.iter().enumerate() {
                    f[i] = p.eval_with_gradient(x, Some(&mut g));
                    for (k, gk) in g.iter().enumerate() {
                        j[(i, k)] = *gk;
                    }
                }
            }
            None => {
                for (i, p) in self.polys.iter().enumerate() {
                    f[i] = p.eval_with_gradient(x, None);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_hand_derivative() {
        // x^2 y - 3 y + 2
        let p = Polynomial::new(vec![(1.0, vec![2, 1]), (-3.0, vec![0, 1]), (2.0, vec![0, 0])]);
        let mut g = [0.0; 2];
        let v = p.eval_with_gradient(&[2.0, 5.0], Some(&mut g));
        assert_eq!(v, 20.0 - 15.0 + 2.0);
        assert_eq!(g, [20.0, 4.0 - 3.0]);
        assert_eq!(p.degree(), 3);
    }

    #[test]
    fn unused_variable_rejected() {
        let p = Polynomial::new(vec![(1.0, vec![1, 0])]);
        assert_eq!(
            MonomialSystem::new(2, vec![p]).unwrap_err(),
            SolveError::UnusedVariable(1)
        );
    }
}
