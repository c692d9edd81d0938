//! Newton iterations used for polishing and for the multistart engine.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::system::{Scalar, System};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOutcome<T> {
    pub x: Vec<T>,
    /// `‖F(x)‖∞` at the returned point.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `a·y = b` by LU with partial pivoting.
pub fn solve_linear<T: Scalar>(a: DMatrix<T>, b: &[T]) -> Option<Vec<T>> {
    let rhs = DVector::from_column_slice(b);
    let y = a.lu().solve(&rhs)?;
    if y.iter().all(|v| v.modulus().is_finite()) {
        Some(y.as_slice().to_vec())
    } else {
        None
    }
}

pub fn norm_inf<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.modulus()).fold(0.0, f64::max)
}

pub fn norm2<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.modulus_squared()).sum::<f64>().sqrt()
}

/// Plain Newton for square systems.
///
/// Stops once the relative step `‖δ‖ ≤ tol·(1 + ‖x‖)` or after `max_iters`.
pub fn newton<T: Scalar, S: System>(
    sys: &S,
    x0: &[T],
    tol: f64,
    max_iters: usize,
) -> NewtonOutcome<T> {
    let n = sys.dim();
    let m = sys.num_equations();
    let mut x = x0.to_vec();
    let mut f = vec![T::zero(); m];
    let mut jac = DMatrix::<T>::zeros(m, n);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iters {
        iterations = it + 1;
        sys.evaluate(&x, &mut f, Some(&mut jac));
        let rhs: Vec<T> = f.iter().map(|v| -*v).collect();
        let Some(dx) = solve_linear(jac.clone(), &rhs) else {
            break;
        };
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += *di;
        }
        if norm2(&dx) <= tol * (1.0 + norm2(&x)) {
            converged = true;
            break;
        }
    }
    sys.evaluate(&x, &mut f, None);
    NewtonOutcome {
        residual: norm_inf(&f),
        x,
        iterations,
        converged,
    }
}

/// Damped Gauss-Newton in real arithmetic with a backtracking line search
/// on `‖F‖²`. Works for square and overdetermined systems.
pub fn damped_newton<S: System>(
    sys: &S,
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> NewtonOutcome<f64> {
    let n = sys.dim();
    let m = sys.num_equations();
    let mut x = x0.to_vec();
    let mut f = vec![0.0; m];
    let mut trial_f = vec![0.0; m];
    let mut jac = DMatrix::<f64>::zeros(m, n);
    let mut converged = false;
    let mut iterations = 0;
    sys.evaluate(&x, &mut f, Some(&mut jac));
    let mut merit = norm2(&f);
    for it in 0..max_iters {
        iterations = it + 1;
        let rhs = DVector::from_iterator(m, f.iter().map(|v| -v));
        let dx = if m == n {
            match jac.clone().lu().solve(&rhs) {
                Some(d) if d.iter().all(|v| v.is_finite()) => d,
                _ => match jac.clone().svd(true, true).solve(&rhs, 1e-14) {
                    Ok(d) => d,
                    Err(_) => break,
                },
            }
        } else {
            match jac.clone().svd(true, true).solve(&rhs, 1e-14) {
                Ok(d) => d,
                Err(_) => break,
            }
        };
        let step_norm = dx.norm();
        if !step_norm.is_finite() {
            break;
        }
        let mut lambda = 1.0;
        let mut accepted = false;
        let mut trial = x.clone();
        for _ in 0..40 {
            for k in 0..n {
                trial[k] = x[k] + lambda * dx[k];
            }
            sys.evaluate(&trial, &mut trial_f, None);
            let trial_merit = norm2(&trial_f);
            if trial_merit.is_finite() && trial_merit < (1.0 - 1e-4 * lambda) * merit {
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // Full step if we are already at the noise floor.
            if step_norm <= tol * (1.0 + norm2(&x)) {
                converged = true;
            }
            break;
        }
        x.copy_from_slice(&trial);
        sys.evaluate(&x, &mut f, Some(&mut jac));
        merit = norm2(&f);
        if lambda == 1.0 && step_norm <= tol * (1.0 + norm2(&x)) {
            converged = true;
            break;
        }
    }
    NewtonOutcome {
        residual: norm_inf(&f),
        x,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monomial::{MonomialSystem, Polynomial};

    fn circle_line() -> MonomialSystem {
        // x^2 + y^2 - 4 = 0, x - y = 0
        MonomialSystem::new(
            2,
            vec![
                Polynomial::new(vec![(1.0, vec![2, 0]), (1.0, vec![0, 2]), (-4.0, vec![0, 0])]),
                Polynomial::new(vec![(1.0, vec![1, 0]), (-1.0, vec![0, 1])]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn newton_converges_quadratically_to_root() {
        let out = newton(&circle_line(), &[1.0, 1.2], 1e-14, 20);
        assert!(out.converged);
        let r = 2f64.sqrt();
        assert!((out.x[0] - r).abs() < 1e-14 && (out.x[1] - r).abs() < 1e-14);
        assert!(out.iterations < 10);
    }

    #[test]
    fn damped_newton_from_far_start() {
        let out = damped_newton(&circle_line(), &[-40.0, 7.0], 1e-13, 200);
        assert!(out.converged, "{out:?}");
        assert!(out.residual < 1e-12);
    }
}
