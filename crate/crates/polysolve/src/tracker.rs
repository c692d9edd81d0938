//! Predictor-corrector path tracking.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{Predictor, TrackerConfig};
use crate::newton::{norm2, solve_linear};
use crate::parallel::map_indexed;
use crate::system::{Homotopy, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    /// Reached the target parameter value.
    Converged,
    /// Norm exceeded the divergence bound.
    Diverged,
    /// Step size fell below the minimum before the target.
    StepFailure,
    /// Step budget exhausted.
    MaxSteps,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathRecord<T> {
    pub status: PathStatus,
    /// Last accepted point.
    pub x: Vec<T>,
    /// Parameter value of `x`.
    pub t: f64,
    pub steps: usize,
    pub rejected: usize,
    /// Accepted `(t, x)` pairs, filled when tracing is requested.
    pub trace: Vec<(f64, Vec<T>)>,
}

struct Scratch<T: Scalar> {
    h: Vec<T>,
    ht: Vec<T>,
    hx: DMatrix<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(n: usize) -> Self {
        Self {
            h: vec![T::zero(); n],
            ht: vec![T::zero(); n],
            hx: DMatrix::zeros(n, n),
        }
    }
}

fn tangent<T: Scalar, H: Homotopy<T>>(
    hom: &H,
    x: &[T],
    t: f64,
    s: &mut Scratch<T>,
) -> Option<Vec<T>> {
    hom.evaluate(x, t, &mut s.h, &mut s.hx, &mut s.ht);
    let rhs: Vec<T> = s.ht.iter().map(|v| -*v).collect();
    solve_linear(s.hx.clone(), &rhs)
}

fn axpy<T: Scalar>(x: &[T], a: f64, d: &[T]) -> Vec<T> {
    let a = T::from_real(a);
    x.iter().zip(d).map(|(xi, di)| *xi + a * *di).collect()
}

fn predict<T: Scalar, H: Homotopy<T>>(
    hom: &H,
    x: &[T],
    t: f64,
    dt: f64,
    predictor: Predictor,
    s: &mut Scratch<T>,
) -> Option<Vec<T>> {
    let k1 = tangent(hom, x, t, s)?;
    match predictor {
        Predictor::Euler => Some(axpy(x, dt, &k1)),
        Predictor::Rk4 => {
            let k2 = tangent(hom, &axpy(x, 0.5 * dt, &k1), t + 0.5 * dt, s)?;
            let k3 = tangent(hom, &axpy(x, 0.5 * dt, &k2), t + 0.5 * dt, s)?;
            let k4 = tangent(hom, &axpy(x, dt, &k3), t + dt, s)?;
            let sixth = T::from_real(dt / 6.0);
            let two = T::from_real(2.0);
            Some(
                (0..x.len())
                    .map(|i| x[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
                    .collect(),
            )
        }
    }
}

/// Newton corrector at fixed `t`; fails on non-contraction.
fn correct<T: Scalar, H: Homotopy<T>>(
    hom: &H,
    x: &mut Vec<T>,
    t: f64,
    cfg: &TrackerConfig,
    s: &mut Scratch<T>,
) -> bool {
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_corrector_iters {
        hom.evaluate(x, t, &mut s.h, &mut s.hx, &mut s.ht);
        let rhs: Vec<T> = s.h.iter().map(|v| -*v).collect();
        let Some(dx) = solve_linear(s.hx.clone(), &rhs) else {
            return false;
        };
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += *di;
        }
        let nd = norm2(&dx);
        let scale = 1.0 + norm2(x);
        if nd <= cfg.corrector_tol * scale {
            return true;
        }
        if nd > 0.5 * prev || nd > 0.25 * scale {
            return false;
        }
        prev = nd;
    }
    false
}

/// Tracks one solution of `H(·, t0) = 0` to `t1`.
pub fn track<T: Scalar, H: Homotopy<T>>(
    hom: &H,
    start: &[T],
    t0: f64,
    t1: f64,
    cfg: &TrackerConfig,
    trace: bool,
) -> PathRecord<T> {
    let n = hom.dim();
    let mut s = Scratch::new(n);
    let span = (t1 - t0).abs();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut x = start.to_vec();
    let mut t = t0;
    let mut h = cfg.initial_step * span;
    let mut streak = 0;
    let mut steps = 0;
    let mut rejected = 0;
    let mut record = Vec::new();
    if trace {
        record.push((t, x.clone()));
    }
    let finish = |status, x, t, steps, rejected, trace| PathRecord {
        status,
        x,
        t,
        steps,
        rejected,
        trace,
    };
    if span == 0.0 {
        return finish(PathStatus::Converged, x, t, 0, 0, record);
    }
    loop {
        let remaining = (t1 - t).abs();
        if remaining <= 0.0 {
            return finish(PathStatus::Converged, x, t1, steps, rejected, record);
        }
        if steps + rejected >= cfg.max_steps {
            return finish(PathStatus::MaxSteps, x, t, steps, rejected, record);
        }
        let last = h >= remaining;
        let dt = if last { remaining } else { h } * dir;
        let t_next = if last { t1 } else { t + dt };
        let accepted = match predict(hom, &x, t, dt, cfg.predictor, &mut s) {
            Some(mut xp) => {
                if correct(hom, &mut xp, t_next, cfg, &mut s) {
                    Some(xp)
                } else {
                    None
                }
            }
            None => None,
        };
        match accepted {
            Some(xn) => {
                x = xn;
                t = t_next;
                steps += 1;
                if trace {
                    record.push((t, x.clone()));
                }
                if norm2(&x) > cfg.divergence_norm {
                    return finish(PathStatus::Diverged, x, t, steps, rejected, record);
                }
                streak += 1;
                if streak >= 3 {
                    h = (2.0 * h).min(cfg.max_step * span);
                    streak = 0;
                }
            }
            None => {
                rejected += 1;
                streak = 0;
                h *= 0.5;
                if h < cfg.min_step * span {
                    return finish(PathStatus::StepFailure, x, t, steps, rejected, record);
                }
            }
        }
    }
}

/// Tracks every start point of a parameter family from `t0` to `t1`.
pub fn track_parameter_path<T: Scalar, H: Homotopy<T>>(
    hom: &H,
    starts: &[Vec<T>],
    t0: f64,
    t1: f64,
    cfg: &TrackerConfig,
    trace: bool,
) -> Vec<PathRecord<T>> {
    map_indexed(starts.len(), cfg.execution, |i| {
        track(hom, &starts[i], t0, t1, cfg, trace)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::ParameterFamily;

    /// x^2 - (1 + 3t) = 0
    struct Sqrt;

    impl ParameterFamily for Sqrt {
        fn dim(&self) -> usize {
            1
        }
        fn degrees(&self) -> Vec<u32> {
            vec![2]
        }
        fn evaluate<T: Scalar>(
            &self,
            x: &[T],
            t: f64,
            h: &mut [T],
            hx: Option<&mut DMatrix<T>>,
            ht: Option<&mut [T]>,
        ) {
            h[0] = x[0] * x[0] - T::from_real(1.0 + 3.0 * t);
            if let Some(j) = hx {
                j[(0, 0)] = x[0] + x[0];
            }
            if let Some(d) = ht {
                d[0] = T::from_real(-3.0);
            }
        }
    }

    /// Family that does not depend on t.
    struct Constant;

    impl ParameterFamily for Constant {
        fn dim(&self) -> usize {
            1
        }
        fn degrees(&self) -> Vec<u32> {
            vec![1]
        }
        fn evaluate<T: Scalar>(
            &self,
            x: &[T],
            _t: f64,
            h: &mut [T],
            hx: Option<&mut DMatrix<T>>,
            ht: Option<&mut [T]>,
        ) {
            h[0] = x[0] - T::from_real(0.25);
            if let Some(j) = hx {
                j[(0, 0)] = T::one();
            }
            if let Some(d) = ht {
                d[0] = T::zero();
            }
        }
    }

    #[test]
    fn tracks_real_branch_both_predictors() {
        for predictor in [Predictor::Euler, Predictor::Rk4] {
            let cfg = TrackerConfig {
                predictor,
                ..Default::default()
            };
            let rec = track(&Sqrt, &[1.0f64], 0.0, 1.0, &cfg, true);
            assert_eq!(rec.status, PathStatus::Converged);
            assert!((rec.x[0] - 2.0).abs() < 1e-12);
            assert!(rec.trace.windows(2).all(|w| w[1].0 > w[0].0));
            let back = track(&Sqrt, &[-2.0f64], 1.0, 0.0, &cfg, false);
            assert!((back.x[0] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_family_keeps_start() {
        let cfg = TrackerConfig::default();
        let recs = track_parameter_path(&Constant, &[vec![0.25f64]], 0.0, 1.0, &cfg, false);
        assert_eq!(recs[0].status, PathStatus::Converged);
        assert_eq!(recs[0].x[0], 0.25);
    }
}
