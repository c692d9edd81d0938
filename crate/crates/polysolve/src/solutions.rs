use serde::{Deserialize, Serialize};

use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    TotalDegree,
    Multistart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Endpoint in complex coordinates.
    pub point: Vec<C64>,
    /// Real-polished coordinates when the endpoint passed the reality test.
    pub real_point: Option<Vec<f64>>,
    /// `‖F‖∞` at the stored point (the real one when present).
    pub residual: f64,
    /// Ratio of largest to smallest singular value of the Jacobian.
    pub condition: f64,
    /// Number of endpoints merged into this one.
    pub multiplicity: usize,
}

impl Solution {
    pub fn is_real(&self) -> bool {
        self.real_point.is_some()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub engine: Option<Engine>,
    pub unknowns: usize,
    pub degrees: Vec<u32>,
    pub paths_tracked: u64,
    pub paths_converged: u64,
    pub paths_diverged: u64,
    pub paths_failed: u64,
    pub at_infinity: u64,
    pub duplicates_merged: u64,
    pub seed: u64,
    pub gamma: Option<[f64; 2]>,
    /// False when the engine gives no completeness guarantee.
    pub exhaustive: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub solutions: Vec<Solution>,
    pub provenance: Provenance,
}

impl SolutionSet {
    pub fn real_points(&self) -> Vec<Vec<f64>> {
        self.solutions
            .iter()
            .filter_map(|s| s.real_point.clone())
            .collect()
    }

    pub fn num_real(&self) -> usize {
        self.solutions.iter().filter(|s| s.is_real()).count()
    }
}

pub(crate) fn max_dist(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn sort_key(s: &Solution) -> Vec<f64> {
    match &s.real_point {
        Some(r) => std::iter::once(0.0).chain(r.iter().copied()).collect(),
        None => std::iter::once(1.0)
            .chain(s.point.iter().flat_map(|z| [z.re, z.im]))
            .collect(),
    }
}

fn cmp_keys(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Merges solutions closer than `radius` in the max norm and sorts the
/// survivors deterministically (real ones first, lexicographic).
pub(crate) fn dedup(mut sols: Vec<Solution>, radius: f64) -> (Vec<Solution>, u64) {
    let coords = |s: &Solution| -> Vec<C64> {
        match &s.real_point {
            Some(r) => r.iter().map(|&v| C64::new(v, 0.0)).collect(),
            None => s.point.clone(),
        }
    };
    sols.sort_by(|a, b| {
        let (ka, kb) = (coords(a), coords(b));
        ka[0].re.total_cmp(&kb[0].re)
    });
    let mut kept: Vec<Solution> = Vec::new();
    let mut kept_coords: Vec<Vec<C64>> = Vec::new();
    let mut merged = 0;
    for s in sols {
        let c = coords(&s);
        let mut hit = None;
        for k in (0..kept.len()).rev() {
            if c[0].re - kept_coords[k][0].re > radius {
                break;
            }
            if max_dist(&c, &kept_coords[k]) <= radius {
                hit = Some(k);
                break;
            }
        }
        match hit {
            Some(k) => {
                merged += 1;
                kept[k].multiplicity += s.multiplicity;
                if s.residual < kept[k].residual {
                    let mult = kept[k].multiplicity;
                    kept[k] = Solution { multiplicity: mult, ..s };
                    kept_coords[k] = c;
                }
            }
            None => {
                kept.push(s);
                kept_coords.push(c);
            }
        }
    }
    kept.sort_by(|a, b| cmp_keys(&sort_key(a), &sort_key(b)));
    (kept, merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sol(v: &[f64]) -> Solution {
        Solution {
            point: v.iter().map(|&x| C64::new(x, 0.0)).collect(),
            real_point: Some(v.to_vec()),
            residual: 0.0,
            condition: 1.0,
            multiplicity: 1,
        }
    }

    #[test]
    fn dedup_merges_close_points_only() {
        let (kept, merged) = dedup(
            vec![sol(&[1.0, 2.0]), sol(&[1.0 + 5e-8, 2.0]), sol(&[1.0, 2.0 + 1e-6]), sol(&[-3.0, 0.0])],
            1e-7,
        );
        assert_eq!(merged, 1);
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[0].real_point.as_ref().unwrap()[0], -3.0);
        assert_eq!(kept.iter().map(|s| s.multiplicity).sum::<usize>(), 4);
    }
}
