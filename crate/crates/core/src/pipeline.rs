//! End-to-end analysis of one framework: critical points, snappability and
//! singularity distance, collected into serializable reports.

use std::collections::BTreeMap;

use polysolve::{SolveError, System, TrackerConfig};
use serde::{Deserialize, Serialize};

use crate::critical::{
    enumerate_critical_points, transition_graph, CriticalSet, FlowOptions, GradientSystem, Kind, SolveOptions,
    Strategy, TransitionGraph,
};
use crate::energy::DensityMode;
use crate::error::{Result, SnapError};
use crate::framework::Framework;
use crate::landscape::Landscape;
use crate::sg::{
    direct_kinematics, metric_critical_points, sg_singularity_distance, sg_snappability, KinematicsSystem, Manipulator, Metric, Pose,
    SgSearch,
};
use crate::singular::{
    bound, global_singularity_distance, shaky_points, singularity_distance, Bound, ShakySearch, SingularOptions,
    Witness,
};
use crate::snap::{
    choose_mode, deformation_statistics, global_snappability, interpolation_seeds, DeformStats, SnapMode,
    SnapOptions,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Homotopy when the total degree fits the budget, multistart otherwise.
    #[default]
    Auto,
    Homotopy,
    Multistart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub engine: Engine,
    /// Largest number of homotopy paths.
    pub budget: u64,
    pub seed: u64,
    pub real_tol: f64,
    pub density: DensityMode,
    /// Multistart seeds per pair of known realizations.
    pub per_pair: usize,
    /// Multistart perturbation radius around interpolated seeds.
    pub radius: f64,
    /// Random multistart seeds when fewer than two realizations are known.
    pub random_starts: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            engine: Engine::Auto,
            budget: 10_000,
            seed: 7,
            real_tol: 1e-8,
            density: DensityMode::Full,
            per_pair: 200,
            radius: 0.1,
            random_starts: 2000,
        }
    }
}

impl AnalysisOptions {
    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            seed: self.seed,
            real_tol: self.real_tol,
            path_budget: self.budget,
            ..Default::default()
        }
    }
}

/// Number of start paths of a total-degree homotopy, saturating.
pub fn bezout_number<S: System>(sys: &S) -> u64 {
    sys.degrees().iter().fold(1u64, |acc, &d| acc.saturating_mul(d as u64))
}

/// Landscape with the first named realization as orientation reference.
pub fn landscape(fw: &Framework, opts: &AnalysisOptions) -> Result<Landscape> {
    let reference = fw.realizations.values().next().map(|v| v.as_slice());
    Ok(Landscape::new(fw, opts.density, reference)?)
}

/// Picks the solver strategy for the gradient system.
pub fn strategy(fw: &Framework, ls: &Landscape, opts: &AnalysisOptions) -> Result<Strategy> {
    let paths = bezout_number(&GradientSystem::new(ls));
    let homotopy = match opts.engine {
        Engine::Homotopy => {
            if paths > opts.budget {
                return Err(SolveError::BudgetExceeded {
                    paths,
                    budget: opts.budget,
                }
                .into());
            }
            true
        }
        Engine::Multistart => false,
        Engine::Auto => paths <= opts.budget,
    };
    if homotopy {
        return Ok(Strategy::TotalDegree);
    }
    let known: Vec<Vec<f64>> = fw.realizations.values().cloned().collect();
    let scale = ls.mean_length();
    if known.len() >= 2 {
        let mut ms = interpolation_seeds(&known, opts.per_pair, opts.radius, opts.seed);
        ms.random_starts = 0;
        return Ok(Strategy::Multistart(ms));
    }
    let m = ls.num_params();
    Ok(Strategy::Multistart(polysolve::MultistartConfig {
        random_starts: opts.random_starts,
        center: known.first().cloned().unwrap_or_else(|| vec![0.0; m]),
        radius: scale,
        seeds: known,
        ..Default::default()
    }))
}

pub fn critical_set(fw: &Framework, ls: &Landscape, opts: &AnalysisOptions) -> Result<CriticalSet> {
    let strategy = strategy(fw, ls, opts)?;
    enumerate_critical_points(
        ls,
        &SolveOptions {
            strategy,
            tracker: opts.tracker(),
        },
    )
}

/// Labels critical points by the matching named realization, else `C<k>`.
pub fn point_names(fw: &Framework, ls: &Landscape, set: &CriticalSet) -> Vec<String> {
    let tol = 1e-6 * ls.mean_length();
    let mut names: Vec<String> = (0..set.points.len()).map(|i| format!("C{}", i + 1)).collect();
    for (name, theta) in &fw.realizations {
        if let Some(i) = set.find(theta, tol) {
            names[i] = name.clone();
        }
    }
    names
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub name: String,
    pub kind: Kind,
    pub value: f64,
    pub undeformed: bool,
    pub shaky: bool,
    pub negative_directions: usize,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalReport {
    pub framework: String,
    pub nu: Option<f64>,
    pub engine: String,
    pub paths_tracked: u64,
    pub exhaustive: bool,
    /// Real solutions of the gradient system.
    pub real_solutions: usize,
    pub minima: usize,
    pub saddles: usize,
    pub points: Vec<PointRow>,
}

fn engine_name(set: &CriticalSet) -> String {
    set.provenance
        .engine
        .map(|e| format!("{e:?}").to_lowercase())
        .unwrap_or_else(|| "none".into())
}

pub fn critical_report(fw: &Framework, ls: &Landscape, set: &CriticalSet) -> CriticalReport {
    let names = point_names(fw, ls, set);
    CriticalReport {
        framework: fw.name.clone(),
        nu: (!fw.bodies.is_empty()).then_some(fw.material.nu),
        engine: engine_name(set),
        paths_tracked: set.provenance.paths_tracked,
        exhaustive: set.exhaustive(),
        real_solutions: set.real_solutions,
        minima: set.minima().count(),
        saddles: set.saddles().count(),
        points: set
            .points
            .iter()
            .zip(&names)
            .map(|(p, name)| PointRow {
                name: name.clone(),
                kind: p.kind(),
                value: p.value,
                undeformed: p.undeformed,
                shaky: p.shaky(),
                negative_directions: p.classification.negative_directions(),
                theta: p.theta.clone(),
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseRow {
    pub base: String,
    pub base_shaky: bool,
    /// `None` encodes an infinite value.
    pub snappability: Option<f64>,
    pub saddle: Option<String>,
    pub saddle_shaky: bool,
    pub ties: Vec<String>,
    pub deformation: Option<DeformStats>,
    pub path_steps: Option<usize>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapReport {
    #[serde(flatten)]
    pub critical: CriticalReport,
    pub mode: SnapMode,
    pub snappability: Option<f64>,
    /// Set when no saddle connects to any base.
    pub infinite: bool,
    pub lower_bound: Option<f64>,
    pub bases: Vec<BaseRow>,
}

/// Everything computed for one framework.
pub struct Analysis {
    pub landscape: Landscape,
    pub set: CriticalSet,
    pub names: Vec<String>,
    pub bases: Vec<usize>,
    pub mode: SnapMode,
    pub graph: Option<TransitionGraph>,
}

impl Analysis {
    pub fn run(fw: &Framework, opts: &AnalysisOptions) -> Result<Self> {
        let landscape = landscape(fw, opts)?;
        let set = critical_set(fw, &landscape, opts)?;
        let names = point_names(fw, &landscape, &set);
        let mode = choose_mode(&landscape, opts.seed);
        let graph = (mode == SnapMode::Descent).then(|| transition_graph(&landscape, &set, &FlowOptions::default()));
        let bases: Vec<usize> = set.undeformed().map(|(i, _)| i).collect();
        if bases.is_empty() {
            return Err(SnapError::Numerical("no undeformed realization found".into()));
        }
        Ok(Self {
            landscape,
            set,
            names,
            bases,
            mode,
            graph,
        })
    }

    fn base_points(&self) -> Vec<Vec<f64>> {
        self.bases.iter().map(|&i| self.set.points[i].theta.clone()).collect()
    }

    pub fn snap_options(&self, opts: &AnalysisOptions) -> SnapOptions {
        let mut o = SnapOptions {
            mode: Some(self.mode),
            ..Default::default()
        };
        o.tracker.seed = opts.seed;
        o.tracker.real_tol = opts.real_tol;
        o
    }

    pub fn snappability(&self, fw: &Framework, opts: &AnalysisOptions) -> Result<SnapReport> {
        let ls = &self.landscape;
        let global = global_snappability(ls, &self.base_points(), &self.set, self.graph.as_ref(), &self.snap_options(opts))?;
        let rows = global
            .table
            .iter()
            .zip(&self.bases)
            .map(|(r, &b)| {
                let deformation = r
                    .saddle
                    .map(|s| deformation_statistics(&ls.lengths, &ls.edge_lengths(&self.set.points[s].theta)))
                    .transpose()?;
                Ok(BaseRow {
                    base: self.names[b].clone(),
                    base_shaky: r.base_shaky,
                    snappability: r.value,
                    saddle: r.saddle.map(|s| self.names[s].clone()),
                    saddle_shaky: r.saddle_shaky,
                    ties: r.ties.iter().map(|&t| self.names[t].clone()).collect(),
                    deformation,
                    path_steps: r.path.as_ref().map(|p| p.steps),
                    warnings: r.warnings.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SnapReport {
            critical: critical_report(fw, ls, &self.set),
            mode: self.mode,
            snappability: global.value,
            infinite: global.value.is_none(),
            lower_bound: global.lower_bound,
            bases: rows,
        })
    }

    pub fn singularity(&self, fw: &Framework, opts: &AnalysisOptions) -> Result<SingularReport> {
        let ls = &self.landscape;
        let bases = self.base_points();
        let search = ShakySearch {
            seed: opts.seed,
            ..Default::default()
        };
        let candidates = shaky_points(ls, &bases, Some(&self.set), &search)?;
        let mut sopts = SingularOptions {
            mode: Some(self.mode),
            ..Default::default()
        };
        sopts.tracker.seed = opts.seed;
        sopts.tracker.real_tol = opts.real_tol;
        let snap = global_snappability(ls, &bases, &self.set, self.graph.as_ref(), &self.snap_options(opts))?;
        let table: Vec<_> = bases
            .iter()
            .map(|b| singularity_distance(ls, b, &candidates, Some(&self.set), &sopts))
            .collect();
        let rows = table
            .iter()
            .zip(&snap.table)
            .zip(&self.bases)
            .map(|((r, s), &b)| SingularRow {
                base: self.names[b].clone(),
                distance: r.value,
                theta: r.point.as_ref().map(|p| p.theta.clone()),
                witness: r.witness.as_ref().map(|w| match w {
                    Witness::Base => "base".to_string(),
                    Witness::Path(_) => "path".to_string(),
                    Witness::Descent { .. } => "descent".to_string(),
                }),
                bound: bound(s, r, 1e-9),
                warnings: r.warnings.clone(),
            })
            .collect();
        Ok(SingularReport {
            framework: fw.name.clone(),
            mode: self.mode,
            candidates: candidates.len(),
            singularity_distance: global_singularity_distance(&table),
            snappability: snap.value,
            bases: rows,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularRow {
    pub base: String,
    pub distance: Option<f64>,
    pub theta: Option<Vec<f64>>,
    pub witness: Option<String>,
    pub bound: Bound,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularReport {
    pub framework: String,
    pub mode: SnapMode,
    /// Shaky constrained critical points found.
    pub candidates: usize,
    pub singularity_distance: Option<f64>,
    pub snappability: Option<f64>,
    pub bases: Vec<SingularRow>,
}

/// Count summary for input validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub framework: String,
    pub dimension: usize,
    pub vertices: usize,
    pub bars: usize,
    pub bodies: usize,
    pub parameters: usize,
    pub edge_classes: usize,
    pub isostatic: bool,
    pub overbraced: bool,
    pub realizations: BTreeMap<String, f64>,
}

/// Checks counts, rank and how well each named realization fits the lengths.
pub fn validate(fw: &Framework, seed: u64) -> Result<ValidationReport> {
    let report = crate::rigidity::isostatic_check(fw, seed)?;
    let ls = Landscape::new(fw, DensityMode::Full, fw.realizations.values().next().map(|v| v.as_slice()))?;
    let realizations = fw
        .realizations
        .iter()
        .map(|(k, v)| {
            let dev = ls
                .edge_lengths(v)
                .iter()
                .zip(&ls.lengths)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            (k.clone(), dev)
        })
        .collect();
    let (vertices, bars) = fw.counts();
    Ok(ValidationReport {
        framework: fw.name.clone(),
        dimension: fw.dimension,
        vertices,
        bars,
        bodies: fw.bodies.len(),
        parameters: report.reduced_unknowns,
        edge_classes: report.reduced_constraints,
        isostatic: report.reduced_isostatic,
        overbraced: report.reduced_constraints > report.reduced_unknowns,
        realizations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub name: String,
    /// Platform anchor coordinates `x1 x2 x3 y1 y2 y3 z1 z2 z3`.
    pub coordinates: Vec<f64>,
    pub below_base: bool,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: Metric,
    pub base: String,
    pub distance: Option<f64>,
    /// Lowest saddle of any kind reached from the base.
    pub snappability: Option<f64>,
    pub coordinates: Option<Vec<f64>>,
    pub line_complex_rank: Option<usize>,
    pub base_shaky: bool,
    pub critical_points: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgReport {
    pub manipulator: String,
    pub paths_tracked: u64,
    pub poses: Vec<PoseRow>,
    pub distances: Vec<MetricRow>,
    /// Explains an empty pose list.
    pub note: Option<String>,
}

/// Direct kinematics and both singularity distances of a manipulator.
pub fn sg_report(m: &Manipulator, metrics: &[Metric], opts: &AnalysisOptions) -> Result<SgReport> {
    let strategy = match opts.engine {
        Engine::Multistart => Strategy::Multistart(polysolve::MultistartConfig {
            random_starts: opts.random_starts,
            center: vec![0.0; 9],
            radius: 2.0 * m.legs.iter().copied().fold(0.0, f64::max),
            ..Default::default()
        }),
        _ => {
            let paths = bezout_number(&KinematicsSystem::new(m));
            if paths > opts.budget {
                return Err(SolveError::BudgetExceeded {
                    paths,
                    budget: opts.budget,
                }
                .into());
            }
            Strategy::TotalDegree
        }
    };
    let tracker = opts.tracker();
    let poses = direct_kinematics(m, &strategy, &tracker)?;
    let paths_tracked = match strategy {
        Strategy::TotalDegree => bezout_number(&KinematicsSystem::new(m)),
        Strategy::Multistart(ref ms) => ms.random_starts as u64,
    };
    let mut above = 0;
    let mut below = 0;
    let rows: Vec<PoseRow> = poses
        .iter()
        .map(|p| {
            let name = if p.below_base {
                below += 1;
                format!("W{below}")
            } else {
                above += 1;
                format!("V{above}")
            };
            PoseRow {
                name,
                coordinates: p.x.clone(),
                below_base: p.below_base,
                residual: p.residual,
            }
        })
        .collect();
    let mut report = SgReport {
        manipulator: m.name.clone().unwrap_or_default(),
        paths_tracked,
        poses: rows,
        distances: Vec::new(),
        note: None,
    };
    if poses.is_empty() {
        report.note = Some("no real assembly: the leg lengths admit no pose".into());
        return Ok(report);
    }
    let bases: Vec<(String, &Pose)> = report
        .poses
        .iter()
        .zip(&poses)
        .filter(|(_, p)| !p.below_base)
        .map(|(r, p)| (r.name.clone(), p))
        .collect();
    let above_poses: Vec<Pose> = bases.iter().map(|(_, p)| (*p).clone()).collect();
    let cfg = TrackerConfig {
        max_step: 0.02,
        ..tracker
    };
    for &metric in metrics {
        let search = SgSearch {
            seed: opts.seed,
            ..Default::default()
        };
        let critical = metric_critical_points(m, metric, &above_poses, &search)?;
        for (name, pose) in &bases {
            let r = sg_singularity_distance(m, &pose.x, metric, &critical, &cfg, 1e-6)?;
            let snap = sg_snappability(m, &pose.x, metric, &critical, &cfg, 1e-6)?;
            report.distances.push(MetricRow {
                metric,
                base: name.clone(),
                distance: r.value,
                snappability: snap.value,
                coordinates: r.saddle.as_ref().map(|s| s.x.clone()),
                line_complex_rank: r.saddle.as_ref().map(|s| s.line_complex.rank),
                base_shaky: r.base_shaky,
                critical_points: critical.len(),
                warnings: r.warnings,
            });
        }
    }
    Ok(report)
}
