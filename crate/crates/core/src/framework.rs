//! Pin-jointed body-bar frameworks, their bar-joint expansion, coordinate
//! parameterizations and volumetric dimensioning.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::elasticity::{cayley_menger_volume, Material, DEGENERACY_TOL};
use crate::error::ModelError;
use crate::expr::Expr;

// ---------------------------------------------------------------------------
// File schema

/// A number or an arithmetic expression such as `"sqrt(17)"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumberSpec {
    Num(f64),
    Expr(String),
}

impl NumberSpec {
    pub fn value(&self) -> Result<f64, ModelError> {
        match self {
            NumberSpec::Num(v) => Ok(*v),
            NumberSpec::Expr(s) => Expr::parse(s)?.eval(),
        }
    }

    fn affine_in(&self, params: &[String]) -> Result<AffineExpr, ModelError> {
        match self {
            NumberSpec::Num(v) => Ok(AffineExpr::constant(*v)),
            NumberSpec::Expr(s) => {
                let (constant, terms) = Expr::parse(s)?.affine_in(params)?;
                Ok(AffineExpr { constant, terms })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyKind {
    Panel,
    Polyhedron,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub kind: BodyKind,
    pub vertices: Vec<String>,
}

/// Vertex coordinates, either in expansion order or keyed by vertex name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RealizationSpec {
    List(Vec<Vec<f64>>),
    Map(BTreeMap<String, Vec<f64>>),
}

/// Free parameters and affine coordinate templates per vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterizationSpec {
    pub params: Vec<String>,
    pub coordinates: BTreeMap<String, Vec<NumberSpec>>,
    /// Parameters restricted to positive values (mirror-image convention).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub positive: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub nu: f64,
}

/// On-disk description of a framework.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameworkFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joints: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bodies: Vec<BodySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bars: Vec<[String; 2]>,
    /// Pairs of vertex names denoting the same point.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pin_joints: Vec<[String; 2]>,
    /// Lengths keyed `"A-B"`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub lengths: BTreeMap<String, NumberSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realization: Option<RealizationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameterization: Option<ParameterizationSpec>,
    /// Named parameter vectors, e.g. undeformed realizations or saddles.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub realizations: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialSpec>,
}

impl FrameworkFile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("framework serializes")
    }
}

// ---------------------------------------------------------------------------
// Expanded model

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    /// Explicit bar (green edge).
    pub bar: bool,
    /// Bodies whose inner graph contains the edge.
    pub bodies: Vec<usize>,
}

/// The bar-joint framework obtained by replacing bodies with complete graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarJointFramework {
    pub dimension: usize,
    pub vertices: Vec<String>,
    pub edges: Vec<Edge>,
    pub lengths: Vec<f64>,
}

impl BarJointFramework {
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        self.edges.iter().position(|e| e.a == a && e.b == b)
    }

    pub fn edge_name(&self, k: usize) -> String {
        let e = &self.edges[k];
        format!("{}-{}", self.vertices[e.a], self.vertices[e.b])
    }

    pub fn mean_length(&self) -> f64 {
        self.lengths.iter().sum::<f64>() / self.lengths.len().max(1) as f64
    }

    /// Squared lengths.
    pub fn squared(&self) -> Vec<f64> {
        self.lengths.iter().map(|l| l * l).collect()
    }

    /// Edge lengths measured in a realization.
    pub fn measure(&self, coords: &[Vec<f64>]) -> Vec<f64> {
        self.edges
            .iter()
            .map(|e| dist(&coords[e.a], &coords[e.b]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub kind: BodyKind,
    pub vertices: Vec<usize>,
    /// Non-degenerate triangles (panels) or tetrahedra (polyhedra), as
    /// ascending vertex tuples.
    pub simplices: Vec<Vec<usize>>,
}

impl Body {
    pub fn simplex_dim(&self) -> usize {
        match self.kind {
            BodyKind::Panel => 2,
            BodyKind::Polyhedron => 3,
        }
    }
}

/// An affine form `c + Σ a_k θ_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn param(k: usize) -> Self {
        Self {
            constant: 0.0,
            terms: vec![(k, 1.0)],
        }
    }

    pub fn eval<T: polysolve::Scalar>(&self, theta: &[T]) -> T {
        let mut v = T::from_real(self.constant);
        for &(k, a) in &self.terms {
            v += theta[k] * T::from_real(a);
        }
        v
    }
}

/// Vertex coordinates as affine functions of free parameters.
///
/// Fixed coordinates remove the isometries (frame pinning) or encode a
/// symmetry assumption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameterization {
    pub names: Vec<String>,
    /// `coords[vertex][axis]`.
    pub coords: Vec<Vec<AffineExpr>>,
    /// Parameters required to be positive.
    pub positive: Vec<usize>,
    /// Coordinates fixed to constants, as `(vertex, axis)`.
    pub pinned: Vec<(usize, usize)>,
}

impl Parameterization {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Standard frame pinning: first vertex at the origin, second on the
    /// positive x axis, third in the xy plane with positive y (3D).
    pub fn frame_pinning(vertices: &[String], dimension: usize) -> Self {
        let mut names = Vec::new();
        let mut coords = Vec::new();
        let mut positive = Vec::new();
        let mut pinned = Vec::new();
        let axes = ["x", "y", "z"];
        for (v, vname) in vertices.iter().enumerate() {
            let mut row = Vec::new();
            for (axis, aname) in axes.iter().enumerate().take(dimension) {
                // vertex v < dimension keeps only its first v coordinates free
                if v > axis {
                    let k = names.len();
                    names.push(format!("{vname}.{aname}"));
                    if (v == 1 && axis == 0) || (v == 2 && axis == 1 && dimension == 3) {
                        positive.push(k);
                    }
                    row.push(AffineExpr::param(k));
                } else {
                    pinned.push((v, axis));
                    row.push(AffineExpr::constant(0.0));
                }
            }
            coords.push(row);
        }
        Self {
            names,
            coords,
            positive,
            pinned,
        }
    }

    pub fn positions<T: polysolve::Scalar>(&self, theta: &[T]) -> Vec<Vec<T>> {
        self.coords
            .iter()
            .map(|row| row.iter().map(|c| c.eval(theta)).collect())
            .collect()
    }

    pub fn positions_f64(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        self.positions(theta)
    }

    /// Least-squares parameters reproducing the given coordinates.
    pub fn fit(&self, coords: &[Vec<f64>]) -> Vec<f64> {
        let m = self.len();
        let rows: usize = self.coords.iter().map(Vec::len).sum();
        let mut a = DMatrix::zeros(rows, m);
        let mut b = nalgebra::DVector::zeros(rows);
        let mut r = 0;
        for (v, row) in self.coords.iter().enumerate() {
            for (axis, c) in row.iter().enumerate() {
                for &(k, w) in &c.terms {
                    a[(r, k)] = w;
                }
                b[r] = coords[v][axis] - c.constant;
                r += 1;
            }
        }
        a.svd(true, true)
            .solve(&b, 1e-14)
            .map(|x| x.as_slice().to_vec())
            .unwrap_or_else(|_| vec![0.0; m])
    }
}

/// A validated framework: combinatorics, intrinsic metric and coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Framework {
    pub name: String,
    pub dimension: usize,
    pub joints: Vec<usize>,
    pub bodies: Vec<Body>,
    /// Explicit bars as edge indices into the expansion.
    pub bars: Vec<usize>,
    pub expanded: BarJointFramework,
    pub parameterization: Parameterization,
    pub realizations: BTreeMap<String, Vec<f64>>,
    pub material: Material,
    pub source: FrameworkFile,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut j = i;
        while self.0[j] != r {
            let next = self.0[j];
            self.0[j] = r;
            j = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

fn parse_edge_key(key: &str) -> Option<(&str, &str)> {
    key.split_once('-').map(|(a, b)| (a.trim(), b.trim()))
}

impl Framework {
    pub fn from_json(text: &str) -> Result<Self, crate::error::SnapError> {
        let file = FrameworkFile::from_json(text)?;
        Ok(Self::from_file(file)?)
    }

    /// Validates a file and expands its bodies.
    pub fn from_file(file: FrameworkFile) -> Result<Self, ModelError> {
        let d = file.dimension;
        if d != 2 && d != 3 {
            return Err(ModelError::Dimension(d));
        }
        // Collect names in order of first appearance.
        let mut raw: Vec<String> = Vec::new();
        let mut raw_index: HashMap<String, usize> = HashMap::new();
        let mut intern = |name: &str, raw: &mut Vec<String>| -> usize {
            if let Some(&i) = raw_index.get(name) {
                return i;
            }
            raw.push(name.to_string());
            raw_index.insert(name.to_string(), raw.len() - 1);
            raw.len() - 1
        };
        for j in &file.joints {
            intern(j, &mut raw);
        }
        for (i, b) in file.bodies.iter().enumerate() {
            let min = match b.kind {
                BodyKind::Panel => 3,
                BodyKind::Polyhedron => 4,
            };
            if b.vertices.len() < min {
                return Err(ModelError::SmallBody {
                    index: i,
                    count: b.vertices.len(),
                });
            }
            if b.kind == BodyKind::Polyhedron && d == 2 {
                return Err(ModelError::Invalid(format!(
                    "body {i}: polyhedron in a planar framework"
                )));
            }
            for v in &b.vertices {
                intern(v, &mut raw);
            }
        }
        for [a, b] in &file.bars {
            intern(a, &mut raw);
            intern(b, &mut raw);
        }
        let known: BTreeSet<String> = raw.iter().cloned().collect();
        let mut uf = UnionFind((0..raw.len()).collect());
        let lookup: HashMap<String, usize> =
            raw.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        for [a, b] in &file.pin_joints {
            for n in [a, b] {
                if !known.contains(n) {
                    return Err(ModelError::MissingPinVertex(n.clone()));
                }
            }
            uf.union(lookup[a], lookup[b]);
        }
        // Representatives become the expanded vertices.
        let mut vid = vec![usize::MAX; raw.len()];
        let mut vertices = Vec::new();
        for i in 0..raw.len() {
            let r = uf.find(i);
            if vid[r] == usize::MAX {
                vid[r] = vertices.len();
                vertices.push(raw[r].clone());
            }
            vid[i] = vid[r];
        }
        let resolve = |name: &str| -> Result<usize, ModelError> {
            lookup
                .get(name)
                .map(|&i| vid[i])
                .ok_or_else(|| ModelError::UnknownVertex(name.to_string()))
        };

        // Edges: bars first, then inner edges.
        let mut edges: Vec<Edge> = Vec::new();
        let mut edge_at: HashMap<(usize, usize), usize> = HashMap::new();
        let mut add_edge = |a: usize, b: usize, edges: &mut Vec<Edge>| -> Result<usize, ModelError> {
            if a == b {
                return Err(ModelError::Invalid(format!(
                    "edge joins vertex '{}' to itself",
                    vertices[a]
                )));
            }
            let key = if a < b { (a, b) } else { (b, a) };
            if let Some(&k) = edge_at.get(&key) {
                return Ok(k);
            }
            edges.push(Edge {
                a: key.0,
                b: key.1,
                bar: false,
                bodies: Vec::new(),
            });
            edge_at.insert(key, edges.len() - 1);
            Ok(edges.len() - 1)
        };
        let mut bars = Vec::new();
        for [a, b] in &file.bars {
            let k = add_edge(resolve(a)?, resolve(b)?, &mut edges)?;
            edges[k].bar = true;
            bars.push(k);
        }
        let mut bodies = Vec::new();
        for (i, spec) in file.bodies.iter().enumerate() {
            let mut vs: Vec<usize> = spec
                .vertices
                .iter()
                .map(|n| resolve(n))
                .collect::<Result<_, _>>()?;
            let unique: BTreeSet<usize> = vs.iter().copied().collect();
            if unique.len() != vs.len() {
                return Err(ModelError::Invalid(format!(
                    "body {i} lists an identified vertex twice"
                )));
            }
            for x in 0..vs.len() {
                for y in x + 1..vs.len() {
                    let k = add_edge(vs[x], vs[y], &mut edges)?;
                    if !edges[k].bodies.contains(&i) {
                        edges[k].bodies.push(i);
                    }
                }
            }
            vs.shrink_to_fit();
            bodies.push(Body {
                kind: spec.kind,
                vertices: vs,
                simplices: Vec::new(),
            });
        }
        let joints = file
            .joints
            .iter()
            .map(|n| resolve(n))
            .collect::<Result<Vec<_>, _>>()?;

        // Metric.
        let realization = match &file.realization {
            None => None,
            Some(RealizationSpec::List(rows)) => {
                if rows.len() != vertices.len() {
                    return Err(ModelError::Mismatch {
                        expected: vertices.len(),
                        got: rows.len(),
                    });
                }
                Some(rows.clone())
            }
            Some(RealizationSpec::Map(map)) => {
                let mut rows = vec![Vec::new(); vertices.len()];
                for (name, c) in map {
                    rows[resolve(name)?] = c.clone();
                }
                Some(rows)
            }
        };
        if let Some(rows) = &realization {
            for (v, r) in rows.iter().enumerate() {
                if r.len() != d {
                    return Err(ModelError::Invalid(format!(
                        "realization of '{}' has {} coordinates",
                        vertices[v],
                        r.len()
                    )));
                }
            }
        }
        let mut lengths = vec![f64::NAN; edges.len()];
        let mut have = vec![false; edges.len()];
        for (key, val) in &file.lengths {
            let (a, b) = parse_edge_key(key)
                .ok_or_else(|| ModelError::Invalid(format!("length key '{key}' is not 'A-B'")))?;
            let (a, b) = (resolve(a)?, resolve(b)?);
            let k = edge_at
                .get(&if a < b { (a, b) } else { (b, a) })
                .copied()
                .ok_or_else(|| ModelError::StrayLength(key.clone()))?;
            let v = val.value()?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::NonPositiveLength {
                    edge: key.clone(),
                    value: v,
                });
            }
            lengths[k] = v;
            have[k] = true;
        }
        for k in 0..edges.len() {
            if have[k] {
                continue;
            }
            let name = format!("{}-{}", vertices[edges[k].a], vertices[edges[k].b]);
            match &realization {
                Some(rows) => {
                    let v = dist(&rows[edges[k].a], &rows[edges[k].b]);
                    if !(v > 0.0) {
                        return Err(ModelError::NonPositiveLength { edge: name, value: v });
                    }
                    lengths[k] = v;
                }
                None => return Err(ModelError::MissingLength(name)),
            }
        }
        let expanded = BarJointFramework {
            dimension: d,
            vertices: vertices.clone(),
            edges,
            lengths,
        };

        // Simplices of each body and eager feasibility checks.
        let mean = expanded.mean_length();
        for (i, body) in bodies.iter_mut().enumerate() {
            body.simplices = body_simplices(&expanded, body, mean, i)?;
            if body.simplices.is_empty() {
                return Err(ModelError::Degenerate(format!(
                    "body {i} has no non-degenerate simplex"
                )));
            }
        }

        // Coordinates.
        let parameterization = match &file.parameterization {
            Some(spec) => build_parameterization(spec, &expanded, &resolve)?,
            None => Parameterization::frame_pinning(&expanded.vertices, d),
        };
        let mut realizations = file.realizations.clone();
        for (name, theta) in &realizations {
            if theta.len() != parameterization.len() {
                return Err(ModelError::Parameterization(format!(
                    "realization '{name}' has {} values for {} parameters",
                    theta.len(),
                    parameterization.len()
                )));
            }
        }
        if let Some(rows) = &realization {
            if file.parameterization.is_none() && file.realizations.is_empty() {
                let pinned = pin_to_frame(rows, d);
                realizations.insert("given".into(), parameterization.fit(&pinned));
            } else if file.realizations.is_empty() {
                realizations.insert("given".into(), parameterization.fit(rows));
            }
        }
        let material = match &file.material {
            Some(m) => Material::new(m.nu)?,
            None => Material::default(),
        };
        Ok(Self {
            name: file.name.clone().unwrap_or_else(|| "framework".into()),
            dimension: d,
            joints,
            bodies,
            bars,
            expanded,
            parameterization,
            realizations,
            material,
            source: file,
        })
    }

    pub fn to_file(&self) -> FrameworkFile {
        self.source.clone()
    }

    /// Vertex and edge counts of the expansion.
    pub fn counts(&self) -> (usize, usize) {
        (self.expanded.vertices.len(), self.expanded.edges.len())
    }

    pub fn has_polyhedra(&self) -> bool {
        self.bodies.iter().any(|b| b.kind == BodyKind::Polyhedron)
    }

    pub fn vertex(&self, name: &str) -> Option<usize> {
        self.expanded.vertices.iter().position(|v| v == name)
    }

    /// A copy with all lengths scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for l in &mut out.expanded.lengths {
            *l *= factor;
        }
        for row in &mut out.parameterization.coords {
            for c in row {
                c.constant *= factor;
            }
        }
        for theta in out.realizations.values_mut() {
            for t in theta.iter_mut() {
                *t *= factor;
            }
        }
        out
    }

    /// Replaces the Poisson ratio.
    pub fn with_nu(&self, nu: f64) -> Result<Self, ModelError> {
        let mut out = self.clone();
        out.material = Material::new(nu)?;
        Ok(out)
    }
}

/// Moves a realization into the standard pinned frame.
pub fn pin_to_frame(rows: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    let o = rows[0].clone();
    let shifted: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&o).map(|(a, b)| a - b).collect())
        .collect();
    if n < 2 {
        return shifted;
    }
    // Gram-Schmidt on v1, v2 gives the frame axes.
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for v in shifted.iter().skip(1) {
        if axes.len() == d {
            break;
        }
        let mut w = v.clone();
        for a in &axes {
            let p: f64 = w.iter().zip(a).map(|(x, y)| x * y).sum();
            for (wi, ai) in w.iter_mut().zip(a) {
                *wi -= p * ai;
            }
        }
        let nw = norm(&w);
        if nw > 1e-12 * (1.0 + norm(v)) {
            axes.push(w.iter().map(|x| x / nw).collect());
        }
        if axes.len() == d - 1 {
            break;
        }
    }
    if axes.len() == d - 1 {
        // Complete the frame with the same handedness as the identity.
        let last = if d == 2 {
            vec![-axes[0][1], axes[0][0]]
        } else {
            let (a, b) = (Vector3::from_row_slice(&axes[0]), Vector3::from_row_slice(&axes[1]));
            a.cross(&b).as_slice().to_vec()
        };
        axes.push(last);
    }
    shifted
        .iter()
        .map(|r| {
            axes.iter()
                .map(|a| a.iter().zip(r).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect()
}

fn body_simplices(
    fw: &BarJointFramework,
    body: &Body,
    mean: f64,
    index: usize,
) -> Result<Vec<Vec<usize>>, ModelError> {
    let vs = &body.vertices;
    let len = |a: usize, b: usize| fw.lengths[fw.edge_index(a, b).expect("inner edge")];
    let mut out = Vec::new();
    let n = vs.len();
    let mut sorted = vs.clone();
    sorted.sort_unstable();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (sorted[i], sorted[j], sorted[k]);
                let sq = [len(a, b).powi(2), len(a, c).powi(2), len(b, c).powi(2)];
                let area = cayley_menger_volume(&sq).map_err(|_| {
                    ModelError::NotEmbeddable(format!(
                        "body {index}: triangle {}-{}-{} violates the triangle inequality",
                        fw.vertices[a], fw.vertices[b], fw.vertices[c]
                    ))
                })?;
                if body.kind == BodyKind::Panel {
                    if area > DEGENERACY_TOL * mean * mean {
                        out.push(vec![a, b, c]);
                    }
                    continue;
                }
                for l in k + 1..n {
                    let e = sorted[l];
                    let sq6 = [
                        len(a, b).powi(2),
                        len(a, c).powi(2),
                        len(a, e).powi(2),
                        len(b, c).powi(2),
                        len(b, e).powi(2),
                        len(c, e).powi(2),
                    ];
                    let vol = cayley_menger_volume(&sq6).map_err(|err| {
                        ModelError::NotEmbeddable(format!(
                            "body {index}: tetrahedron {}-{}-{}-{}: {err}",
                            fw.vertices[a], fw.vertices[b], fw.vertices[c], fw.vertices[e]
                        ))
                    })?;
                    if vol > DEGENERACY_TOL * mean.powi(3) {
                        out.push(vec![a, b, c, e]);
                    }
                }
            }
        }
    }
    if body.kind == BodyKind::Panel && n > 3 && fw.dimension == 3 {
        // Planarity: every 4-subset must be flat.
        for w in sorted.windows(4) {
            let (a, b, c, e) = (w[0], w[1], w[2], w[3]);
            let sq6 = [
                len(a, b).powi(2),
                len(a, c).powi(2),
                len(a, e).powi(2),
                len(b, c).powi(2),
                len(b, e).powi(2),
                len(c, e).powi(2),
            ];
            let vol = cayley_menger_volume(&sq6).unwrap_or(f64::INFINITY);
            if vol > 1e-8 * mean.powi(3) {
                return Err(ModelError::NotEmbeddable(format!(
                    "panel {index} is not planar (volume {vol:e})"
                )));
            }
        }
    }
    Ok(out)
}

fn build_parameterization(
    spec: &ParameterizationSpec,
    fw: &BarJointFramework,
    resolve: &dyn Fn(&str) -> Result<usize, ModelError>,
) -> Result<Parameterization, ModelError> {
    let d = fw.dimension;
    let mut coords: Vec<Option<Vec<AffineExpr>>> = vec![None; fw.vertices.len()];
    for (name, row) in &spec.coordinates {
        let v = resolve(name)?;
        if row.len() != d {
            return Err(ModelError::Parameterization(format!(
                "vertex '{name}' has {} coordinate templates, expected {d}",
                row.len()
            )));
        }
        coords[v] = Some(
            row.iter()
                .map(|c| c.affine_in(&spec.params))
                .collect::<Result<_, _>>()?,
        );
    }
    let mut pinned = Vec::new();
    let coords: Vec<Vec<AffineExpr>> = coords
        .into_iter()
        .enumerate()
        .map(|(v, c)| {
            c.ok_or_else(|| {
                ModelError::Parameterization(format!("vertex '{}' has no coordinates", fw.vertices[v]))
            })
        })
        .collect::<Result<_, _>>()?;
    for (v, row) in coords.iter().enumerate() {
        for (axis, c) in row.iter().enumerate() {
            if c.terms.is_empty() {
                pinned.push((v, axis));
            }
        }
    }
    let positive = spec
        .positive
        .iter()
        .map(|p| {
            spec.params
                .iter()
                .position(|q| q == p)
                .ok_or_else(|| ModelError::Parameterization(format!("unknown parameter '{p}'")))
        })
        .collect::<Result<_, _>>()?;
    Ok(Parameterization {
        names: spec.params.clone(),
        coords,
        positive,
        pinned,
    })
}

// ---------------------------------------------------------------------------
// Dimensioning

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimensioning {
    /// Common bar cross-section.
    pub bar_area: f64,
    /// True when no polyhedra fix the cross-section; the value is then 1.
    pub unit_area: bool,
    /// `W_ab` per expanded edge.
    pub weights: Vec<f64>,
    /// Material volume of each body.
    pub body_volumes: Vec<f64>,
    /// Panel thickness, `None` for polyhedra.
    pub panel_heights: Vec<Option<f64>>,
}

/// Classical multidimensional scaling of a complete distance matrix.
pub fn embed_from_distances(sq: &DMatrix<f64>, dim: usize) -> Vec<Vec<f64>> {
    let n = sq.nrows();
    let j = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let b = &j * sq * &j * -0.5;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    (0..n)
        .map(|i| {
            order
                .iter()
                .take(dim)
                .map(|&k| eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt())
                .collect()
        })
        .collect()
}

fn body_points(fw: &BarJointFramework, body: &Body, dim: usize) -> Vec<Vec<f64>> {
    let n = body.vertices.len();
    let mut sq = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let k = fw.edge_index(body.vertices[i], body.vertices[j]).expect("inner edge");
                sq[(i, j)] = fw.lengths[k].powi(2);
            }
        }
    }
    embed_from_distances(&sq, dim)
}

/// Area of a convex polygon whose vertices are listed in cyclic order.
pub fn polygon_area(fw: &BarJointFramework, body: &Body) -> f64 {
    if body.vertices.len() == 3 {
        let l = |i: usize, j: usize| {
            fw.lengths[fw.edge_index(body.vertices[i], body.vertices[j]).unwrap()].powi(2)
        };
        return cayley_menger_volume(&[l(0, 1), l(0, 2), l(1, 2)]).unwrap_or(0.0);
    }
    let p = body_points(fw, body, 2);
    let n = p.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (&p[i], &p[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    twice.abs() / 2.0
}

/// Volume of a convex polyhedron given by its complete distance data.
pub fn polyhedron_volume(fw: &BarJointFramework, body: &Body) -> f64 {
    let vs = &body.vertices;
    if vs.len() == 4 {
        let l = |i: usize, j: usize| fw.lengths[fw.edge_index(vs[i], vs[j]).unwrap()].powi(2);
        return cayley_menger_volume(&[l(0, 1), l(0, 2), l(0, 3), l(1, 2), l(1, 3), l(2, 3)])
            .unwrap_or(0.0);
    }
    let p: Vec<Vector3<f64>> = body_points(fw, body, 3)
        .into_iter()
        .map(|v| Vector3::new(v[0], v[1], v[2]))
        .collect();
    convex_hull_volume(&p)
}

/// Volume of the convex hull of a small point set.
pub fn convex_hull_volume(p: &[Vector3<f64>]) -> f64 {
    let n = p.len();
    let centroid = p.iter().fold(Vector3::zeros(), |a, b| a + b) / n as f64;
    let scale = p.iter().map(|q| (q - centroid).norm()).fold(0.0, f64::max);
    let tol = 1e-9 * scale.max(1e-300);
    let mut seen: Vec<(Vector3<f64>, f64)> = Vec::new();
    let mut volume = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let nrm = (p[j] - p[i]).cross(&(p[k] - p[i]));
                if nrm.norm() < tol * scale {
                    continue;
                }
                let mut nrm = nrm.normalize();
                let mut off = nrm.dot(&p[i]);
                if nrm.dot(&centroid) > off {
                    nrm = -nrm;
                    off = -off;
                }
                if p.iter().any(|q| nrm.dot(q) > off + tol) {
                    continue;
                }
                if seen
                    .iter()
                    .any(|(m, o)| (m - nrm).norm() < 1e-9 && (o - off).abs() < tol)
                {
                    continue;
                }
                seen.push((nrm, off));
                // Face polygon: points on the plane, ordered by angle.
                let face: Vec<Vector3<f64>> =
                    p.iter().filter(|q| (nrm.dot(q) - off).abs() <= tol).copied().collect();
                let fc = face.iter().fold(Vector3::zeros(), |a, b| a + b) / face.len() as f64;
                let u = (face[0] - fc).normalize();
                let w = nrm.cross(&u);
                let mut ordered = face.clone();
                ordered.sort_by(|a, b| {
                    let ta = (a - fc).dot(&w).atan2((a - fc).dot(&u));
                    let tb = (b - fc).dot(&w).atan2((b - fc).dot(&u));
                    ta.total_cmp(&tb)
                });
                let mut area = Vector3::zeros();
                for t in 0..ordered.len() {
                    area += ordered[t].cross(&ordered[(t + 1) % ordered.len()]);
                }
                // Pyramid from the centroid over the face.
                volume += (area.dot(&nrm).abs() / 2.0) * (off - nrm.dot(&centroid)) / 3.0;
            }
        }
    }
    volume
}

/// Cross-section, weights and body volumes from the intrinsic metric.
pub fn compute_dimensioning(fw: &Framework) -> Result<Dimensioning, ModelError> {
    let bj = &fw.expanded;
    let weights: Vec<f64> = bj
        .edges
        .iter()
        .map(|e| if e.bodies.is_empty() { 1.0 } else { 1.0 / e.bodies.len() as f64 })
        .collect();
    let inner_weight = |body: &Body| -> f64 {
        let vs = &body.vertices;
        let mut s = 0.0;
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                let k = bj.edge_index(vs[i], vs[j]).unwrap();
                s += weights[k] * bj.lengths[k];
            }
        }
        s
    };
    let mut poly_volume = 0.0;
    let mut poly_weight = 0.0;
    for b in &fw.bodies {
        if b.kind == BodyKind::Polyhedron {
            poly_volume += polyhedron_volume(bj, b);
            poly_weight += inner_weight(b);
        }
    }
    let unit_area = !fw.has_polyhedra();
    let bar_area = if unit_area {
        1.0
    } else {
        if !(poly_weight > 0.0) {
            return Err(ModelError::ZeroWeight);
        }
        poly_volume / poly_weight
    };
    let mut body_volumes = Vec::new();
    let mut panel_heights = Vec::new();
    for b in &fw.bodies {
        match b.kind {
            BodyKind::Polyhedron => {
                body_volumes.push(polyhedron_volume(bj, b));
                panel_heights.push(None);
            }
            BodyKind::Panel => {
                let vol = bar_area * inner_weight(b);
                body_volumes.push(vol);
                panel_heights.push(Some(vol / polygon_area(bj, b)));
            }
        }
    }
    Ok(Dimensioning {
        bar_area,
        unit_area,
        weights,
        body_volumes,
        panel_heights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn quad_file() -> FrameworkFile {
        FrameworkFile::from_json(
            r#"{
            "dimension": 2,
            "joints": ["A", "B", "C", "D"],
            "bars": [["A","B"],["A","C"],["A","D"],["B","C"],["B","D"],["C","D"]],
            "lengths": {"A-B": 6, "A-C": "sqrt(17)", "A-D": "sqrt(5)", "B-C": "sqrt(5)",
                        "B-D": "sqrt(17)", "C-D": "sqrt(8)"}
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn bar_joint_framework_is_fixed_point() {
        let fw = Framework::from_file(quad_file()).unwrap();
        assert_eq!(fw.counts(), (4, 6));
        assert!(fw.expanded.edges.iter().all(|e| e.bar && e.bodies.is_empty()));
        let again = Framework::from_file(fw.to_file()).unwrap();
        assert_eq!(again.expanded, fw.expanded);
        // default pinning removes 3 coordinates in the plane
        assert_eq!(fw.parameterization.len(), 5);
    }

    #[test]
    fn panel_plus_bar() {
        let f = FrameworkFile::from_json(
            r#"{"dimension": 3, "bodies": [{"kind": "panel", "vertices": ["a","b","c"]}],
                "bars": [["c","d"]],
                "realization": {"a": [0,0,0], "b": [1,0,0], "c": [0,1,0], "d": [0,1,1]}}"#,
        )
        .unwrap();
        let fw = Framework::from_file(f).unwrap();
        assert_eq!(fw.counts(), (4, 4));
        assert_eq!(fw.bars.len(), 1);
        let bar = &fw.expanded.edges[fw.bars[0]];
        assert!(bar.bar && bar.bodies.is_empty());
        assert_eq!(fw.expanded.edges.iter().filter(|e| !e.bodies.is_empty()).count(), 3);
    }

    #[test]
    fn pin_joints_identify_vertices() {
        let f = FrameworkFile::from_json(
            r#"{"dimension": 2,
                "bodies": [{"kind": "panel", "vertices": ["a","b","c"]},
                           {"kind": "panel", "vertices": ["c2","d","e"]}],
                "pin_joints": [["c","c2"]],
                "bars": [["a","d"], ["b","e"]],
                "realization": {"a": [0,0], "b": [1,0], "c": [0.5,1], "c2": [0.5,1],
                                "d": [1,2], "e": [0,2]}}"#,
        )
        .unwrap();
        let fw = Framework::from_file(f).unwrap();
        assert_eq!(fw.counts(), (5, 8));
        let f = FrameworkFile::from_json(
            r#"{"dimension": 2, "bodies": [{"kind": "panel", "vertices": ["a","b","c"]}],
                "pin_joints": [["c","zz"]], "lengths": {"a-b":1,"a-c":1,"b-c":1}}"#,
        )
        .unwrap();
        assert_eq!(
            Framework::from_file(f).unwrap_err(),
            ModelError::MissingPinVertex("zz".into())
        );
    }

    #[test]
    fn rejects_small_body_and_negative_length() {
        let f = FrameworkFile::from_json(
            r#"{"dimension": 3, "bodies": [{"kind": "panel", "vertices": ["a","b"]}]}"#,
        )
        .unwrap();
        assert!(matches!(Framework::from_file(f), Err(ModelError::SmallBody { .. })));
        let mut f = quad_file();
        f.lengths.insert("A-B".into(), NumberSpec::Num(-1.0));
        match Framework::from_file(f) {
            Err(ModelError::NonPositiveLength { edge, .. }) => assert_eq!(edge, "A-B"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dimensioning_examples() {
        // single unit-area triangle with perimeter 3 and Area = 0.1 → h = 0.3
        let s = (4.0f64 / 3f64.sqrt()).sqrt();
        let f = FrameworkFile::from_json(&format!(
            r#"{{"dimension": 3, "bodies": [{{"kind": "panel", "vertices": ["a","b","c"]}}],
                "lengths": {{"a-b": {s}, "a-c": {s}, "b-c": {s}}}}}"#
        ))
        .unwrap();
        let fw = Framework::from_file(f).unwrap();
        let dims = compute_dimensioning(&fw).unwrap();
        assert!(dims.unit_area);
        let area = polygon_area(&fw.expanded, &fw.bodies[0]);
        assert!((area - 1.0).abs() < 1e-12);
        let h = 0.1 * 3.0 * s / area;
        assert!((dims.panel_heights[0].unwrap() * 0.1 - h).abs() < 1e-12);
    }

    #[test]
    fn hull_volume_of_cube() {
        let mut p = Vec::new();
        for x in [0.0, 2.0] {
            for y in [0.0, 2.0] {
                for z in [0.0, 2.0] {
                    p.push(Vector3::new(x, y, z));
                }
            }
        }
        assert!((convex_hull_volume(&p) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn mds_recovers_distances() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.3, 1.1, 0.4], [0.5, 0.5, 1.2], [1.3, 1.0, 0.7]];
        let n = pts.len();
        let mut sq = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                sq[(i, j)] = dist(&pts[i], &pts[j]).powi(2);
            }
        }
        let e = embed_from_distances(&sq, 3);
        for i in 0..n {
            for j in 0..n {
                assert!((dist(&e[i], &e[j]).powi(2) - sq[(i, j)]).abs() < 1e-12);
            }
        }
    }
}
