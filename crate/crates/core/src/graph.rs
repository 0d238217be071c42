//! Metric graphs with piecewise constant potentials, vertex matching conditions,
//! multi-mode graphs and their expansion into parallel single-mode edges.
//!
//! Conventions:
//! * every derivative in a matching condition is taken outward from the vertex
//!   (the edge coordinate grows away from the vertex);
//! * edge `j` owns the directed edges `2j` (from `from` to `to`) and `2j + 1`
//!   (reverse), so the direction swap is `d ^ 1`;
//! * rows and columns of a vertex's `(A, B)` follow the vertex's star order:
//!   input edges in order, and for a loop its `from` end before its `to` end.

use std::collections::{HashMap, VecDeque};

use num_complex::Complex;
use num_traits::One;

use crate::error::{Error, Result};
use crate::linalg::{singular_values, CMatrix};
use crate::scalar::{cr, Real};

/// Named families of matching conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MatchingKind<T> {
    Dirichlet,
    Neumann,
    /// `phi' = lambda phi` (outward derivative). At degree above one this is the
    /// delta coupling: continuity plus `sum_e phi_e' = lambda phi`.
    Robin(T),
    /// Continuity and vanishing sum of outward derivatives.
    Kirchhoff,
    /// Degree-two continuity of the wavefunction and its derivative.
    ContinuityStep,
}

impl<T> MatchingKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            MatchingKind::Dirichlet => "dirichlet",
            MatchingKind::Neumann => "neumann",
            MatchingKind::Robin(_) => "robin",
            MatchingKind::Kirchhoff => "kirchhoff",
            MatchingKind::ContinuityStep => "continuity_step",
        }
    }
}

/// Coefficients of `A phi(0) + B phi'(0) = 0` at one vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchingConditions<T> {
    pub a: CMatrix<T>,
    pub b: CMatrix<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationReport<T> {
    /// `max |A B^dagger - B A^dagger|`.
    pub hermiticity_residual: T,
    pub tolerance: T,
    /// Numerical rank of the `d x 2d` block `(A, B)`.
    pub rank: usize,
    pub degree: usize,
}

impl<T: Real> ValidationReport<T> {
    pub fn accepted(&self) -> bool {
        self.hermiticity_residual < self.tolerance && self.rank == self.degree
    }
}

/// Checks self-adjointness of a pair `(A, B)` of `degree x degree` matrices.
pub fn validate_matching<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>, degree: usize) -> ValidationReport<T> {
    let residual = (&(a * &b.adjoint()) - &(b * &a.adjoint())).max_abs();
    let tolerance = T::tol(1e-10) * T::one().max(a.max_abs()).max(b.max_abs());
    let sv = singular_values(&a.hcat(b));
    let smax = sv.first().copied().unwrap_or(T::zero());
    let cutoff = T::tol(1e-10) * smax;
    let rank = sv.iter().filter(|&&s| s > cutoff && s > T::zero()).count();
    ValidationReport { hermiticity_residual: residual, tolerance, rank, degree }
}

impl<T: Real> MatchingConditions<T> {
    pub fn new(a: CMatrix<T>, b: CMatrix<T>) -> Self {
        Self { a, b }
    }

    pub fn degree(&self) -> usize {
        self.a.rows()
    }

    pub fn validate(&self) -> ValidationReport<T> {
        validate_matching(&self.a, &self.b, self.degree())
    }

    /// Builds a standard family of conditions at the given degree.
    pub fn standard(kind: MatchingKind<T>, degree: usize) -> Result<Self> {
        let unsupported = || Error::UnsupportedDegree { kind: kind.name().into(), degree };
        if degree == 0 {
            return Err(unsupported());
        }
        let n = degree;
        match kind {
            MatchingKind::Dirichlet => Ok(Self::new(CMatrix::identity(n), CMatrix::zeros(n, n))),
            MatchingKind::Neumann => Ok(Self::new(CMatrix::zeros(n, n), CMatrix::identity(n))),
            MatchingKind::Robin(lambda) => Ok(delta_coupling(n, lambda)),
            MatchingKind::Kirchhoff => {
                if n < 2 {
                    return Err(unsupported());
                }
                Ok(delta_coupling(n, T::zero()))
            }
            MatchingKind::ContinuityStep => {
                if n != 2 {
                    return Err(unsupported());
                }
                Ok(delta_coupling(2, T::zero()))
            }
        }
    }

    /// Applies `C A`, `C B` for an invertible `C`; the conditions are unchanged.
    pub fn left_multiplied(&self, c: &CMatrix<T>) -> Self {
        Self::new(c * &self.a, c * &self.b)
    }

    /// Simultaneous row/column permutation, `perm[new] = old`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::new(self.a.select(perm, perm), self.b.select(perm, perm))
    }
}

/// Continuity across all `n` ends plus `sum phi' = lambda phi`.
fn delta_coupling<T: Real>(n: usize, lambda: T) -> MatchingConditions<T> {
    let mut a = CMatrix::zeros(n, n);
    let mut b = CMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i)] = Complex::one();
        a[(i, i + 1)] = -Complex::<T>::one();
    }
    a[(n - 1, 0)] = cr(-lambda);
    for j in 0..n {
        b[(n - 1, j)] = Complex::one();
    }
    MatchingConditions::new(a, b)
}

/// How a vertex's matching conditions were specified.
#[derive(Clone, Debug, PartialEq)]
pub enum VertexMatching<T> {
    Standard(MatchingKind<T>),
    Custom(MatchingConditions<T>),
}

/// One end of an edge at a vertex, addressed by directed-edge indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StarEntry {
    pub edge: usize,
    /// Directed edge arriving at the vertex.
    pub incoming: usize,
    /// Directed edge leaving the vertex (the reverse of `incoming`).
    pub outgoing: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexRecord<T> {
    pub id: String,
    pub matching: MatchingConditions<T>,
    pub star: Vec<StarEntry>,
    /// Inserted when splitting a loop.
    pub auxiliary: bool,
}

impl<T> VertexRecord<T> {
    pub fn degree(&self) -> usize {
        self.star.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRecord<T> {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub length: T,
    pub potential: T,
    /// Index of the edge in the input description this record came from.
    pub source: usize,
}

/// Validated, immutable metric graph with constant edge potentials.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricGraph<T> {
    vertices: Vec<VertexRecord<T>>,
    edges: Vec<EdgeRecord<T>>,
    mode_map: Option<Vec<(usize, usize)>>,
}

impl<T: Real> MetricGraph<T> {
    pub fn vertices(&self) -> &[VertexRecord<T>] {
        &self.vertices
    }

    pub fn edges(&self) -> &[EdgeRecord<T>] {
        &self.edges
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_directed(&self) -> usize {
        2 * self.edges.len()
    }

    /// Edge carrying directed edge `d`.
    #[inline]
    pub fn edge_of(&self, d: usize) -> usize {
        d / 2
    }

    #[inline]
    pub fn reverse(d: usize) -> usize {
        d ^ 1
    }

    pub fn start(&self, d: usize) -> usize {
        let e = &self.edges[d / 2];
        if d.is_multiple_of(2) {
            e.from
        } else {
            e.to
        }
    }

    pub fn end(&self, d: usize) -> usize {
        let e = &self.edges[d / 2];
        if d.is_multiple_of(2) {
            e.to
        } else {
            e.from
        }
    }

    pub fn min_potential(&self) -> T {
        self.edges.iter().map(|e| e.potential).fold(T::infinity(), T::min)
    }

    pub fn max_potential(&self) -> T {
        self.edges.iter().map(|e| e.potential).fold(T::neg_infinity(), T::max)
    }

    /// Distinct edge potentials in increasing order.
    pub fn thresholds(&self) -> Vec<T> {
        let mut v: Vec<T> = self.edges.iter().map(|e| e.potential).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    }

    pub fn total_length(&self) -> T {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// `(multi-mode edge, mode)` for each input edge when the graph came from a
    /// multi-mode description.
    pub fn mode_map(&self) -> Option<&[(usize, usize)]> {
        self.mode_map.as_deref()
    }

    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v.id == id)
    }

    /// Index of the star centre when the graph is a star: one vertex adjacent to
    /// every edge, all others of degree one.
    pub fn star_center(&self) -> Option<usize> {
        if self.edges.is_empty() {
            return None;
        }
        let candidates: Vec<usize> =
            (0..self.vertices.len()).filter(|&v| self.vertices[v].degree() > 1).collect();
        let center = match candidates.as_slice() {
            [c] => *c,
            [] if self.edges.len() == 1 => self.edges[0].from,
            _ => return None,
        };
        let ok = self.edges.iter().all(|e| (e.from == center) != (e.to == center));
        ok.then_some(center)
    }
}

/// Programmatic construction of a [`MetricGraph`].
#[derive(Clone, Debug, Default)]
pub struct GraphBuilder<T> {
    vertices: Vec<(String, VertexMatching<T>)>,
    edges: Vec<(String, String, String, T, T)>,
}

impl<T: Real> GraphBuilder<T> {
    pub fn new() -> Self {
        Self { vertices: Vec::new(), edges: Vec::new() }
    }

    pub fn vertex(mut self, id: impl Into<String>, matching: VertexMatching<T>) -> Self {
        self.vertices.push((id.into(), matching));
        self
    }

    pub fn standard_vertex(self, id: impl Into<String>, kind: MatchingKind<T>) -> Self {
        self.vertex(id, VertexMatching::Standard(kind))
    }

    pub fn edge(
        mut self,
        id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        length: T,
        potential: T,
    ) -> Self {
        self.edges.push((id.into(), from.into(), to.into(), length, potential));
        self
    }

    pub fn build(self) -> Result<MetricGraph<T>> {
        build_internal(self, None)
    }
}

fn build_internal<T: Real>(
    builder: GraphBuilder<T>,
    mode_map: Option<Vec<(usize, usize)>>,
) -> Result<MetricGraph<T>> {
    let GraphBuilder { vertices: vspec, edges: espec } = builder;
    if vspec.is_empty() || espec.is_empty() {
        return Err(Error::Schema("a graph needs at least one vertex and one edge".into()));
    }
    let mut index = HashMap::new();
    for (i, (id, _)) in vspec.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::Schema(format!("duplicate vertex id {id}")));
        }
    }
    let lookup = |id: &str, edge: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Schema(format!("edge {edge} references unknown vertex {id}")))
    };

    // Input-level star order: (input edge, is_from_end).
    let mut input_star: Vec<Vec<(usize, bool)>> = vec![Vec::new(); vspec.len()];
    let mut resolved = Vec::with_capacity(espec.len());
    for (k, (id, from, to, length, potential)) in espec.iter().enumerate() {
        if !(length.is_finite() && *length > T::zero()) {
            return Err(Error::NonPositiveLength { edge: id.clone(), length: length.as_f64() });
        }
        if !potential.is_finite() {
            return Err(Error::NonFinitePotential { edge: id.clone() });
        }
        let (f, t) = (lookup(from, id)?, lookup(to, id)?);
        input_star[f].push((k, true));
        input_star[t].push((k, false));
        resolved.push((f, t));
    }

    let mut vertices: Vec<VertexRecord<T>> = Vec::with_capacity(vspec.len());
    let mut edges: Vec<EdgeRecord<T>> = Vec::with_capacity(espec.len());
    for (k, (id, _, _, length, potential)) in espec.iter().enumerate() {
        let (f, t) = resolved[k];
        edges.push(EdgeRecord {
            id: id.clone(),
            from: f,
            to: if f == t { usize::MAX } else { t },
            length: *length,
            potential: *potential,
            source: k,
        });
    }
    // Split loops: edge k becomes (v -> aux) and an appended (aux -> v).
    let mut loop_tail: HashMap<usize, usize> = HashMap::new();
    let mut aux_vertices = Vec::new();
    for k in 0..espec.len() {
        if edges[k].to != usize::MAX {
            continue;
        }
        let aux = vspec.len() + aux_vertices.len();
        let half = edges[k].length / T::lit(2.0);
        let v = edges[k].from;
        edges[k].to = aux;
        edges[k].length = half;
        let tail = edges.len();
        edges.push(EdgeRecord {
            id: format!("{}#2", edges[k].id),
            from: aux,
            to: v,
            length: half,
            potential: edges[k].potential,
            source: k,
        });
        loop_tail.insert(k, tail);
        aux_vertices.push((format!("{}#mid", edges[k].id), k, tail));
    }

    for (v, (id, matching)) in vspec.iter().enumerate() {
        let star: Vec<StarEntry> = input_star[v]
            .iter()
            .map(|&(k, is_from)| {
                let (edge, at_from) = match loop_tail.get(&k) {
                    Some(&tail) if !is_from => (tail, false),
                    _ => (k, is_from),
                };
                if at_from {
                    StarEntry { edge, incoming: 2 * edge + 1, outgoing: 2 * edge }
                } else {
                    StarEntry { edge, incoming: 2 * edge, outgoing: 2 * edge + 1 }
                }
            })
            .collect();
        let degree = star.len();
        if degree == 0 {
            return Err(Error::DisconnectedGraph);
        }
        let mc = match matching {
            VertexMatching::Standard(kind) => MatchingConditions::standard(*kind, degree).map_err(|e| {
                Error::MalformedMatching { vertex: id.clone(), reason: e.to_string() }
            })?,
            VertexMatching::Custom(mc) => {
                if mc.a.rows() != degree
                    || !mc.a.is_square()
                    || mc.b.rows() != degree
                    || !mc.b.is_square()
                {
                    return Err(Error::MalformedMatching {
                        vertex: id.clone(),
                        reason: format!(
                            "A and B must be {degree}x{degree}, got {}x{} and {}x{}",
                            mc.a.rows(),
                            mc.a.cols(),
                            mc.b.rows(),
                            mc.b.cols()
                        ),
                    });
                }
                mc.clone()
            }
        };
        let report = mc.validate();
        if !report.accepted() {
            return Err(Error::MalformedMatching {
                vertex: id.clone(),
                reason: format!(
                    "not self-adjoint (hermiticity residual {:e}, rank {} of {})",
                    report.hermiticity_residual.as_f64(),
                    report.rank,
                    report.degree
                ),
            });
        }
        vertices.push(VertexRecord { id: id.clone(), matching: mc, star, auxiliary: false });
    }
    for (id, k, tail) in aux_vertices {
        vertices.push(VertexRecord {
            id,
            matching: MatchingConditions::standard(MatchingKind::ContinuityStep, 2)?,
            star: vec![
                StarEntry { edge: k, incoming: 2 * k, outgoing: 2 * k + 1 },
                StarEntry { edge: tail, incoming: 2 * tail + 1, outgoing: 2 * tail },
            ],
            auxiliary: true,
        });
    }

    let graph = MetricGraph { vertices, edges, mode_map };
    if !is_connected(&graph) {
        return Err(Error::DisconnectedGraph);
    }
    Ok(graph)
}

fn is_connected<T: Real>(g: &MetricGraph<T>) -> bool {
    let n = g.vertices.len();
    let mut adj = vec![Vec::new(); n];
    for e in &g.edges {
        adj[e.from].push(e.to);
        adj[e.to].push(e.from);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Multi-mode edge: a vector wavefunction with one threshold per mode.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModeEdge<T> {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: T,
    pub modes: Vec<T>,
}

/// Multi-mode graph. Vertex matrices act on the `(edge, mode)` components of the
/// star in lexicographic order; the two ends of a loop follow each other inside a
/// mode, `from` end first.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModeGraph<T> {
    pub vertices: Vec<(String, VertexMatching<T>)>,
    pub edges: Vec<MultiModeEdge<T>>,
}

/// Replaces each multi-mode edge by parallel single-mode edges of the same length,
/// one per mode, keeping the vertex matrices under the `(edge, mode)` re-indexing.
pub fn expand_multimode<T: Real>(mm: &MultiModeGraph<T>) -> Result<MetricGraph<T>> {
    let mut builder = GraphBuilder::new();
    for (id, m) in &mm.vertices {
        builder = builder.vertex(id.clone(), m.clone());
    }
    let mut map = Vec::new();
    for (e, edge) in mm.edges.iter().enumerate() {
        if edge.modes.is_empty() {
            return Err(Error::Schema(format!("edge {} has no modes", edge.id)));
        }
        for (m, &v) in edge.modes.iter().enumerate() {
            let id = if edge.modes.len() == 1 { edge.id.clone() } else { format!("{}:{m}", edge.id) };
            builder = builder.edge(id, edge.from.clone(), edge.to.clone(), edge.length, v);
            map.push((e, m));
        }
    }
    build_internal(builder, Some(map))
}

impl<T: Real> MultiModeGraph<T> {
    /// Same graph with the modes of edge `edge` reordered by `perm[new] = old`;
    /// custom vertex matrices are permuted consistently.
    pub fn with_permuted_modes(&self, edge: usize, perm: &[usize]) -> Self {
        let mut out = self.clone();
        let target = &self.edges[edge];
        out.edges[edge].modes = perm.iter().map(|&p| target.modes[p]).collect();
        for (vid, matching) in out.vertices.iter_mut() {
            let VertexMatching::Custom(mc) = matching else { continue };
            // Component layout of this vertex: star entries in input order, modes inside.
            let mut order: Vec<usize> = Vec::new();
            let mut cursor = 0;
            for (k, e) in self.edges.iter().enumerate() {
                let ends = usize::from(&e.from == vid) + usize::from(&e.to == vid);
                let block = ends * e.modes.len();
                if k == edge {
                    for &p in perm {
                        order.extend((0..ends).map(|s| cursor + p * ends + s));
                    }
                } else {
                    order.extend(cursor..cursor + block);
                }
                cursor += block;
            }
            *mc = mc.permuted(&order);
        }
        out
    }
}

/// Graph description mirroring the JSON file format.
pub mod description {
    use serde::{Deserialize, Serialize};

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    #[serde(untagged)]
    pub enum Id {
        Int(i64),
        Str(String),
    }

    impl std::fmt::Display for Id {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            match self {
                Id::Int(i) => write!(f, "{i}"),
                Id::Str(s) => f.write_str(s),
            }
        }
    }

    /// A matrix entry: either a real number or `[re, im]`.
    #[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
    #[serde(untagged)]
    pub enum Entry {
        Complex([f64; 2]),
        Real(f64),
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct Matching {
        pub kind: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub lambda: Option<f64>,
        #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
        pub a: Option<Vec<Vec<Entry>>>,
        #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
        pub b: Option<Vec<Vec<Entry>>>,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct Vertex {
        pub id: Id,
        pub matching: Matching,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct Edge {
        pub id: Id,
        pub from: Id,
        pub to: Id,
        pub length: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub potential: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub modes: Option<Vec<f64>>,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct GraphDescription {
        pub vertices: Vec<Vertex>,
        pub edges: Vec<Edge>,
    }
}

use description::{Entry, GraphDescription};

impl GraphDescription {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn is_multimode(&self) -> bool {
        self.edges.iter().any(|e| e.modes.is_some())
    }
}

fn parse_matrix<T: Real>(rows: &[Vec<Entry>], vertex: &str, name: &str) -> Result<CMatrix<T>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::MalformedMatching {
            vertex: vertex.into(),
            reason: format!("{name} is not square"),
        });
    }
    let data: Vec<Vec<Complex<T>>> = rows
        .iter()
        .map(|r| {
            r.iter()
                .map(|e| match *e {
                    Entry::Real(x) => Complex::new(T::lit(x), T::zero()),
                    Entry::Complex([re, im]) => Complex::new(T::lit(re), T::lit(im)),
                })
                .collect()
        })
        .collect();
    Ok(if n == 0 { CMatrix::zeros(0, 0) } else { CMatrix::from_rows(&data) })
}

fn parse_matching<T: Real>(v: &description::Vertex) -> Result<VertexMatching<T>> {
    let id = v.id.to_string();
    let m = &v.matching;
    let kind = match m.kind.to_ascii_lowercase().as_str() {
        "dirichlet" => MatchingKind::Dirichlet,
        "neumann" => MatchingKind::Neumann,
        "kirchhoff" => MatchingKind::Kirchhoff,
        "continuity_step" | "continuity" => MatchingKind::ContinuityStep,
        "robin" | "delta" => {
            let lambda = m.lambda.ok_or_else(|| Error::Schema(format!("vertex {id}: robin needs lambda")))?;
            if !lambda.is_finite() {
                return Err(Error::Schema(format!("vertex {id}: lambda must be finite")));
            }
            MatchingKind::Robin(T::lit(lambda))
        }
        "custom" => {
            let (Some(a), Some(b)) = (&m.a, &m.b) else {
                return Err(Error::Schema(format!("vertex {id}: custom matching needs A and B")));
            };
            let a = parse_matrix(a, &id, "A")?;
            let b = parse_matrix(b, &id, "B")?;
            if a.rows() != b.rows() {
                return Err(Error::MalformedMatching {
                    vertex: id,
                    reason: "A and B differ in size".into(),
                });
            }
            return Ok(VertexMatching::Custom(MatchingConditions::new(a, b)));
        }
        other => return Err(Error::Schema(format!("vertex {id}: unknown matching kind {other}"))),
    };
    Ok(VertexMatching::Standard(kind))
}

/// Builds a validated graph from a parsed description; any `modes` key turns the
/// description into a multi-mode graph that is expanded on the fly.
pub fn build_graph<T: Real>(desc: &GraphDescription) -> Result<MetricGraph<T>> {
    let vertices = desc
        .vertices
        .iter()
        .map(|v| Ok((v.id.to_string(), parse_matching(v)?)))
        .collect::<Result<Vec<_>>>()?;
    if desc.is_multimode() {
        let edges = desc
            .edges
            .iter()
            .map(|e| {
                let modes = match (&e.modes, e.potential) {
                    (Some(m), None) => m.clone(),
                    (None, Some(p)) => vec![p],
                    (Some(_), Some(_)) => {
                        return Err(Error::Schema(format!("edge {}: give potential or modes, not both", e.id)))
                    }
                    (None, None) => return Err(Error::Schema(format!("edge {}: missing potential", e.id))),
                };
                Ok(MultiModeEdge {
                    id: e.id.to_string(),
                    from: e.from.to_string(),
                    to: e.to.to_string(),
                    length: T::lit(e.length),
                    modes: modes.into_iter().map(T::lit).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return expand_multimode(&MultiModeGraph { vertices, edges });
    }
    let mut builder = GraphBuilder::new();
    for (id, m) in vertices {
        builder = builder.vertex(id, m);
    }
    for e in &desc.edges {
        let p = e
            .potential
            .ok_or_else(|| Error::Schema(format!("edge {}: missing potential", e.id)))?;
        builder = builder.edge(e.id.to_string(), e.from.to_string(), e.to.to_string(), T::lit(e.length), T::lit(p));
    }
    builder.build()
}

/// Parses and builds a graph from JSON text.
pub fn graph_from_json<T: Real>(text: &str) -> Result<MetricGraph<T>> {
    build_graph(&GraphDescription::from_json(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::c;
    use num_traits::Zero;

    fn interval() -> MetricGraph<f64> {
        GraphBuilder::new()
            .standard_vertex("left", MatchingKind::Dirichlet)
            .standard_vertex("step", MatchingKind::ContinuityStep)
            .standard_vertex("right", MatchingKind::Dirichlet)
            .edge("1", "left", "step", 1.0, 0.0)
            .edge("2", "step", "right", 3f64.sqrt(), 213.0)
            .build()
            .unwrap()
    }

    #[test]
    fn interval_with_step_has_four_directed_edges() {
        let g = interval();
        assert_eq!((g.n_vertices(), g.n_edges(), g.n_directed()), (3, 2, 4));
        assert_eq!(g.star_center(), Some(1));
        for d in 0..4 {
            assert_eq!(g.start(d), g.end(MetricGraph::<f64>::reverse(d)));
        }
    }

    #[test]
    fn single_dirichlet_edge() {
        let g = GraphBuilder::new()
            .standard_vertex("a", MatchingKind::Dirichlet)
            .standard_vertex("b", MatchingKind::Dirichlet)
            .edge("e", "a", "b", std::f64::consts::PI, 0.0)
            .build()
            .unwrap();
        assert_eq!((g.n_vertices(), g.n_edges()), (2, 1));
    }

    #[test]
    fn zero_length_rejected() {
        let err = GraphBuilder::<f64>::new()
            .standard_vertex("a", MatchingKind::Dirichlet)
            .standard_vertex("b", MatchingKind::Dirichlet)
            .edge("e", "a", "b", 0.0, 0.0)
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::NonPositiveLength { .. }));
    }

    #[test]
    fn disconnected_rejected() {
        let err = GraphBuilder::<f64>::new()
            .standard_vertex("a", MatchingKind::Dirichlet)
            .standard_vertex("b", MatchingKind::Dirichlet)
            .standard_vertex("c", MatchingKind::Dirichlet)
            .standard_vertex("d", MatchingKind::Dirichlet)
            .edge("e", "a", "b", 1.0, 0.0)
            .edge("f", "c", "d", 1.0, 0.0)
            .build()
            .unwrap_err();
        assert_eq!(err, Error::DisconnectedGraph);
    }

    #[test]
    fn custom_matrix_of_wrong_size_rejected() {
        let bad = MatchingConditions::new(CMatrix::identity(3), CMatrix::zeros(3, 3));
        let err = GraphBuilder::<f64>::new()
            .vertex("a", VertexMatching::Custom(bad))
            .standard_vertex("b", MatchingKind::Dirichlet)
            .edge("e", "a", "b", 1.0, 0.0)
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::MalformedMatching { .. }));
    }

    #[test]
    fn standard_conditions_validate() {
        for d in 1..5 {
            for kind in [MatchingKind::Dirichlet, MatchingKind::Neumann, MatchingKind::Robin(-2.5)] {
                let mc = MatchingConditions::<f64>::standard(kind, d).unwrap();
                let r = mc.validate();
                assert!(r.accepted(), "{kind:?} at degree {d}: {r:?}");
            }
            if d >= 2 {
                assert!(MatchingConditions::<f64>::standard(MatchingKind::Kirchhoff, d).unwrap().validate().accepted());
            }
        }
        assert!(MatchingConditions::<f64>::standard(MatchingKind::ContinuityStep, 2).unwrap().validate().accepted());
    }

    #[test]
    fn unsupported_degrees() {
        assert!(matches!(
            MatchingConditions::<f64>::standard(MatchingKind::Kirchhoff, 1),
            Err(Error::UnsupportedDegree { .. })
        ));
        assert!(matches!(
            MatchingConditions::<f64>::standard(MatchingKind::ContinuityStep, 3),
            Err(Error::UnsupportedDegree { .. })
        ));
        assert!(matches!(
            MatchingConditions::<f64>::standard(MatchingKind::Dirichlet, 0),
            Err(Error::UnsupportedDegree { .. })
        ));
    }

    #[test]
    fn dirichlet_and_neumann_reports() {
        for d in 1..4 {
            let dir = validate_matching::<f64>(&CMatrix::identity(d), &CMatrix::zeros(d, d), d);
            assert_eq!(dir.hermiticity_residual, 0.0);
            assert_eq!(dir.rank, d);
            assert!(dir.accepted());
            let neu = validate_matching::<f64>(&CMatrix::zeros(d, d), &CMatrix::identity(d), d);
            assert!(neu.accepted());
        }
    }

    #[test]
    fn non_hermitian_pair_rejected() {
        let d = 3;
        let b = CMatrix::<f64>::identity(d).scale(c(0.0, 1.0));
        let r = validate_matching(&CMatrix::identity(d), &b, d);
        assert!((r.hermiticity_residual - 2.0).abs() < 1e-15);
        assert!(!r.accepted());
    }

    #[test]
    fn rank_deficient_pair_rejected() {
        let a = CMatrix::<f64>::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let b = CMatrix::<f64>::zeros(2, 2);
        let r = validate_matching(&a, &b, 2);
        assert_eq!(r.rank, 1);
        assert!(!r.accepted());
    }

    #[test]
    fn kirchhoff_rows() {
        let mc = MatchingConditions::<f64>::standard(MatchingKind::Kirchhoff, 3).unwrap();
        // phi_1 = phi_2 = phi_3 from the first two rows, derivative sum from the last.
        let phi = [c(0.7, 0.1); 3];
        for i in 0..2 {
            let s = (0..3).fold(Complex::<f64>::zero(), |acc, j| acc + mc.a[(i, j)] * phi[j]);
            assert!(s.norm() < 1e-15);
        }
        for j in 0..3 {
            assert_eq!(mc.b[(2, j)], Complex::one());
            assert_eq!(mc.a[(2, j)], Complex::zero());
        }
    }

    #[test]
    fn loops_are_split() {
        let g = GraphBuilder::<f64>::new()
            .standard_vertex("v", MatchingKind::Kirchhoff)
            .standard_vertex("w", MatchingKind::Dirichlet)
            .edge("loop", "v", "v", 2.0, 0.0)
            .edge("stem", "v", "w", 1.0, 0.0)
            .build()
            .unwrap();
        assert_eq!(g.n_edges(), 3);
        assert_eq!(g.n_vertices(), 3);
        assert_eq!(g.vertices()[0].degree(), 3);
        assert!(g.vertices()[2].auxiliary);
        assert!((g.total_length() - 3.0).abs() < 1e-15);
        for v in 0..g.n_vertices() {
            for s in &g.vertices()[v].star {
                assert_eq!(g.end(s.incoming), v);
                assert_eq!(g.start(s.outgoing), v);
                assert_eq!(s.outgoing ^ 1, s.incoming);
            }
        }
    }

    #[test]
    fn multimode_expansion_creates_parallel_edges() {
        let mm = MultiModeGraph {
            vertices: vec![
                ("a".to_string(), VertexMatching::Standard(MatchingKind::Dirichlet)),
                ("b".to_string(), VertexMatching::Standard(MatchingKind::Dirichlet)),
            ],
            edges: vec![MultiModeEdge {
                id: "e".into(),
                from: "a".into(),
                to: "b".into(),
                length: 1.0,
                modes: vec![0.0, 10.0],
            }],
        };
        let g = expand_multimode(&mm).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.edges()[0].potential, 0.0);
        assert_eq!(g.edges()[1].potential, 10.0);
        assert!(g.edges().iter().all(|e| e.length == 1.0));
        assert_eq!(g.mode_map(), Some(&[(0, 0), (0, 1)][..]));
    }

    #[test]
    fn single_mode_expansion_is_identity() {
        let mm = MultiModeGraph {
            vertices: vec![
                ("left".to_string(), VertexMatching::Standard(MatchingKind::Dirichlet)),
                ("step".to_string(), VertexMatching::Standard(MatchingKind::ContinuityStep)),
                ("right".to_string(), VertexMatching::Standard(MatchingKind::Dirichlet)),
            ],
            edges: vec![
                MultiModeEdge { id: "1".into(), from: "left".into(), to: "step".into(), length: 1.0, modes: vec![0.0] },
                MultiModeEdge {
                    id: "2".into(),
                    from: "step".into(),
                    to: "right".into(),
                    length: 3f64.sqrt(),
                    modes: vec![213.0],
                },
            ],
        };
        let g = expand_multimode(&mm).unwrap();
        let reference = interval();
        assert_eq!(g.vertices(), reference.vertices());
        assert_eq!(g.edges(), reference.edges());
    }

    #[test]
    fn json_description_round_trip() {
        let text = r#"{
            "vertices": [
                {"id": "a", "matching": {"kind": "dirichlet"}},
                {"id": "c", "matching": {"kind": "custom",
                    "A": [[1, -1], [0, 0]], "B": [[[0, 0], [0, 0]], [[1, 0], [1, 0]]]}},
                {"id": "b", "matching": {"kind": "robin", "lambda": -2.5}}
            ],
            "edges": [
                {"id": 1, "from": "a", "to": "c", "length": 1.0, "potential": 0.0},
                {"id": 2, "from": "c", "to": "b", "length": 0.5, "potential": 10.0}
            ]
        }"#;
        let g: MetricGraph<f64> = graph_from_json(text).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.edges()[0].id, "1");
        let bad = text.replace("\"A\": [[1, -1], [0, 0]]", "\"A\": [[1, 1], [0, 0]]");
        assert!(matches!(graph_from_json::<f64>(&bad), Err(Error::MalformedMatching { .. })));
    }

    #[test]
    fn json_modes_trigger_expansion() {
        let text = r#"{
            "vertices": [
                {"id": "a", "matching": {"kind": "dirichlet"}},
                {"id": "b", "matching": {"kind": "dirichlet"}}
            ],
            "edges": [{"id": "e", "from": "a", "to": "b", "length": 1.0, "modes": [0.0, 10.0]}]
        }"#;
        let g: MetricGraph<f64> = graph_from_json(text).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert!(g.mode_map().is_some());
    }
}
