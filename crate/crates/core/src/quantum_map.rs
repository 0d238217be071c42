//! The global quantum map `U = T P Sigma`, its oscillatory/evanescent partition,
//! the reduced map, determinant identities, block symmetries and the star
//! reduction to an edge-indexed map.

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::linalg::{min_singular_value, CMatrix, LogDet};
use crate::scalar::{c, cr, Real, C};
use crate::scattering::{
    vertex_scattering, vertex_symmetry_residuals, wavenumbers, wavenumbers_complex, SymmetryResiduals,
    VertexScattering, WavenumberSet,
};

/// Smallest singular value of `I - U_ee` below which a trapped state is suspected.
pub const TOL_TRAP: f64 = 1e-8;

/// How directed edges are split into oscillatory and evanescent sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PartitionRule<T> {
    /// `E > V_e`, recomputed at every energy.
    Natural,
    /// Everything oscillatory: the full map.
    Full,
    /// Edges with `V_e < E0` are oscillatory, independent of the energy.
    FixedBelow(T),
}

/// Oscillatory and evanescent directed-edge index sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub osc: Vec<usize>,
    pub ev: Vec<usize>,
    /// Per edge: `true` if oscillatory.
    pub edge_mask: Vec<bool>,
}

impl Partition {
    pub fn from_edge_mask(mask: Vec<bool>) -> Self {
        let mut osc = Vec::new();
        let mut ev = Vec::new();
        for (e, &o) in mask.iter().enumerate() {
            let target = if o { &mut osc } else { &mut ev };
            target.push(2 * e);
            target.push(2 * e + 1);
        }
        Self { osc, ev, edge_mask: mask }
    }

    pub fn new<T: Real>(graph: &MetricGraph<T>, energy: T, rule: PartitionRule<T>) -> Self {
        let mask = graph
            .edges()
            .iter()
            .map(|e| match rule {
                PartitionRule::Natural => energy > e.potential,
                PartitionRule::Full => true,
                PartitionRule::FixedBelow(e0) => e.potential < e0,
            })
            .collect();
        Self::from_edge_mask(mask)
    }

    /// Channel mask of a vertex star.
    pub fn star_mask<T: Real>(&self, graph: &MetricGraph<T>, v: usize) -> Vec<bool> {
        graph.vertices()[v].star.iter().map(|s| self.edge_mask[s.edge]).collect()
    }
}

/// Quantum map and its ingredients at one (possibly complex) energy.
#[derive(Clone, Debug)]
pub struct QuantumMapBundle<T> {
    pub energy: C<T>,
    pub k: WavenumberSet<T>,
    pub vertex: Vec<VertexScattering<T>>,
    /// Block-diagonal scattering matrix indexed by incoming directed edges.
    pub sigma: CMatrix<T>,
    /// Diagonal of `T = exp(iKL)` per directed edge.
    pub t: Vec<C<T>>,
    pub u: CMatrix<T>,
    pub partition: Partition,
    /// Incoming directed edges of each vertex in star order.
    pub incoming: Vec<Vec<usize>>,
}

/// `U(E)` at a real energy with the natural partition.
pub fn assemble<T: Real>(graph: &MetricGraph<T>, energy: T) -> Result<QuantumMapBundle<T>> {
    assemble_with(graph, cr(energy), PartitionRule::Natural)
}

/// `U(z)` at a complex energy; real-axis wavenumbers are used when `Im z = 0`.
pub fn assemble_with<T: Real>(
    graph: &MetricGraph<T>,
    energy: C<T>,
    rule: PartitionRule<T>,
) -> Result<QuantumMapBundle<T>> {
    let k = if energy.im == T::zero() { wavenumbers(graph, energy.re)? } else { wavenumbers_complex(graph, energy)? };
    let n = graph.n_directed();
    let mut sigma = CMatrix::zeros(n, n);
    let mut u = CMatrix::zeros(n, n);
    let t: Vec<C<T>> = (0..n)
        .map(|d| {
            let e = &graph.edges()[d / 2];
            (c(T::zero(), T::one()) * k.directed(d) * e.length).exp()
        })
        .collect();
    let mut vertex = Vec::with_capacity(graph.n_vertices());
    for v in graph.vertices() {
        let kv: Vec<C<T>> = v.star.iter().map(|s| k.k[s.edge]).collect();
        let vs = vertex_scattering(&v.matching, &kv, &v.id)?;
        for (i, si) in v.star.iter().enumerate() {
            for (j, sj) in v.star.iter().enumerate() {
                let s = vs.sigma[(i, j)];
                sigma[(si.incoming, sj.incoming)] = s;
                u[(si.outgoing, sj.incoming)] = t[si.outgoing] * s;
            }
        }
        vertex.push(vs);
    }
    let partition = Partition::new(graph, energy.re, rule);
    let incoming = graph.vertices().iter().map(|v| v.star.iter().map(|s| s.incoming).collect()).collect();
    Ok(QuantumMapBundle { energy, k, vertex, sigma, t, u, partition, incoming })
}

/// `M_kk + M_kd (I - M_dd)^{-1} M_dk`, eliminating the index set `drop`.
pub fn schur_reduce<T: Real>(m: &CMatrix<T>, keep: &[usize], drop: &[usize]) -> CMatrix<T> {
    let kk = m.select(keep, keep);
    if drop.is_empty() || keep.is_empty() {
        return kk;
    }
    let lu = m.select(drop, drop).one_minus().lu();
    &kk + &(&m.select(keep, drop) * &lu.solve(&m.select(drop, keep)))
}

/// Result of the trapped-state test on `I - U_ee`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrappedCheck<T> {
    pub min_singular: T,
    pub flagged: bool,
}

/// Reduced map with the factorisation data needed downstream.
#[derive(Clone, Debug)]
pub struct ReducedMap<T> {
    pub u_red: CMatrix<T>,
    pub trapped: Option<TrappedCheck<T>>,
    /// `det(I - U_ee)`.
    pub det_one_minus_uee: LogDet<T>,
}

/// Residuals of the two determinant identities.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DetIdentityResiduals<T> {
    pub id1: T,
    pub id2: T,
}

impl<T: Real> QuantumMapBundle<T> {
    pub fn dim(&self) -> usize {
        self.u.rows()
    }

    pub fn repartition(&mut self, graph: &MetricGraph<T>, rule: PartitionRule<T>) {
        self.partition = Partition::new(graph, self.energy.re, rule);
    }

    /// `(U_oo, U_oe, U_eo, U_ee)`.
    pub fn blocks(&self) -> [CMatrix<T>; 4] {
        let (o, e) = (&self.partition.osc, &self.partition.ev);
        [self.u.select(o, o), self.u.select(o, e), self.u.select(e, o), self.u.select(e, e)]
    }

    pub fn u_ee(&self) -> CMatrix<T> {
        self.u.select(&self.partition.ev, &self.partition.ev)
    }

    /// `U^{-1} = Sigma^{-1} P T^{-1}`, inverting each vertex block separately.
    pub fn u_inverse(&self) -> Option<CMatrix<T>> {
        let n = self.dim();
        let mut inv_sigma = CMatrix::zeros(n, n);
        for (vs, block) in self.vertex.iter().zip(&self.incoming) {
            let inv = vs.sigma.inverse()?;
            for (a, &i) in block.iter().enumerate() {
                for (b, &j) in block.iter().enumerate() {
                    inv_sigma[(i, j)] = inv[(a, b)];
                }
            }
        }
        Some(CMatrix::from_fn(n, n, |d, dp| inv_sigma[(d, dp ^ 1)] / self.t[dp]))
    }

    /// `det U = det T det P det Sigma`.
    pub fn log_det_u(&self) -> LogDet<T> {
        let mut ld = LogDet::one();
        for &t in &self.t {
            ld = ld.mul(LogDet::from_value(t));
        }
        if (self.dim() / 2) % 2 == 1 {
            ld = ld.mul(LogDet::from_value(cr(-T::one())));
        }
        for vs in &self.vertex {
            ld = ld.mul(vs.sigma.log_det());
        }
        ld
    }

    pub fn trapped_state_check(&self) -> Option<TrappedCheck<T>> {
        if self.partition.ev.is_empty() {
            return None;
        }
        let min_singular = min_singular_value(&self.u_ee().one_minus());
        Some(TrappedCheck { min_singular, flagged: !(min_singular >= T::tol(TOL_TRAP)) })
    }

    /// `U_red = U_oo + U_oe (I - U_ee)^{-1} U_eo`, returned even when flagged.
    pub fn reduce_unchecked(&self) -> ReducedMap<T> {
        let [oo, oe, eo, ee] = self.blocks();
        if self.partition.ev.is_empty() {
            return ReducedMap { u_red: oo, trapped: None, det_one_minus_uee: LogDet::one() };
        }
        let lu = ee.one_minus().lu();
        let trapped = self.trapped_state_check();
        let u_red = if self.partition.osc.is_empty() { oo } else { &oo + &(&oe * &lu.solve(&eo)) };
        ReducedMap { u_red, trapped, det_one_minus_uee: lu.log_det() }
    }

    /// Reduced map; fails when `I - U_ee` is nearly singular.
    pub fn reduce(&self) -> Result<ReducedMap<T>> {
        let r = self.reduce_unchecked();
        if let Some(tc) = r.trapped {
            if tc.flagged {
                return Err(Error::TrappedStateSuspected {
                    energy: self.energy.re.as_f64(),
                    min_singular: tc.min_singular.as_f64(),
                });
            }
        }
        Ok(r)
    }

    /// `xi = det(I - U)`.
    pub fn secular(&self) -> LogDet<T> {
        self.u.one_minus().log_det()
    }

    /// `det(I - (U^{-1})_ee)`.
    pub fn log_det_one_minus_uinv_ee(&self) -> LogDet<T> {
        if self.partition.ev.is_empty() {
            return LogDet::one();
        }
        match self.u_inverse() {
            Some(inv) => inv.select(&self.partition.ev, &self.partition.ev).one_minus().log_det(),
            None => LogDet::zero(),
        }
    }

    pub fn det_identity_residuals(&self) -> DetIdentityResiduals<T> {
        if self.partition.ev.is_empty() {
            return DetIdentityResiduals::default();
        }
        let red = self.reduce_unchecked();
        let lhs1 = red.u_red.log_det().div(self.log_det_u());
        let rhs1 = self.log_det_one_minus_uinv_ee().div(red.det_one_minus_uee);
        let lhs2 = self.secular();
        let rhs2 = red.det_one_minus_uee.mul(red.u_red.one_minus().log_det());
        DetIdentityResiduals { id1: lhs1.relative_distance(rhs1), id2: lhs2.relative_distance(rhs2) }
    }

    /// Block relations of the map: `U_oo^† U_oo = I`, `i U_oe^† U_oo = P T^{-1} U_eo`,
    /// `i U_oo U_eo^† = U_oe P T^†` and `i U_oe^† U_oe = P T^{-1} U_ee - U_ee^† P T^{-1}`,
    /// all restricted to the evanescent block. Each residual is scaled by one
    /// plus the largest entry of the compared sides.
    pub fn block_symmetry_residuals(&self) -> SymmetryResiduals<T> {
        let [oo, oe, eo, ee] = self.blocks();
        let ev = &self.partition.ev;
        let ne = ev.len();
        let pos: std::collections::HashMap<usize, usize> = ev.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        let swap = |f: &dyn Fn(C<T>) -> C<T>| {
            CMatrix::from_fn(ne, ne, |a, b| if pos[&(ev[b] ^ 1)] == a { f(self.t[ev[b]]) } else { C::zero() })
        };
        let pt_inv = swap(&|t| C::<T>::one() / t);
        let pt_adj = swap(&|t| t.conj());
        let i = c(T::zero(), T::one());
        let rel = |x: CMatrix<T>, y: CMatrix<T>| -> T {
            if x.rows() == 0 || x.cols() == 0 {
                return T::zero();
            }
            (&x - &y).max_abs() / (T::one() + x.max_abs().max(y.max_abs()))
        };
        let r1 = rel(&oo.adjoint() * &oo, CMatrix::identity(oo.rows()));
        let r2 = rel((&oe.adjoint() * &oo).scale(i), &pt_inv * &eo);
        let r3 = rel((&oo * &eo.adjoint()).scale(i), &oe * &pt_adj);
        let r4 = rel(
            (&oe.adjoint() * &oe).scale(i),
            &(&pt_inv * &ee) - &(&ee.adjoint() * &pt_inv),
        );
        SymmetryResiduals { r: [r1, r2, r3, r4] }
    }

    /// Vertex-level symmetry residuals, worst over all vertices.
    pub fn vertex_symmetry_residuals(&self, graph: &MetricGraph<T>) -> SymmetryResiduals<T> {
        let mut worst = SymmetryResiduals::<T>::default();
        for (v, vs) in self.vertex.iter().enumerate() {
            let r = vertex_symmetry_residuals(&vs.sigma, &self.partition.star_mask(graph, v));
            for k in 0..4 {
                worst.r[k] = worst.r[k].max(r.r[k]);
            }
        }
        worst
    }

    /// Edge-indexed map `sigma_leaf T^2 sigma_center` of a star graph; rows and
    /// columns follow the centre's star order.
    pub fn star_reduce(&self, graph: &MetricGraph<T>) -> Result<CMatrix<T>> {
        let center = graph.star_center().ok_or(Error::NotAStar)?;
        let star = &graph.vertices()[center].star;
        let sc = &self.vertex[center].sigma;
        let n = star.len();
        let leaf_factor: Vec<C<T>> = star
            .iter()
            .map(|s| {
                let e = &graph.edges()[s.edge];
                let leaf = if e.from == center { e.to } else { e.from };
                let t = self.t[s.outgoing];
                self.vertex[leaf].sigma[(0, 0)] * t * t
            })
            .collect();
        Ok(CMatrix::from_fn(n, n, |i, j| leaf_factor[i] * sc[(i, j)]))
    }
}

/// Worst residuals of the structural identities at one energy.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ResidualSuite<T> {
    pub vertex_symmetry: T,
    pub block_symmetry: T,
    /// `|U_red^† U_red - I|`; zero when the reduction is flagged as trapped.
    pub unitarity: T,
    pub det_identity_1: T,
    pub det_identity_2: T,
    /// Net flux relative to `(1 + max|sigma|^2) |b_in|^2`.
    pub flux: T,
    pub trapped: bool,
}

impl<T: Real> ResidualSuite<T> {
    pub fn max(&self) -> T {
        [self.vertex_symmetry, self.block_symmetry, self.unitarity, self.det_identity_1, self.det_identity_2, self.flux]
            .into_iter()
            .fold(T::zero(), T::max)
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            vertex_symmetry: self.vertex_symmetry.max(o.vertex_symmetry),
            block_symmetry: self.block_symmetry.max(o.block_symmetry),
            unitarity: self.unitarity.max(o.unitarity),
            det_identity_1: self.det_identity_1.max(o.det_identity_1),
            det_identity_2: self.det_identity_2.max(o.det_identity_2),
            flux: self.flux.max(o.flux),
            trapped: self.trapped || o.trapped,
        }
    }
}

/// Evaluates every structural identity at a real energy off threshold.
/// `b_in(v, j)` supplies incoming amplitudes for the flux balance.
pub fn residual_suite<T: Real>(
    graph: &MetricGraph<T>,
    energy: T,
    mut b_in: impl FnMut(usize, usize) -> C<T>,
) -> Result<ResidualSuite<T>> {
    let b = assemble(graph, energy)?;
    let red = b.reduce_unchecked();
    let trapped = red.trapped.is_some_and(|t| t.flagged);
    let unitarity = if trapped { T::zero() } else { red.u_red.unitarity_defect() };
    let det = if trapped { DetIdentityResiduals::default() } else { b.det_identity_residuals() };
    let mut flux = T::zero();
    for (v, vs) in b.vertex.iter().enumerate() {
        let input: Vec<C<T>> = (0..vs.sigma.rows()).map(|j| b_in(v, j)).collect();
        let norm: T = input.iter().map(|z| z.norm_sqr()).sum();
        let m = vs.sigma.max_abs();
        let f = crate::scattering::vertex_flux(&vs.sigma, &input, &b.partition.star_mask(graph, v));
        flux = flux.max(f.abs() / ((T::one() + m * m) * norm));
    }
    Ok(ResidualSuite {
        vertex_symmetry: b.vertex_symmetry_residuals(graph).max(),
        block_symmetry: b.block_symmetry_residuals().max(),
        unitarity,
        det_identity_1: det.id1,
        det_identity_2: det.id2,
        flux,
        trapped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, MatchingKind};

    pub(crate) fn interval() -> MetricGraph<f64> {
        GraphBuilder::new()
            .standard_vertex("left", MatchingKind::Dirichlet)
            .standard_vertex("step", MatchingKind::ContinuityStep)
            .standard_vertex("right", MatchingKind::Dirichlet)
            .edge("1", "left", "step", 1.0, 0.0)
            .edge("2", "step", "right", 3f64.sqrt(), 213.0)
            .build()
            .unwrap()
    }

    fn step_coefficients(e: f64) -> (C<f64>, C<f64>, C<f64>, C<f64>) {
        let k1 = cr(e.sqrt());
        let k2 = if e > 213.0 { cr((e - 213.0).sqrt()) } else { c(0.0, (213.0 - e).sqrt()) };
        let r = (k1 - k2) / (k1 + k2);
        let t = (k1 * k2).sqrt() * 2.0 / (k1 + k2);
        (k1, k2, r, t)
    }

    fn closed_form_two_by_two(e: f64) -> CMatrix<f64> {
        let (k1, k2, r, t) = step_coefficients(e);
        let l2 = 3f64.sqrt();
        let i = c(0.0, 1.0);
        let e1 = (i * k1 * 2.0).exp();
        let e2 = (i * k2 * 2.0 * l2).exp();
        CMatrix::from_rows(&[vec![-r * e1, -t * e1], vec![-t * e2, r * e2]])
    }

    #[test]
    fn interval_star_reduction_matches_closed_form() {
        let g = interval();
        for e in [37.0, 150.0, 300.0, 399.5] {
            let b = assemble(&g, e).unwrap();
            let ut = b.star_reduce(&g).unwrap();
            assert!((&ut - &closed_form_two_by_two(e)).max_abs() < 1e-12, "E = {e}");
            let lhs = b.secular();
            let rhs = ut.one_minus().log_det();
            assert!(lhs.relative_distance(rhs) < 1e-10);
        }
    }

    #[test]
    fn interval_reduced_secular_and_ratio() {
        let g = interval();
        let i = c(0.0, 1.0);
        for e in [3.0, 50.0, 100.0, 200.0] {
            let (k1, k2, r, _) = step_coefficients(e);
            let l2 = 3f64.sqrt();
            let e1 = (i * k1 * 2.0).exp();
            let e2 = (i * k2 * 2.0 * l2).exp();
            let u_red = (e1 * e2 - r * e1) / (cr(1.0) - r * e2);
            let b = assemble(&g, e).unwrap();
            let red = b.reduce().unwrap();
            assert!((red.u_red.one_minus().det() - (cr(1.0) - u_red)).norm() < 1e-11, "E = {e}");
            assert!((red.det_one_minus_uee.value() - (cr(1.0) - r * e2)).norm() < 1e-12);
            assert!(red.u_red.unitarity_defect() < 1e-12);
            let ratio = b.secular().div(red.u_red.one_minus().log_det()).value();
            assert!((ratio - (cr(1.0) - r * e2)).norm() < 1e-9);
        }
    }

    #[test]
    fn reduced_map_tends_to_unimodular_threshold_value() {
        let g = interval();
        let l2 = 3f64.sqrt();
        let i = c(0.0, 1.0);
        let k1 = 213f64.sqrt();
        let limit = (i * 2.0 * k1).exp() * (cr(1.0) + i * k1 * l2) / (cr(1.0) - i * k1 * l2);
        let gap = |delta: f64| {
            let red = assemble(&g, 213.0 - delta).unwrap().reduce().unwrap();
            (cr(1.0) - red.u_red.one_minus().det() - limit).norm()
        };
        // The approach is linear in sqrt(V - E).
        let (far, near) = (gap(1e-2), gap(1e-6));
        assert!(near < 1e-2 && near < far / 50.0, "{far} {near}");
    }

    fn star3_graph() -> MetricGraph<f64> {
        GraphBuilder::new()
            .standard_vertex("c", MatchingKind::Kirchhoff)
            .standard_vertex("a1", MatchingKind::Dirichlet)
            .standard_vertex("a2", MatchingKind::Dirichlet)
            .standard_vertex("a3", MatchingKind::Dirichlet)
            .edge("1", "c", "a1", 2f64.sqrt(), 0.0)
            .edge("2", "c", "a2", 3f64.sqrt(), 121.0)
            .edge("3", "c", "a3", 1.0, 198.0)
            .build()
            .unwrap()
    }

    #[test]
    fn star3_partition_and_identities() {
        let g = star3_graph();
        let b = assemble(&g, 150.0).unwrap();
        assert_eq!(b.partition.edge_mask, vec![true, true, false]);
        assert_eq!(b.partition.ev, vec![4, 5]);
        let r = b.det_identity_residuals();
        assert!(r.id1 < 1e-9 && r.id2 < 1e-9, "{r:?}");
        assert!(b.block_symmetry_residuals().max() < 1e-12);
        let full = assemble(&g, 250.0).unwrap();
        assert!(full.partition.ev.is_empty());
        assert_eq!(full.det_identity_residuals(), DetIdentityResiduals::default());
        assert!(full.u.unitarity_defect() < 1e-12);
        let low = assemble(&g, 1.0).unwrap();
        assert_eq!(low.partition.osc, vec![0, 1]);
    }

    #[test]
    fn star3_reduction_preserves_secular_function() {
        let g = star3_graph();
        for k in 0..60 {
            let e = 1.3 + 5.1 * k as f64;
            let b = assemble(&g, e).unwrap();
            let ut = b.star_reduce(&g).unwrap();
            let d6 = b.secular();
            let d3 = ut.one_minus().log_det();
            assert!((d6.value() - d3.value()).norm() < 1e-10 * (1.0 + d6.abs()), "E = {e}");
        }
    }

    #[test]
    fn nested_reduction_equals_one_shot() {
        let g = star3_graph();
        let b = assemble(&g, 100.0).unwrap();
        let one_shot = b.reduce().unwrap().u_red;
        let step1 = schur_reduce(&b.u, &[0, 1, 2, 3], &[4, 5]);
        let step2 = schur_reduce(&step1, &[0, 1], &[2, 3]);
        assert!((&one_shot - &step2).max_abs() < 1e-10);
        assert!(one_shot.unitarity_defect() < 1e-10);
    }

    #[test]
    fn dirichlet_edge_secular_zeros() {
        let g = GraphBuilder::new()
            .standard_vertex("a", MatchingKind::Dirichlet)
            .standard_vertex("b", MatchingKind::Dirichlet)
            .edge("e", "a", "b", std::f64::consts::PI, 0.0)
            .build()
            .unwrap();
        let b = assemble(&g, 4.0).unwrap();
        assert!(b.secular().abs() < 1e-12);
        assert!(assemble(&g, 5.0).unwrap().secular().abs() > 0.1);
        let ut = b.star_reduce(&g).unwrap();
        assert_eq!((ut.rows(), ut.cols()), (1, 1));
        assert!((ut[(0, 0)] - cr(1.0)).norm() < 1e-12);
    }

    #[test]
    fn non_star_rejected() {
        let g = GraphBuilder::new()
            .standard_vertex("a", MatchingKind::Kirchhoff)
            .standard_vertex("b", MatchingKind::Kirchhoff)
            .edge("e", "a", "b", 1.0, 0.0)
            .edge("f", "a", "b", 2.0, 0.0)
            .build()
            .unwrap();
        let b = assemble(&g, 3.0).unwrap();
        assert!(matches!(b.star_reduce(&g), Err(Error::NotAStar)));
    }

    #[test]
    fn map_inverse_is_inverse() {
        let g = star3_graph();
        let b = assemble(&g, 130.0).unwrap();
        let inv = b.u_inverse().unwrap();
        assert!((&(&b.u * &inv) - &CMatrix::identity(6)).max_abs() < 1e-10);
        assert!(b.log_det_u().relative_distance(b.u.log_det()) < 1e-10);
    }
}
