//! Wavenumbers, vertex scattering matrices, the base unitary and its barrier
//! decomposition, block symmetries and flux balance at a single vertex.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::graph::{MatchingConditions, MetricGraph};
use crate::linalg::CMatrix;
use crate::scalar::{c, cr, Real, C};

/// Per-edge wavenumbers `K_e = sqrt(E - V_e)` with `Im K_e >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct WavenumberSet<T> {
    /// Energy at which the wavenumbers were evaluated (possibly complex).
    pub energy: C<T>,
    /// One entry per edge; both directions of an edge share it.
    pub k: Vec<C<T>>,
    /// `true` where `Re E > V_e`.
    pub oscillatory: Vec<bool>,
}

impl<T: Real> WavenumberSet<T> {
    pub fn directed(&self, d: usize) -> C<T> {
        self.k[d / 2]
    }

    pub fn osc_edges(&self) -> Vec<usize> {
        (0..self.k.len()).filter(|&e| self.oscillatory[e]).collect()
    }

    pub fn ev_edges(&self) -> Vec<usize> {
        (0..self.k.len()).filter(|&e| !self.oscillatory[e]).collect()
    }
}

fn threshold_tolerance<T: Real>(e: T) -> T {
    T::tol(1e-9) * (T::one() + e.abs())
}

/// Rejects energies within `1e-9 (1 + |E|)` of an edge potential.
pub fn check_threshold<T: Real>(graph: &MetricGraph<T>, energy: T) -> Result<()> {
    let tol = threshold_tolerance(energy);
    for edge in graph.edges() {
        if (energy - edge.potential).abs() < tol {
            return Err(Error::AtThreshold { edge: edge.id.clone(), energy: energy.as_f64() });
        }
    }
    Ok(())
}

/// Wavenumbers at a real energy; `K_e = i|K_e|` below the edge potential.
pub fn wavenumbers<T: Real>(graph: &MetricGraph<T>, energy: T) -> Result<WavenumberSet<T>> {
    check_threshold(graph, energy)?;
    let mut k = Vec::with_capacity(graph.n_edges());
    let mut osc = Vec::with_capacity(graph.n_edges());
    for edge in graph.edges() {
        let diff = energy - edge.potential;
        if diff > T::zero() {
            k.push(cr(diff.sqrt()));
            osc.push(true);
        } else {
            k.push(c(T::zero(), (-diff).sqrt()));
            osc.push(false);
        }
    }
    Ok(WavenumberSet { energy: cr(energy), k, oscillatory: osc })
}

/// Wavenumbers at `z = E + i eps` with the principal square root; the partition
/// follows `Re z`.
pub fn wavenumbers_complex<T: Real>(graph: &MetricGraph<T>, z: C<T>) -> Result<WavenumberSet<T>> {
    check_threshold(graph, z.re)?;
    let mut k = Vec::with_capacity(graph.n_edges());
    let mut osc = Vec::with_capacity(graph.n_edges());
    for edge in graph.edges() {
        let w = (z - cr(edge.potential)).sqrt();
        // The principal root already has Re >= 0; flip onto the upper half plane.
        k.push(if w.im < T::zero() { -w } else { w });
        osc.push(z.re > edge.potential);
    }
    Ok(WavenumberSet { energy: z, k, oscillatory: osc })
}

/// Scattering data of one vertex at fixed wavenumbers.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexScattering<T> {
    pub sigma: CMatrix<T>,
    /// `sigma` at `K = I`.
    pub base: CMatrix<T>,
    /// Diagonal of `(K - I)/(K + I)`.
    pub reflection: Vec<C<T>>,
    /// Diagonal of `2 K^{1/2}/(K + I)`.
    pub transmission: Vec<C<T>>,
    /// 1-norm condition number of `A + iBK`.
    pub condition: T,
}

/// Largest accepted condition number of `A + iBK`.
pub fn cond_max<T: Real>() -> T {
    T::one() / T::tol(1e-12)
}

fn sigma_from<T: Real>(mc: &MatchingConditions<T>, k: &[C<T>], vertex: &str) -> Result<(CMatrix<T>, T)> {
    let n = k.len();
    let i = c(T::zero(), T::one());
    let sqrt_k: Vec<C<T>> = k.iter().map(|z| z.sqrt()).collect();
    let m = CMatrix::from_fn(n, n, |r, s| mc.a[(r, s)] + i * mc.b[(r, s)] * k[s]);
    let lu = m.lu();
    let condition = if lu.is_singular() { T::infinity() } else { m.condition_1() };
    if !(condition < cond_max::<T>()) {
        return Err(Error::SingularVertexMatrix { vertex: vertex.into(), condition: condition.as_f64() });
    }
    let rhs = CMatrix::from_fn(n, n, |r, s| mc.b[(r, s)] * sqrt_k[s]);
    let x = lu.solve(&rhs);
    let two_i = c(T::zero(), T::lit(2.0));
    let sigma = CMatrix::from_fn(n, n, |r, s| {
        let delta = if r == s { Complex::one() } else { Complex::zero() };
        two_i * sqrt_k[r] * x[(r, s)] - delta
    });
    Ok((sigma, condition))
}

/// `sigma(K) = -I + 2i K^{1/2} (A + iBK)^{-1} B K^{1/2}` by an LU solve.
pub fn vertex_scattering<T: Real>(
    mc: &MatchingConditions<T>,
    k: &[C<T>],
    vertex: &str,
) -> Result<VertexScattering<T>> {
    let n = k.len();
    assert_eq!(n, mc.degree(), "wavenumber count must equal the vertex degree");
    let (sigma, condition) = sigma_from(mc, k, vertex)?;
    let (base, _) = sigma_from(mc, &vec![Complex::one(); n], vertex)?;
    let one = Complex::<T>::one();
    let reflection = k.iter().map(|&z| (z - one) / (z + one)).collect();
    let transmission = k.iter().map(|&z| z.sqrt() * T::lit(2.0) / (z + one)).collect();
    Ok(VertexScattering { sigma, base, reflection, transmission, condition })
}

impl<T: Real> VertexScattering<T> {
    /// `R + T (I + S R)^{-1} S T`, or `None` when `I + S R` is singular.
    pub fn barrier_form(&self) -> Option<CMatrix<T>> {
        let n = self.reflection.len();
        let r = CMatrix::diag(&self.reflection);
        let t = CMatrix::diag(&self.transmission);
        let m = &CMatrix::identity(n) + &(&self.base * &r);
        let lu = m.lu();
        if lu.is_singular() {
            return None;
        }
        let inner = lu.solve(&(&self.base * &t));
        Some(&r + &(&t * &inner))
    }

    /// `max |sigma - barrier form|`.
    pub fn barrier_residual(&self) -> Option<T> {
        self.barrier_form().map(|b| (&self.sigma - &b).max_abs())
    }
}

/// Max-norm residuals of the four block relations between oscillatory and
/// evanescent channels.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SymmetryResiduals<T> {
    pub r: [T; 4],
}

impl<T: Real> SymmetryResiduals<T> {
    pub fn max(&self) -> T {
        self.r.iter().copied().fold(T::zero(), T::max)
    }
}

fn blocks<T: Real>(m: &CMatrix<T>, osc: &[usize], ev: &[usize]) -> [CMatrix<T>; 4] {
    [m.select(osc, osc), m.select(osc, ev), m.select(ev, osc), m.select(ev, ev)]
}

fn max_abs_or_zero<T: Real>(m: &CMatrix<T>) -> T {
    if m.rows() == 0 || m.cols() == 0 {
        T::zero()
    } else {
        m.max_abs()
    }
}

/// Residuals of `s_oo^† s_oo = I`, `i s_oe^† s_oo = s_eo`, `i s_oo s_eo^† = s_oe`
/// and `i s_oe^† s_oe = s_ee - s_ee^†` for a channel mask (`true` = oscillatory).
pub fn vertex_symmetry_residuals<T: Real>(sigma: &CMatrix<T>, oscillatory: &[bool]) -> SymmetryResiduals<T> {
    let osc: Vec<usize> = (0..oscillatory.len()).filter(|&j| oscillatory[j]).collect();
    let ev: Vec<usize> = (0..oscillatory.len()).filter(|&j| !oscillatory[j]).collect();
    let [oo, oe, eo, ee] = blocks(sigma, &osc, &ev);
    let i = c(T::zero(), T::one());
    let r1 = max_abs_or_zero(&(&(&oo.adjoint() * &oo) - &CMatrix::identity(osc.len())));
    let r2 = max_abs_or_zero(&(&(&oe.adjoint() * &oo).scale(i) - &eo));
    let r3 = max_abs_or_zero(&(&(&oo * &eo.adjoint()).scale(i) - &oe));
    let r4 = max_abs_or_zero(&(&(&oe.adjoint() * &oe).scale(i) - &(&ee - &ee.adjoint())));
    SymmetryResiduals { r: [r1, r2, r3, r4] }
}

/// Total outgoing flux `sum_e I_e` for `b_out = sigma b_in`: `|b_out|^2 - |b_in|^2`
/// on oscillatory edges and `2 Im(b_out^* b_in)` on evanescent ones. This sign is
/// the one for which the four block symmetries force a zero total.
pub fn vertex_flux<T: Real>(sigma: &CMatrix<T>, b_in: &[C<T>], oscillatory: &[bool]) -> T {
    let n = b_in.len();
    let b_out: Vec<C<T>> = (0..n)
        .map(|r| (0..n).fold(Complex::zero(), |acc, s| acc + sigma[(r, s)] * b_in[s]))
        .collect();
    (0..n)
        .map(|e| {
            if oscillatory[e] {
                b_out[e].norm_sqr() - b_in[e].norm_sqr()
            } else {
                T::lit(2.0) * (b_out[e].conj() * b_in[e]).im
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, MatchingKind};

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

    fn std(kind: MatchingKind<f64>, d: usize) -> MatchingConditions<f64> {
        MatchingConditions::standard(kind, d).unwrap()
    }

    #[test]
    fn wavenumber_branches() {
        let g = interval();
        let w = wavenumbers(&g, 4.0).unwrap();
        assert_eq!(w.k[0], c(2.0, 0.0));
        let w = wavenumbers(&g, 100.0).unwrap();
        assert!((w.k[1] - c(0.0, 113f64.sqrt())).norm() < 1e-14);
        assert_eq!(w.osc_edges(), vec![0]);
        assert_eq!(w.ev_edges(), vec![1]);
        assert!(matches!(wavenumbers(&g, 213.0), Err(Error::AtThreshold { .. })));
    }

    #[test]
    fn complex_energy_approaches_real_branch() {
        let g = interval();
        let w = wavenumbers_complex(&g, c(100.0, 1e-10)).unwrap();
        let r = wavenumbers(&g, 100.0).unwrap();
        for (a, b) in w.k.iter().zip(&r.k) {
            assert!((a - b).norm() < 1e-9);
            assert!(a.im >= 0.0 && a.re >= 0.0);
        }
    }

    #[test]
    fn dirichlet_reflects_with_minus_one() {
        for k in [c(0.3, 0.0), c(0.0, 2.0), c(5.0, 0.0)] {
            let vs = vertex_scattering(&std(MatchingKind::Dirichlet, 1), &[k], "v").unwrap();
            assert!((vs.sigma[(0, 0)] + 1.0).norm() < 1e-15);
        }
    }

    #[test]
    fn potential_step_matches_fresnel_coefficients() {
        let (k1, k2) = (3.0, 1.7);
        let vs = vertex_scattering(&std(MatchingKind::ContinuityStep, 2), &[cr(k1), cr(k2)], "v").unwrap();
        let r = (k1 - k2) / (k1 + k2);
        let t = 2.0 * (k1 * k2).sqrt() / (k1 + k2);
        let expected = CMatrix::from_real_rows(&[vec![r, t], vec![t, -r]]);
        assert!((&vs.sigma - &expected).max_abs() < 1e-14);
    }

    #[test]
    fn robin_reflection_and_limits() {
        for (lambda, k) in [(-2.5, c(1.3, 0.0)), (0.7, c(0.0, 2.2)), (3.0, c(4.0, 0.0))] {
            let vs = vertex_scattering(&std(MatchingKind::Robin(lambda), 1), &[k], "v").unwrap();
            let i = c(0.0, 1.0);
            let expected = -(cr(lambda) + i * k) / (cr(lambda) - i * k);
            assert!((vs.sigma[(0, 0)] - expected).norm() < 1e-14);
        }
        let neumann = vertex_scattering(&std(MatchingKind::Robin(0.0), 1), &[cr(2.0)], "v").unwrap();
        assert!((neumann.sigma[(0, 0)] - 1.0).norm() < 1e-15);
        let stiff = vertex_scattering(&std(MatchingKind::Robin(1e9), 1), &[cr(2.0)], "v").unwrap();
        assert!((stiff.sigma[(0, 0)] + 1.0).norm() < 1e-8);
    }

    #[test]
    fn kirchhoff_equal_wavenumbers() {
        let d = 3;
        let vs = vertex_scattering(&std(MatchingKind::Kirchhoff, d), &vec![cr(1.0); d], "v").unwrap();
        let expected = CMatrix::from_fn(d, d, |r, s| cr(2.0 / d as f64 - if r == s { 1.0 } else { 0.0 }));
        assert!((&vs.sigma - &expected).max_abs() < 1e-14);
    }

    #[test]
    fn step_between_potentials_is_symmetric_and_conserves_flux() {
        let g = interval();
        let w = wavenumbers(&g, 100.0).unwrap();
        let vs = vertex_scattering(&g.vertices()[1].matching, &w.k, "step").unwrap();
        let res = vertex_symmetry_residuals(&vs.sigma, &w.oscillatory);
        assert!(res.max() < 1e-12, "{res:?}");
        for b in [[cr(1.0), cr(0.0)], [cr(0.0), cr(1.0)], [c(0.3, -1.1), c(0.7, 0.4)]] {
            let flux = vertex_flux(&vs.sigma, &b, &w.oscillatory);
            assert!(flux.abs() < 1e-12, "{flux}");
        }
        assert!(vs.barrier_residual().unwrap() < 1e-12);
    }

    #[test]
    fn all_oscillatory_blocks_are_vacuous() {
        let vs = vertex_scattering(&std(MatchingKind::Kirchhoff, 3), &[cr(1.0), cr(2.0), cr(0.5)], "v").unwrap();
        let res = vertex_symmetry_residuals(&vs.sigma, &[true; 3]);
        assert!(res.r[0] < 1e-14);
        assert_eq!(&res.r[1..], &[0.0; 3]);
    }

    #[test]
    fn equal_potentials_one_unit_up_give_base() {
        let vs = vertex_scattering(&std(MatchingKind::Robin(0.4), 4), &[cr(1.0); 4], "v").unwrap();
        assert_eq!(vs.sigma, vs.base);
        assert!(vs.base.unitarity_defect() < 1e-14);
    }

    #[test]
    fn near_singular_vertex_matrix_rejected() {
        // A + iBK vanishes for Robin with lambda = iK, reachable at K = -i lambda.
        let mc = std(MatchingKind::Robin(2.0), 1);
        let err = vertex_scattering(&mc, &[c(0.0, -2.0)], "v").unwrap_err();
        assert!(matches!(err, Error::SingularVertexMatrix { .. }));
    }
}
