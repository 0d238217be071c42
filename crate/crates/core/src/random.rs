//! Random unitaries, random self-adjoint matching conditions and random graphs,
//! used by property tests and the CLI fuzz mode.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::graph::{GraphBuilder, MatchingConditions, MetricGraph, VertexMatching};
use crate::linalg::CMatrix;
use crate::scalar::{c, Real, C};

fn gaussian<T: Real, R: Rng + ?Sized>(rng: &mut R) -> C<T> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(T::lit(re), T::lit(im))
}

/// Ginibre matrix with i.i.d. standard complex normal entries.
pub fn random_ginibre<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix<T> {
    CMatrix::from_fn(n, n, |_, _| gaussian(rng))
}

/// Haar-distributed unitary from Gram-Schmidt on a Ginibre matrix.
pub fn random_unitary<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix<T> {
    let g = random_ginibre::<T, R>(n, rng);
    let mut cols: Vec<Vec<C<T>>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v: Vec<C<T>> = (0..n).map(|i| g[(i, j)]).collect();
        // Two passes of modified Gram-Schmidt keep orthogonality at machine precision.
        for _ in 0..2 {
            for q in &cols {
                let proj = q.iter().zip(&v).fold(Complex::new(T::zero(), T::zero()), |s, (a, b)| s + a.conj() * b);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi = *vi - *qi * proj;
                }
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
        for vi in v.iter_mut() {
            *vi = *vi / norm;
        }
        cols.push(v);
    }
    CMatrix::from_fn(n, n, |i, j| cols[j][i])
}

/// Self-adjoint `(A, B)` whose base unitary is a Haar-random `S`:
/// `A = C (I - S)/2`, `B = -i C (I + S)/2` with a random invertible `C`.
pub fn random_matching<T: Real, R: Rng + ?Sized>(degree: usize, rng: &mut R) -> MatchingConditions<T> {
    let s = random_unitary::<T, R>(degree, rng);
    let id = CMatrix::identity(degree);
    let half = c(T::lit(0.5), T::zero());
    let a = (&id - &s).scale(half);
    let b = (&id + &s).scale(c(T::zero(), -T::lit(0.5)));
    let left = random_ginibre::<T, R>(degree, rng);
    MatchingConditions::new(&left * &a, &left * &b)
}

/// Parameters of [`random_graph`].
#[derive(Clone, Copy, Debug)]
pub struct RandomGraphOptions {
    pub max_vertices: usize,
    pub max_edges: usize,
    pub length_range: (f64, f64),
    pub potential_range: (f64, f64),
    pub allow_loops: bool,
}

impl Default for RandomGraphOptions {
    fn default() -> Self {
        Self {
            max_vertices: 5,
            max_edges: 8,
            length_range: (0.5, 2.0),
            potential_range: (0.0, 30.0),
            allow_loops: true,
        }
    }
}

/// Connected random multigraph with random potentials and random self-adjoint
/// matching conditions at every vertex.
pub fn random_graph<T: Real, R: Rng + ?Sized>(opts: &RandomGraphOptions, rng: &mut R) -> MetricGraph<T> {
    loop {
        let nv = rng.random_range(2..=opts.max_vertices.max(2));
        let ne = rng.random_range((nv - 1)..=opts.max_edges.max(nv - 1));
        let mut ends = Vec::with_capacity(ne);
        for v in 1..nv {
            ends.push((rng.random_range(0..v), v));
        }
        while ends.len() < ne {
            let a = rng.random_range(0..nv);
            let b = rng.random_range(0..nv);
            if a == b && !opts.allow_loops {
                continue;
            }
            ends.push((a, b));
        }
        let mut degree = vec![0usize; nv];
        for &(a, b) in &ends {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut builder = GraphBuilder::new();
        for (v, &d) in degree.iter().enumerate() {
            builder = builder.vertex(format!("v{v}"), VertexMatching::Custom(random_matching(d, rng)));
        }
        for (j, &(a, b)) in ends.iter().enumerate() {
            let length = rng.random_range(opts.length_range.0..opts.length_range.1);
            let potential = rng.random_range(opts.potential_range.0..opts.potential_range.1);
            builder = builder.edge(format!("e{j}"), format!("v{a}"), format!("v{b}"), T::lit(length), T::lit(potential));
        }
        // A random left factor can be badly conditioned; draw again in that case.
        if let Ok(g) = builder.build() {
            return g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..7 {
            let u = random_unitary::<f64, _>(n, &mut rng);
            assert!(u.unitarity_defect() < 1e-13);
        }
    }

    #[test]
    fn random_matching_is_valid_and_has_prescribed_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in 1..6 {
            let mc = random_matching::<f64, _>(d, &mut rng);
            assert!(mc.validate().accepted());
        }
    }

    #[test]
    fn random_graphs_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let g = random_graph::<f64, _>(&RandomGraphOptions::default(), &mut rng);
            assert!(g.n_edges() >= 1);
        }
    }
}
