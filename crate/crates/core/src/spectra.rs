//! Secular functions, eigenvalues with multiplicities and the exact counting
//! function.
//!
//! Eigenvalues above the lowest potential are the energies where an eigenphase
//! of the reduced map passes through zero. Between two thresholds the
//! reduced map has fixed size, so its eigenphases are followed along a grid
//! with adaptive subdivision, signed zero crossings are counted, and each
//! crossing is bracketed by bisection on the crossing count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::linalg::{eigenvalues, min_singular_value, LogDet};
use crate::quantum_map::{assemble, assemble_with, PartitionRule, QuantumMapBundle};
use crate::scalar::{cr, wrap_angle, Real};

/// `xi(E) = det(I - U(E))`.
pub fn secular<T: Real>(bundle: &QuantumMapBundle<T>) -> LogDet<T> {
    bundle.secular()
}

/// `xi_red(E) = det(I - U_red(E))`.
pub fn secular_red<T: Real>(bundle: &QuantumMapBundle<T>) -> Result<LogDet<T>> {
    Ok(bundle.reduce()?.u_red.one_minus().log_det())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eigenvalue<T> {
    pub energy: T,
    pub multiplicity: usize,
    /// `|xi_red|` at the refined energy.
    pub residual: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult<T> {
    pub eigenvalues: Vec<Eigenvalue<T>>,
    pub range: (T, T),
    /// Number of reduced-map evaluations spent on the sweep.
    pub evaluations: usize,
    /// Sample energies where `I - U_ee` was nearly singular.
    pub trapped: Vec<T>,
    /// Thresholds strictly inside the range.
    pub thresholds: Vec<T>,
    /// States below `range.0` supplied by the caller.
    pub floor_count: usize,
}

impl<T: Real> SpectralResult<T> {
    /// Eigenvalues strictly below `e`, with multiplicity, plus the floor offset.
    pub fn count_below(&self, e: T) -> usize {
        self.floor_count
            + self.eigenvalues.iter().filter(|ev| ev.energy < e).map(|ev| ev.multiplicity).sum::<usize>()
    }

    pub fn total(&self) -> usize {
        self.eigenvalues.iter().map(|e| e.multiplicity).sum()
    }

    /// Eigenvalues with multiplicity expanded.
    pub fn flattened(&self) -> Vec<T> {
        self.eigenvalues.iter().flat_map(|e| std::iter::repeat_n(e.energy, e.multiplicity)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralOptions {
    /// Grid points for the whole range.
    pub grid: usize,
    /// Largest tracked eigenphase move per step before subdividing.
    pub max_phase_step: f64,
    /// Bracket width `tol (1 + |E|)` at which bisection stops.
    pub tol: f64,
    /// Insert extra samples around narrow near-trapped resonances.
    pub resolve_hidden: bool,
    /// Known number of states below the start of the range.
    pub floor_count: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { grid: 4000, max_phase_step: 0.3, tol: 1e-12, resolve_hidden: true, floor_count: 0 }
    }
}

/// Distance from thresholds used for window ends.
fn threshold_margin<T: Real>(v: T) -> T {
    T::tol(4e-9) * (T::one() + v.abs())
}

/// Inter-threshold windows covering `(lo, hi)` above the lowest potential.
pub fn windows<T: Real>(graph: &MetricGraph<T>, lo: T, hi: T) -> Vec<(T, T)> {
    let mut cuts: Vec<T> = graph.thresholds().into_iter().filter(|&v| v > lo && v < hi).collect();
    cuts.insert(0, lo);
    cuts.push(hi);
    let vmin = graph.min_potential();
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        if a < vmin {
            a = vmin;
        }
        if graph.thresholds().contains(&a) {
            a = a + threshold_margin(a);
        }
        if graph.thresholds().contains(&b) {
            b = b - threshold_margin(b);
        }
        if b > a {
            out.push((a, b));
        }
    }
    out
}

#[derive(Clone, Debug)]
struct Sample<T> {
    e: T,
    /// Sorted eigenphases of the reduced map in `(-pi, pi]`.
    phases: Vec<T>,
    /// Smallest singular value of `I - U_ee` (infinite if there is no evanescent block).
    gap: T,
}

struct Tracker<'a, T> {
    graph: &'a MetricGraph<T>,
    rule: PartitionRule<T>,
    opts: SpectralOptions,
    evaluations: std::sync::atomic::AtomicUsize,
}

#[derive(Clone, Copy, Debug, Default)]
struct Crossings {
    up: usize,
    down: usize,
}

impl Crossings {
    fn add(self, o: Self) -> Self {
        Self { up: self.up + o.up, down: self.down + o.down }
    }
    fn any(self) -> bool {
        self.up + self.down > 0
    }
    fn net(self) -> i64 {
        self.up as i64 - self.down as i64
    }
}

/// Matches two sorted phase lists by the cyclic shift minimising the largest
/// wrapped difference; returns the per-phase moves.
fn match_phases<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    let n = a.len();
    let mut best: Option<(T, usize)> = None;
    for s in 0..n {
        let m = (0..n).map(|j| wrap_angle(b[(j + s) % n] - a[j]).abs()).fold(T::zero(), T::max);
        if best.is_none_or(|(bm, _)| m < bm) {
            best = Some((m, s));
        }
    }
    let s = best.map_or(0, |b| b.1);
    (0..n).map(|j| wrap_angle(b[(j + s) % n] - a[j])).collect()
}

impl<T: Real> Tracker<'_, T> {
    fn sample(&self, e: T) -> Result<Sample<T>> {
        self.evaluations.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let bundle = assemble_with(self.graph, cr(e), self.rule)?;
        let red = bundle.reduce_unchecked();
        let mut phases: Vec<T> = eigenvalues(&red.u_red).into_iter().map(|z| z.arg()).collect();
        phases.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        let gap = red.trapped.map_or(T::infinity(), |t| t.min_singular);
        Ok(Sample { e, phases, gap })
    }

    fn gap_at(&self, e: T) -> Result<T> {
        self.evaluations.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let bundle = assemble_with(self.graph, cr(e), self.rule)?;
        Ok(bundle.trapped_state_check().map_or(T::infinity(), |t| t.min_singular))
    }

    fn min_width(&self, e: T) -> T {
        T::tol(self.opts.tol) * (T::one() + e.abs())
    }

    /// Signed zero crossings between two samples, subdividing fast steps.
    fn crossings(&self, a: &Sample<T>, b: &Sample<T>, depth: usize) -> Result<Crossings> {
        let deltas = match_phases(&a.phases, &b.phases);
        let big = deltas.iter().any(|d| d.abs() > T::lit(self.opts.max_phase_step));
        let width = b.e - a.e;
        if big && width > self.min_width(a.e) * T::lit(0.25) {
            if depth > 200 {
                return Err(Error::GridTooCoarse { lo: a.e.as_f64(), hi: b.e.as_f64() });
            }
            let m = self.sample(a.e + width / T::lit(2.0))?;
            return Ok(self.crossings(a, &m, depth + 1)?.add(self.crossings(&m, b, depth + 1)?));
        }
        let mut c = Crossings::default();
        for (&t, &d) in a.phases.iter().zip(&deltas) {
            if t < T::zero() && t + d >= T::zero() {
                c.up += 1;
            } else if t >= T::zero() && t + d < T::zero() {
                c.down += 1;
            }
        }
        Ok(c)
    }

    /// Brackets every crossing in `(a, b]` down to the refinement width.
    fn locate(&self, a: &Sample<T>, b: &Sample<T>, out: &mut Vec<(T, i64)>) -> Result<()> {
        let c = self.crossings(a, b, 0)?;
        if !c.any() {
            return Ok(());
        }
        if b.e - a.e <= self.min_width(b.e) {
            if c.net() != 0 {
                out.push(((a.e + b.e) / T::lit(2.0), c.net()));
            }
            return Ok(());
        }
        let m = self.sample(a.e + (b.e - a.e) / T::lit(2.0))?;
        self.locate(a, &m, out)?;
        self.locate(&m, b, out)
    }

    /// Extra sample energies around narrow minima of the `I - U_ee` gap.
    fn hidden_points(&self, samples: &[Sample<T>]) -> Result<Vec<T>> {
        let mut extra = Vec::new();
        for j in 1..samples.len().saturating_sub(1) {
            let (p, s, n) = (&samples[j - 1], &samples[j], &samples[j + 1]);
            if !(s.gap < T::lit(0.2) && s.gap <= p.gap && s.gap <= n.gap) {
                continue;
            }
            // Golden-section minimisation of the gap on the neighbouring cells.
            let (mut lo, mut hi) = (p.e, n.e);
            let g = T::lit(0.618_033_988_749_894_9);
            let mut x1 = hi - g * (hi - lo);
            let mut x2 = lo + g * (hi - lo);
            let mut f1 = self.gap_at(x1)?;
            let mut f2 = self.gap_at(x2)?;
            while hi - lo > self.min_width(hi) * T::lit(16.0) {
                if f1 < f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - g * (hi - lo);
                    f1 = self.gap_at(x1)?;
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + g * (hi - lo);
                    f2 = self.gap_at(x2)?;
                }
            }
            let centre = (lo + hi) / T::lit(2.0);
            let dmin = self.gap_at(centre)?;
            let h = (n.e - p.e) * T::lit(1e-3);
            let side = self.gap_at(centre + h)?.max(self.gap_at(centre - h)?);
            let slope = (side * side - dmin * dmin).max(T::zero()).sqrt() / h;
            let mut gamma = if slope > T::zero() { dmin / slope } else { h };
            gamma = gamma.max(self.min_width(centre));
            extra.push(centre);
            let mut s = T::lit(0.25);
            while gamma * s < n.e - p.e {
                for x in [centre - gamma * s, centre + gamma * s] {
                    if x > p.e && x < n.e {
                        extra.push(x);
                    }
                }
                s = s * T::lit(2.0);
            }
        }
        Ok(extra)
    }

    fn window(&self, lo: T, hi: T, points: usize, out: &mut Vec<(T, i64)>, trapped: &mut Vec<T>) -> Result<()> {
        let points = points.max(2);
        let step = (hi - lo) / T::lit((points - 1) as f64);
        let energies: Vec<T> = (0..points).map(|j| if j + 1 == points { hi } else { lo + step * T::lit(j as f64) }).collect();
        let mut samples = self.sample_all(&energies)?;
        if self.opts.resolve_hidden {
            let extra = self.hidden_points(&samples)?;
            if !extra.is_empty() {
                samples.extend(self.sample_all(&extra)?);
                samples.sort_by(|a, b| a.e.partial_cmp(&b.e).unwrap_or(std::cmp::Ordering::Equal));
                samples.dedup_by(|a, b| a.e == b.e);
            }
        }
        for s in &samples {
            if s.gap < T::tol(crate::quantum_map::TOL_TRAP) {
                trapped.push(s.e);
            }
        }
        for w in samples.windows(2) {
            self.locate(&w[0], &w[1], out)?;
        }
        Ok(())
    }

    fn sample_all(&self, energies: &[T]) -> Result<Vec<Sample<T>>> {
        energies.par_iter().map(|&e| self.sample(e)).collect()
    }
}

/// Eigenvalues in `(lo, hi)` above the lowest potential, with multiplicities.
pub fn find_eigenvalues<T: Real>(
    graph: &MetricGraph<T>,
    lo: T,
    hi: T,
    opts: &SpectralOptions,
) -> Result<SpectralResult<T>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidRange(format!("need finite E_lo < E_hi, got ({lo}, {hi})")));
    }
    if hi <= graph.min_potential() {
        return Err(Error::NoOscillatoryEdges { energy: hi.as_f64() });
    }
    let wins = windows(graph, lo, hi);
    let span: T = wins.iter().map(|&(a, b)| b - a).sum();
    let tracker = Tracker {
        graph,
        rule: PartitionRule::Natural,
        opts: *opts,
        evaluations: std::sync::atomic::AtomicUsize::new(0),
    };
    let mut roots = Vec::new();
    let mut trapped = Vec::new();
    for &(a, b) in &wins {
        let share = ((b - a) / span * T::lit(opts.grid as f64)).ceil().to_usize().unwrap_or(2).max(16);
        tracker.window(a, b, share, &mut roots, &mut trapped)?;
    }
    let mut eigenvalues = Vec::new();
    for (e, net) in roots {
        if net <= 0 {
            continue;
        }
        let residual = match assemble(graph, e) {
            Ok(b) => b.reduce_unchecked().u_red.one_minus().log_det().abs(),
            Err(_) => T::nan(),
        };
        eigenvalues.push(Eigenvalue { energy: e, multiplicity: net as usize, residual });
    }
    eigenvalues.sort_by(|a, b| a.energy.partial_cmp(&b.energy).unwrap_or(std::cmp::Ordering::Equal));
    let thresholds = graph.thresholds().into_iter().filter(|&v| v > lo && v < hi).collect();
    Ok(SpectralResult {
        eigenvalues,
        range: (lo, hi),
        evaluations: tracker.evaluations.into_inner(),
        trapped,
        thresholds,
        floor_count: opts.floor_count,
    })
}

/// `N(E)`: eigenvalues in `(floor, E)` plus the floor offset.
pub fn counting_exact<T: Real>(graph: &MetricGraph<T>, floor: T, e: T, opts: &SpectralOptions) -> Result<usize> {
    if e <= floor {
        return Ok(opts.floor_count);
    }
    Ok(find_eigenvalues(graph, floor, e, opts)?.count_below(e))
}

/// Smallest singular value of `I - U_ee` at `e` with the natural partition.
pub fn trapped_gap<T: Real>(graph: &MetricGraph<T>, e: T) -> Result<T> {
    let b = assemble(graph, e)?;
    Ok(b.trapped_state_check().map_or(T::infinity(), |t| t.min_singular))
}

/// Smallest singular value of `I - U_ee` without a trapped-state error.
pub fn min_gap<T: Real>(bundle: &QuantumMapBundle<T>) -> T {
    if bundle.partition.ev.is_empty() {
        return T::infinity();
    }
    min_singular_value(&bundle.u_ee().one_minus())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, MatchingKind};

    fn dirichlet_edge(l: f64) -> MetricGraph<f64> {
        GraphBuilder::new()
            .standard_vertex("a", MatchingKind::Dirichlet)
            .standard_vertex("b", MatchingKind::Dirichlet)
            .edge("e", "a", "b", l, 0.0)
            .build()
            .unwrap()
    }

    #[test]
    fn dirichlet_interval_squares() {
        let g = dirichlet_edge(std::f64::consts::PI);
        let r = find_eigenvalues(&g, 0.5, 20.0, &SpectralOptions::default()).unwrap();
        let e: Vec<f64> = r.eigenvalues.iter().map(|e| e.energy).collect();
        assert_eq!(e.len(), 4, "{e:?}");
        for (x, n) in e.iter().zip(1..) {
            assert!((x - (n * n) as f64).abs() < 1e-10, "{x}");
        }
        assert!(r.eigenvalues.iter().all(|e| e.multiplicity == 1));
        assert_eq!(counting_exact(&g, 0.5, 10.0, &SpectralOptions::default()).unwrap(), 3);
    }

    #[test]
    fn circle_has_double_eigenvalues() {
        // A loop with a degree-two continuity vertex is a circle of length L.
        let l = 2.0;
        let g = GraphBuilder::new()
            .standard_vertex("v", MatchingKind::ContinuityStep)
            .edge("ring", "v", "v", l, 0.0)
            .build()
            .unwrap();
        let r = find_eigenvalues(&g, 0.5, 60.0, &SpectralOptions::default()).unwrap();
        let expected: Vec<f64> = (1..).map(|n| (2.0 * std::f64::consts::PI * n as f64 / l).powi(2)).take_while(|&e| e < 60.0).collect();
        assert_eq!(r.eigenvalues.len(), expected.len());
        for (ev, x) in r.eigenvalues.iter().zip(&expected) {
            assert_eq!(ev.multiplicity, 2);
            assert!((ev.energy - x).abs() < 1e-9 * x);
        }
    }

    #[test]
    fn phase_matching_handles_wraparound() {
        let a = [-3.1, 0.5];
        let b = [0.52, 3.1];
        let d = match_phases(&a, &b);
        assert!((d[0] - (3.1 - 2.0 * std::f64::consts::PI + 3.1)).abs() < 1e-12);
        assert!((d[1] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn windows_avoid_thresholds() {
        let g = GraphBuilder::new()
            .standard_vertex("a", MatchingKind::Dirichlet)
            .standard_vertex("s", MatchingKind::ContinuityStep)
            .standard_vertex("b", MatchingKind::Dirichlet)
            .edge("1", "a", "s", 1.0, 0.0)
            .edge("2", "s", "b", 1.0, 10.0)
            .build()
            .unwrap();
        let w = windows(&g, 0.0, 20.0);
        assert_eq!(w.len(), 2);
        assert!(w[0].0 > 0.0 && w[0].1 < 10.0 && w[1].0 > 10.0 && w[1].1 == 20.0);
    }
}
