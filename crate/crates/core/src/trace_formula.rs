//! Mean and oscillatory parts of the counting function, their calibration along
//! energy sweeps, periodic orbits and the evanescent correction series.
//!
//! Branches: every phase that is tracked along a sweep starts from its value in
//! `[-pi, pi)` at the first point of its validity window and is continued by
//! adaptive unwrapping. `Im log det(I - M)` for maps with small spectrum is taken
//! on the series branch `sum_j Arg(1 - mu_j)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::MetricGraph;
use crate::linalg::{arg_det_one_minus_series, eigenvalues, CMatrix};
use crate::quantum_map::{assemble_with, PartitionRule, QuantumMapBundle, TOL_TRAP};
use crate::scalar::{arg_lower, c, cr, wrap_angle, Real, C};
use crate::scattering::check_threshold;
use crate::spectra::{find_eigenvalues, SpectralOptions, SpectralResult};

/// Split of the counting function between mean and oscillatory parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode<T> {
    /// Partition recomputed at every energy.
    Reduced,
    /// Full map, no evanescent block; exact above the highest potential.
    AboveThreshold,
    /// Edges with `V_e < E0` are oscillatory at every energy.
    FixedPartition(T),
}

impl<T: Real> Mode<T> {
    pub fn rule(&self) -> PartitionRule<T> {
        match *self {
            Mode::Reduced => PartitionRule::Natural,
            Mode::AboveThreshold => PartitionRule::Full,
            Mode::FixedPartition(e0) => PartitionRule::FixedBelow(e0),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Mode::Reduced => "reduced".into(),
            Mode::AboveThreshold => "above_threshold".into(),
            Mode::FixedPartition(e0) => format!("fixed_partition({e0})"),
        }
    }

    /// Lowest energy from which the decomposition reproduces the staircase.
    pub fn validity_floor(&self, graph: &MetricGraph<T>) -> T {
        match *self {
            Mode::Reduced => graph.min_potential(),
            Mode::AboveThreshold => graph.max_potential(),
            Mode::FixedPartition(e0) => graph
                .edges()
                .iter()
                .map(|e| e.potential)
                .filter(|&v| v < e0)
                .fold(graph.min_potential(), T::max),
        }
    }
}

/// `eps(E) = rel (1 + |E|)`.
pub fn default_epsilon<T: Real>(e: T, rel: f64) -> T {
    T::lit(rel) * (T::one() + e.abs())
}

/// `sum_e Re K_e(z) L_e / pi`.
pub fn weyl_term<T: Real>(graph: &MetricGraph<T>, bundle: &QuantumMapBundle<T>) -> T {
    graph.edges().iter().zip(&bundle.k.k).map(|(e, k)| k.re * e.length).sum::<T>() / T::PI()
}

/// Pointwise terms of the decomposition at `z = E + i eps`, before unwrapping.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTerms<T> {
    pub energy: T,
    pub weyl: T,
    /// `arg det sigma_v` per vertex, principal.
    pub vertex_args: Vec<T>,
    /// `arg det P`: `0` or `pi`.
    pub p_arg: T,
    /// `arg det(I - (U^{-1})_ee)`, principal.
    pub ev_inv_arg: T,
    /// `sum_j Arg(1 - mu_j)` over eigenvalues of `U_ee`.
    pub ev_fwd_arg: T,
    /// `sum_j Arg(1 - lambda_j)` over eigenvalues of `U_red`.
    pub osc_arg: T,
    /// `arg det U_red`, principal.
    pub red_arg: T,
    /// Smallest singular value of `I - U_ee` at the real energy.
    pub gap: T,
    pub ev_mask: Vec<bool>,
}

/// Evaluates the pointwise terms at `E + i eps`.
pub fn raw_terms<T: Real>(graph: &MetricGraph<T>, e: T, eps: T, rule: PartitionRule<T>) -> Result<RawTerms<T>> {
    let bundle = assemble_with(graph, c(e, eps), rule)?;
    let red = bundle.reduce_unchecked();
    let gap = red.trapped.map_or(T::infinity(), |t| t.min_singular);
    let vertex_args = bundle.vertex.iter().map(|v| arg_lower(v.sigma.det())).collect();
    let p_arg = if graph.n_edges() % 2 == 1 { T::PI() } else { T::zero() };
    let ev_inv_arg = arg_lower(bundle.log_det_one_minus_uinv_ee().value_or_phase());
    let ev_fwd_arg = if bundle.partition.ev.is_empty() { T::zero() } else { arg_det_one_minus_series(&bundle.u_ee()) };
    let osc_arg = arg_det_one_minus_series(&red.u_red);
    let red_arg = arg_lower(red.u_red.log_det().value_or_phase());
    Ok(RawTerms {
        energy: e,
        weyl: weyl_term(graph, &bundle),
        vertex_args,
        p_arg,
        ev_inv_arg,
        ev_fwd_arg,
        osc_arg,
        red_arg,
        gap,
        ev_mask: bundle.partition.edge_mask.iter().map(|&o| !o).collect(),
    })
}

trait PhaseOnly<T> {
    fn value_or_phase(&self) -> C<T>;
}

impl<T: Real> PhaseOnly<T> for crate::linalg::LogDet<T> {
    /// Unit number carrying the phase; avoids overflow of huge determinants.
    fn value_or_phase(&self) -> C<T> {
        C::from_polar(T::one(), self.arg)
    }
}

/// Mean part at a single energy with every phase on its principal branch.
pub fn mean_counting<T: Real>(graph: &MetricGraph<T>, bundle: &QuantumMapBundle<T>, c0: T) -> T {
    let two_pi = T::PI() + T::PI();
    let det_s: T = bundle.vertex.iter().map(|v| arg_lower(v.sigma.det())).sum::<T>()
        + if graph.n_edges() % 2 == 1 { T::PI() } else { T::zero() };
    let ev_inv = arg_lower(bundle.log_det_one_minus_uinv_ee().value_or_phase());
    let ev_fwd = if bundle.partition.ev.is_empty() { T::zero() } else { arg_det_one_minus_series(&bundle.u_ee()) };
    weyl_term(graph, bundle) + (det_s + ev_inv - ev_fwd) / two_pi + c0
}

/// `-(1/pi) Im log det(I - U_red)` on the series branch.
pub fn oscillatory_counting<T: Real>(bundle: &QuantumMapBundle<T>) -> T {
    -arg_det_one_minus_series(&bundle.reduce_unchecked().u_red) / T::PI()
}

/// Per-energy output of a counting sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct CountingReport<T> {
    pub energy: T,
    pub n_mean: T,
    pub n_osc: T,
    pub n_total: T,
    pub n_exact: usize,
    pub c: T,
    pub weyl: T,
    /// `(1/2pi) arg det S`, unwrapped.
    pub det_s: T,
    /// `(1/2pi) arg det(I - (U^{-1})_ee)`, unwrapped within the window.
    pub ev_inv: T,
    /// `(1/2pi) sum Arg(1 - mu_j)` for `U_ee`.
    pub ev_fwd: T,
    /// Accumulated integer branch shift.
    pub branch: T,
    /// Distance of `N_mean - (1/2pi) arg det U_red` from its window constant.
    pub dual_residual: T,
    pub trapped: bool,
}

/// Result of a counting sweep.
#[derive(Clone, Debug)]
pub struct CountingSweep<T> {
    pub mode: Mode<T>,
    pub reports: Vec<CountingReport<T>>,
    pub c: T,
    pub calibration_energies: Vec<T>,
    pub calibration_estimates: Vec<T>,
    /// `(threshold, shift)` for every window change.
    pub branch_shifts: Vec<(T, T)>,
    pub spectrum: SpectralResult<T>,
    pub epsilon_rel: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceOptions {
    /// `eps = epsilon_rel (1 + |E|)`.
    pub epsilon_rel: f64,
    /// Largest phase step accepted by the unwrapper.
    pub max_unwrap_step: f64,
    /// Fixed constant instead of calibration.
    pub constant: Option<f64>,
    pub spectral: SpectralOptions,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { epsilon_rel: 1e-8, max_unwrap_step: 0.5, constant: None, spectral: SpectralOptions::default() }
    }
}

/// Unwrapped state carried along a sweep.
#[derive(Clone, Debug)]
struct Tracked<T> {
    raw: RawTerms<T>,
    vertex: Vec<T>,
    ev_inv: T,
    red: T,
    branch: T,
    /// `N_mean - dual` at the window start.
    dual_offset: T,
}

impl<T: Real> Tracked<T> {
    fn start(raw: RawTerms<T>, branch: T) -> Self {
        let mut t = Self {
            vertex: raw.vertex_args.clone(),
            ev_inv: raw.ev_inv_arg,
            red: raw.red_arg,
            raw,
            branch,
            dual_offset: T::zero(),
        };
        t.dual_offset = t.mean() - t.dual();
        t
    }

    fn det_s(&self) -> T {
        (self.vertex.iter().copied().sum::<T>() + self.raw.p_arg) / (T::PI() + T::PI())
    }

    fn mean(&self) -> T {
        let two_pi = T::PI() + T::PI();
        self.raw.weyl + self.det_s() + (self.ev_inv - self.raw.ev_fwd_arg) / two_pi + self.branch
    }

    fn dual(&self) -> T {
        self.red / (T::PI() + T::PI())
    }

    fn osc(&self) -> T {
        -self.raw.osc_arg / T::PI()
    }

    fn total(&self) -> T {
        self.mean() + self.osc()
    }

    /// Continues every tracked phase to `next`; `None` if a step is too large.
    fn advance(&self, next: &RawTerms<T>, max_step: T) -> Option<Self> {
        let mut worst = T::zero();
        let mut step = |old: T, new_principal: T| {
            let d = wrap_angle(new_principal - old);
            worst = worst.max(d.abs());
            old + d
        };
        let vertex: Vec<T> = self.vertex.iter().zip(&next.vertex_args).map(|(&o, &n)| step(o, n)).collect();
        let ev_inv = step(self.ev_inv, next.ev_inv_arg);
        let red = step(self.red, next.red_arg);
        if worst > max_step {
            return None;
        }
        Some(Self { raw: next.clone(), vertex, ev_inv, red, branch: self.branch, dual_offset: self.dual_offset })
    }

    fn dual_residual(&self) -> T {
        let d = self.mean() - self.dual() - self.dual_offset;
        (d - d.round()).abs()
    }
}

struct Sweeper<'a, T> {
    graph: &'a MetricGraph<T>,
    mode: Mode<T>,
    opts: TraceOptions,
}

impl<T: Real> Sweeper<'_, T> {
    fn eps(&self, e: T) -> T {
        default_epsilon(e, self.opts.epsilon_rel)
    }

    fn raw(&self, e: T) -> Result<RawTerms<T>> {
        raw_terms(self.graph, e, self.eps(e), self.mode.rule())
    }

    fn min_width(&self, e: T) -> T {
        T::tol(1e-13) * (T::one() + e.abs())
    }

    /// Moves `state` to `target`, bisecting until every phase step is small.
    fn walk(&self, state: Tracked<T>, target: RawTerms<T>, depth: usize) -> Result<Tracked<T>> {
        let max_step = T::lit(self.opts.max_unwrap_step);
        if let Some(next) = state.advance(&target, max_step) {
            return Ok(next);
        }
        let (a, b) = (state.raw.energy, target.energy);
        if depth > 80 || (b - a).abs() < self.min_width(b) {
            // Accept the jump on the principal branch.
            return Ok(state.advance(&target, T::infinity()).expect("unbounded step"));
        }
        let m = a + (b - a) / T::lit(2.0);
        if check_threshold(self.graph, m).is_err() {
            return Ok(state.advance(&target, T::infinity()).expect("unbounded step"));
        }
        let mid = self.raw(m)?;
        let half = self.walk(state, mid, depth + 1)?;
        self.walk(half, target, depth + 1)
    }
}

fn nudge<T: Real>(graph: &MetricGraph<T>, e: T) -> T {
    let mut x = e;
    for _ in 0..8 {
        if check_threshold(graph, x).is_ok() {
            return x;
        }
        x = x + T::tol(4e-9) * (T::one() + x.abs());
    }
    x
}

/// `n` uniform energies on `[max(lo, V_min+), hi]`, each moved off thresholds.
pub fn sweep_grid<T: Real>(graph: &MetricGraph<T>, lo: T, hi: T, n: usize) -> Vec<T> {
    let vmin = graph.min_potential();
    let floor = nudge(graph, lo.max(vmin + T::tol(4e-9) * (T::one() + vmin.abs())));
    let step = (hi - floor) / T::lit((n.max(2) - 1) as f64);
    (0..n).map(|j| nudge(graph, if j + 1 == n { hi } else { floor + step * T::lit(j as f64) })).collect()
}

/// Counting-function decomposition on `grid` points spanning `[lo, hi]`.
pub fn count_sweep<T: Real>(
    graph: &MetricGraph<T>,
    lo: T,
    hi: T,
    grid: usize,
    mode: Mode<T>,
    opts: &TraceOptions,
) -> Result<CountingSweep<T>> {
    if !(lo < hi) || grid < 2 {
        return Err(Error::InvalidRange(format!("need E_lo < E_hi and at least two points, got ({lo}, {hi}), {grid}")));
    }
    if hi <= graph.min_potential() {
        return Err(Error::NoOscillatoryEdges { energy: hi.as_f64() });
    }
    let energies = sweep_grid(graph, lo, hi, grid);
    sweep_at(graph, &energies, mode, opts)
}

/// Counting-function decomposition at increasing energies above the lowest potential.
pub fn sweep_at<T: Real>(
    graph: &MetricGraph<T>,
    energies: &[T],
    mode: Mode<T>,
    opts: &TraceOptions,
) -> Result<CountingSweep<T>> {
    let sweeper = Sweeper { graph, mode, opts: *opts };
    let first = *energies.first().ok_or_else(|| Error::InvalidRange("empty energy list".into()))?;
    let last = *energies.last().unwrap();
    if energies.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidRange("energies must increase".into()));
    }
    let vmin = graph.min_potential();
    if first <= vmin {
        return Err(Error::NoOscillatoryEdges { energy: first.as_f64() });
    }
    let raws: Vec<RawTerms<T>> = energies.par_iter().map(|&e| sweeper.raw(e)).collect::<Result<_>>()?;

    let thresholds = graph.thresholds();
    let mut state = Tracked::start(raws[0].clone(), T::zero());
    let mut tracked = vec![state.clone()];
    let mut shifts = Vec::new();
    for raw in raws.into_iter().skip(1) {
        let (a, b) = (state.raw.energy, raw.energy);
        for &v in thresholds.iter().filter(|&&v| v > a && v < b) {
            let margin = T::tol(4e-9) * (T::one() + v.abs());
            let (below, above) = (v - margin, v + margin);
            if below > state.raw.energy {
                state = sweeper.walk(state, sweeper.raw(below)?, 0)?;
            }
            // Phases may whirl next to a threshold, so every window restarts there.
            let after = sweeper.raw(above)?;
            {
                let before_total = state.total();
                let mut restarted = Tracked::start(after, state.branch);
                restarted.vertex = state.advance(&restarted.raw, T::infinity()).expect("unbounded").vertex;
                let shift = (before_total - restarted.total()).round();
                restarted.branch = restarted.branch + shift;
                restarted.dual_offset = restarted.mean() - restarted.dual();
                shifts.push((v, shift));
                state = restarted;
            }
        }
        state = sweeper.walk(state, raw, 0)?;
        tracked.push(state.clone());
    }

    let spectrum = find_eigenvalues(graph, first.min(last), last, &opts.spectral)?;
    let mut reports: Vec<CountingReport<T>> = tracked
        .iter()
        .map(|t| {
            let two_pi = T::PI() + T::PI();
            CountingReport {
                energy: t.raw.energy,
                n_mean: t.mean(),
                n_osc: t.osc(),
                n_total: t.total(),
                n_exact: spectrum.count_below(t.raw.energy),
                c: T::zero(),
                weyl: t.raw.weyl,
                det_s: t.det_s(),
                ev_inv: t.ev_inv / two_pi,
                ev_fwd: t.raw.ev_fwd_arg / two_pi,
                branch: t.branch,
                dual_residual: t.dual_residual(),
                trapped: t.raw.gap < T::tol(TOL_TRAP),
            }
        })
        .collect();

    let (c0, refs, estimates) = match opts.constant {
        Some(c0) => (T::lit(c0), Vec::new(), Vec::new()),
        None => calibrate(graph, mode, &reports, &spectrum)?,
    };
    for r in reports.iter_mut() {
        r.c = c0;
        r.n_mean = r.n_mean + c0;
        r.n_total = r.n_mean + r.n_osc;
    }
    Ok(CountingSweep {
        mode,
        reports,
        c: c0,
        calibration_energies: refs,
        calibration_estimates: estimates,
        branch_shifts: shifts,
        spectrum,
        epsilon_rel: opts.epsilon_rel,
    })
}

/// `c = N_exact - (N_mean(c = 0) + N_osc)` at three reference energies inside
/// the validity window of the mode, away from eigenvalues.
fn calibrate<T: Real>(
    graph: &MetricGraph<T>,
    mode: Mode<T>,
    reports: &[CountingReport<T>],
    spectrum: &SpectralResult<T>,
) -> Result<(T, Vec<T>, Vec<T>)> {
    let floor = mode.validity_floor(graph);
    let eigen = spectrum.flattened();
    let far_from_eigen = |e: T, gap: T| eigen.iter().all(|&x| (x - e).abs() > gap);
    let candidates: Vec<&CountingReport<T>> = reports
        .iter()
        .enumerate()
        .filter(|(j, r)| {
            let h = if *j + 1 < reports.len() {
                reports[j + 1].energy - r.energy
            } else if *j > 0 {
                r.energy - reports[j - 1].energy
            } else {
                T::one()
            };
            r.energy > floor && !r.trapped && far_from_eigen(r.energy, h * T::lit(0.25))
        })
        .map(|(_, r)| r)
        .collect();
    if candidates.is_empty() {
        return Ok((T::zero(), Vec::new(), Vec::new()));
    }
    let n = candidates.len();
    let mut picks: Vec<usize> = [n / 6, n / 2, (5 * n) / 6].iter().map(|&i| i.min(n - 1)).collect();
    picks.dedup();
    let refs: Vec<T> = picks.iter().map(|&i| candidates[i].energy).collect();
    let estimates: Vec<T> = picks
        .iter()
        .map(|&i| {
            let r = candidates[i];
            T::lit(r.n_exact as f64) - r.n_total
        })
        .collect();
    let lo = estimates.iter().copied().fold(T::infinity(), T::min);
    let hi = estimates.iter().copied().fold(T::neg_infinity(), T::max);
    if hi - lo > T::lit(0.1) {
        return Err(Error::InconsistentCalibration { estimates: estimates.iter().map(|x| x.as_f64()).collect() });
    }
    let c0 = estimates.iter().copied().sum::<T>() / T::lit(estimates.len() as f64);
    Ok((c0, refs, estimates))
}

/// Calibration constant from reference energies, computed on a sweep that
/// starts at `floor` and passes through every reference.
pub fn calibrate_constant<T: Real>(
    graph: &MetricGraph<T>,
    floor: T,
    references: &[T],
    mode: Mode<T>,
    opts: &TraceOptions,
) -> Result<T> {
    let mut energies: Vec<T> = references.to_vec();
    energies.push(nudge(graph, floor));
    energies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    energies.dedup();
    // Dense enough for the unwrapper to follow every phase.
    let top = *energies.last().unwrap();
    let mut grid: Vec<T> = (0..2000).map(|j| nudge(graph, energies[0] + (top - energies[0]) * T::lit(j as f64 / 1999.0))).collect();
    grid.extend(energies.iter().copied());
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let sweep = sweep_at(graph, &grid, mode, &TraceOptions { constant: Some(0.0), ..*opts })?;
    let estimates: Vec<T> = references
        .iter()
        .map(|&e| {
            let r = sweep.reports.iter().find(|r| r.energy == e).expect("reference on grid");
            T::lit(r.n_exact as f64) - r.n_total
        })
        .collect();
    let lo = estimates.iter().copied().fold(T::infinity(), T::min);
    let hi = estimates.iter().copied().fold(T::neg_infinity(), T::max);
    if hi - lo > T::lit(0.1) {
        return Err(Error::InconsistentCalibration { estimates: estimates.iter().map(|x| x.as_f64()).collect() });
    }
    Ok(estimates.iter().copied().sum::<T>() / T::lit(estimates.len().max(1) as f64))
}

/// Orbit type at a given partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrbitClass {
    PureOscillatory,
    PureEvanescent,
    Mixed,
}

/// Primitive periodic orbit: a cyclic sequence of directed edges in canonical
/// (lexicographically smallest) rotation.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OrbitSkeleton {
    pub sequence: Vec<usize>,
}

impl OrbitSkeleton {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }
}

/// Orbit evaluated at one energy.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicOrbit<T> {
    pub sequence: Vec<usize>,
    pub n_p: usize,
    pub amplitude: C<T>,
    /// `sum_j K_{e_j} L_{e_j}`.
    pub phase: C<T>,
    pub class: OrbitClass,
}

impl<T: Real> PeriodicOrbit<T> {
    /// `A_p exp(i W_p)`.
    pub fn weight(&self) -> C<T> {
        self.amplitude * (c(T::zero(), T::one()) * self.phase).exp()
    }
}

/// Whether `w` is strictly smaller than all of its proper rotations.
pub fn is_lyndon(w: &[usize]) -> bool {
    let n = w.len();
    (1..n).all(|s| {
        for j in 0..n {
            let (a, b) = (w[j], w[(j + s) % n]);
            if a != b {
                return a < b;
            }
        }
        false
    })
}

/// All primitive cycles of length `<= n_max` in a transition graph, one per
/// rotation class (`adj[a]` lists the letters allowed after `a`).
pub fn enumerate_cycles(adj: &[Vec<usize>], n_max: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    let m = adj.len();
    let mut allowed = vec![vec![false; m]; m];
    for (a, next) in adj.iter().enumerate() {
        for &b in next {
            allowed[a][b] = true;
        }
    }
    let mut out = Vec::new();
    let mut word = Vec::with_capacity(n_max);
    fn dfs(
        word: &mut Vec<usize>,
        adj: &[Vec<usize>],
        allowed: &[Vec<bool>],
        n_max: usize,
        cap: usize,
        out: &mut Vec<Vec<usize>>,
    ) -> Result<()> {
        let first = word[0];
        let last = *word.last().unwrap();
        if allowed[last][first] && is_lyndon(word) {
            if out.len() >= cap {
                return Err(Error::OrbitBudgetExceeded { cap });
            }
            out.push(word.clone());
        }
        if word.len() == n_max {
            return Ok(());
        }
        for &b in &adj[last] {
            // A Lyndon word starts with its smallest letter.
            if b < first {
                continue;
            }
            word.push(b);
            dfs(word, adj, allowed, n_max, cap, out)?;
            word.pop();
        }
        Ok(())
    }
    for s in 0..m {
        word.clear();
        word.push(s);
        dfs(&mut word, adj, &allowed, n_max, cap, &mut out)?;
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

/// Default cap on orbit records.
pub const ORBIT_CAP: usize = 1_000_000;

/// Directed-edge transitions `d -> d'` with a structurally nonzero map entry,
/// probed at generic complex wavenumbers.
pub fn transition_structure<T: Real>(graph: &MetricGraph<T>) -> Vec<Vec<usize>> {
    let n = graph.n_directed();
    let mut adj = vec![Vec::new(); n];
    for v in graph.vertices() {
        let k: Vec<C<T>> = v
            .star
            .iter()
            .map(|s| c(T::lit(1.137 + 0.211 * s.edge as f64), T::lit(0.389 + 0.07 * s.edge as f64)))
            .collect();
        let sigma = crate::scattering::vertex_scattering(&v.matching, &k, &v.id).map(|s| s.sigma);
        let scale = sigma.as_ref().map_or(T::one(), |s| s.max_abs());
        for (j, sj) in v.star.iter().enumerate() {
            for (i, si) in v.star.iter().enumerate() {
                let nonzero = match &sigma {
                    Ok(s) => s[(i, j)].norm() > T::tol(1e-13) * scale,
                    Err(_) => true,
                };
                if nonzero {
                    adj[sj.incoming].push(si.outgoing);
                }
            }
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Primitive periodic orbits of length `<= n_max` on directed edges.
pub fn enumerate_primitive_orbits<T: Real>(graph: &MetricGraph<T>, n_max: usize, cap: usize) -> Result<Vec<OrbitSkeleton>> {
    if n_max == 0 {
        return Err(Error::InvalidRange("n_max must be at least 1".into()));
    }
    let adj = transition_structure(graph);
    Ok(enumerate_cycles(&adj, n_max, cap)?.into_iter().map(|sequence| OrbitSkeleton { sequence }).collect())
}

/// Orbits of a star graph in the edge picture: words over the edges, read at
/// the centre. Every edge may follow every edge unless the centre forbids it.
pub fn enumerate_star_orbits<T: Real>(graph: &MetricGraph<T>, n_max: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    let center = graph.star_center().ok_or(Error::NotAStar)?;
    let v = &graph.vertices()[center];
    let k: Vec<C<T>> = v.star.iter().map(|s| c(T::lit(1.137 + 0.211 * s.edge as f64), T::lit(0.389))).collect();
    let sigma = crate::scattering::vertex_scattering(&v.matching, &k, &v.id)?.sigma;
    let scale = sigma.max_abs();
    let d = v.star.len();
    let adj: Vec<Vec<usize>> =
        (0..d).map(|j| (0..d).filter(|&i| sigma[(i, j)].norm() > T::tol(1e-13) * scale).collect()).collect();
    enumerate_cycles(&adj, n_max, cap)
}

/// Amplitude, phase and class of an orbit at the bundle's energy.
pub fn evaluate_orbit<T: Real>(graph: &MetricGraph<T>, bundle: &QuantumMapBundle<T>, orbit: &OrbitSkeleton) -> PeriodicOrbit<T> {
    let seq = &orbit.sequence;
    let n = seq.len();
    let mut amplitude = cr(T::one());
    let mut phase = cr(T::zero());
    let (mut any_osc, mut any_ev) = (false, false);
    for j in 0..n {
        let (d, dn) = (seq[j], seq[(j + 1) % n]);
        // U[dn, d] = T_dn sigma; the transport factor is collected in the phase.
        amplitude = amplitude * bundle.u[(dn, d)] / bundle.t[dn];
        let e = d / 2;
        phase = phase + bundle.k.k[e] * graph.edges()[e].length;
        if bundle.partition.edge_mask[e] {
            any_osc = true;
        } else {
            any_ev = true;
        }
    }
    let class = match (any_osc, any_ev) {
        (true, false) => OrbitClass::PureOscillatory,
        (false, true) => OrbitClass::PureEvanescent,
        _ => OrbitClass::Mixed,
    };
    PeriodicOrbit { sequence: seq.clone(), n_p: n, amplitude, phase, class }
}

/// Per-length comparison of the orbit expansion with matrix traces.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitTraceRow<T> {
    pub n: usize,
    pub orbit_sum: C<T>,
    pub trace: C<T>,
    pub residual: T,
    pub primed_sum: C<T>,
    /// `tr U^n - tr U_ee^n`.
    pub primed_trace: C<T>,
    pub primed_residual: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitSum<T> {
    pub orbits: Vec<PeriodicOrbit<T>>,
    pub rows: Vec<OrbitTraceRow<T>>,
    /// `(1/pi) Im sum'_p sum_{r <= r_max} (A_p e^{iW_p})^r / r` over orbits with `r n_p <= n_max`.
    pub n_osc_truncated: T,
}

/// Orbit expansion of `tr U^n` for `n <= n_max` at `E + i eps`.
pub fn orbit_sum<T: Real>(
    graph: &MetricGraph<T>,
    e: T,
    eps: T,
    rule: PartitionRule<T>,
    n_max: usize,
    r_max: usize,
    cap: usize,
) -> Result<OrbitSum<T>> {
    let skeletons = enumerate_primitive_orbits(graph, n_max, cap)?;
    let bundle = assemble_with(graph, c(e, eps), rule)?;
    let orbits: Vec<PeriodicOrbit<T>> = skeletons.iter().map(|o| evaluate_orbit(graph, &bundle, o)).collect();
    let u_ee = bundle.u_ee();
    let mut rows = Vec::with_capacity(n_max);
    let mut power = CMatrix::identity(bundle.dim());
    let mut power_ee = CMatrix::identity(u_ee.rows());
    for n in 1..=n_max {
        power = &power * &bundle.u;
        power_ee = &power_ee * &u_ee;
        let mut total = cr(T::zero());
        let mut primed = cr(T::zero());
        for o in orbits.iter().filter(|o| n % o.n_p == 0) {
            let term = o.weight().powu((n / o.n_p) as u32) * T::lit(o.n_p as f64);
            total = total + term;
            if o.class != OrbitClass::PureEvanescent {
                primed = primed + term;
            }
        }
        let trace = power.trace();
        let trace_ee = if u_ee.rows() == 0 { cr(T::zero()) } else { power_ee.trace() };
        let primed_trace = trace - trace_ee;
        rows.push(OrbitTraceRow {
            n,
            orbit_sum: total,
            trace,
            residual: (total - trace).norm(),
            primed_sum: primed,
            primed_trace,
            primed_residual: (primed - primed_trace).norm(),
        });
    }
    let mut acc = cr(T::zero());
    for o in orbits.iter().filter(|o| o.class != OrbitClass::PureEvanescent) {
        let w = o.weight();
        let mut wr = cr(T::one());
        for r in 1..=r_max {
            if r * o.n_p > n_max {
                break;
            }
            wr = wr * w;
            acc = acc + wr / T::lit(r as f64);
        }
    }
    Ok(OrbitSum { orbits, rows, n_osc_truncated: acc.im / T::PI() })
}

/// Evanescent correction: leading term, partial sums and the exact value of
/// `(1/2pi)[Im log det(I - (U^{-1})_ee) - Im log det(I - U_ee)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvanescentSeries<T> {
    /// `(1/2pi) Im log det(-(U^{-1})_ee)`.
    pub leading: T,
    /// Running totals `leading + sum_{r <= R}` for `R = 1..=r_max`.
    pub partial_sums: Vec<T>,
    pub exact: T,
    /// Distance of the last partial sum from `exact`, modulo one.
    pub residual: T,
}

fn mod_one_distance<T: Real>(x: T) -> T {
    (x - x.round()).abs()
}

/// Expansion of the two evanescent log-determinants in powers of `U_ee` and
/// `((U^{-1})_ee)^{-1}`.
pub fn evanescent_correction_series<T: Real>(bundle: &QuantumMapBundle<T>, r_max: usize) -> Result<EvanescentSeries<T>> {
    let two_pi = T::PI() + T::PI();
    let ev = &bundle.partition.ev;
    if ev.is_empty() {
        return Ok(EvanescentSeries {
            leading: T::zero(),
            partial_sums: Vec::new(),
            exact: T::zero(),
            residual: T::zero(),
        });
    }
    let inv = bundle.u_inverse().ok_or(Error::SeriesNotConverged { residual: f64::INFINITY })?;
    let x = inv.select(ev, ev);
    let minus_x = x.scale(cr(-T::one()));
    let leading = minus_x.log_det().arg / two_pi;
    let x_inv = x.inverse().ok_or(Error::SeriesNotConverged { residual: f64::INFINITY })?;
    let u_ee = bundle.u_ee();
    let mut partial_sums = Vec::with_capacity(r_max);
    let mut acc = leading;
    let (mut pu, mut px) = (CMatrix::identity(ev.len()), CMatrix::identity(ev.len()));
    for r in 1..=r_max {
        pu = &pu * &u_ee;
        px = &px * &x_inv;
        acc = acc + (pu.trace() - px.trace()).im / (two_pi * T::lit(r as f64));
        partial_sums.push(acc);
    }
    let exact = (x.one_minus().log_det().arg - u_ee.one_minus().log_det().arg) / two_pi;
    let residual = mod_one_distance(acc - exact);
    Ok(EvanescentSeries { leading, partial_sums, exact, residual })
}

/// As [`evanescent_correction_series`], failing when the last partial sum misses
/// the exact value by more than `1e-8`.
pub fn evanescent_correction_checked<T: Real>(bundle: &QuantumMapBundle<T>, r_max: usize) -> Result<EvanescentSeries<T>> {
    let s = evanescent_correction_series(bundle, r_max)?;
    if s.residual > T::tol(1e-8) {
        return Err(Error::SeriesNotConverged { residual: s.residual.as_f64() });
    }
    Ok(s)
}

/// Eigenvalues of `U_red` at `E + i eps`, useful for diagnostics.
pub fn reduced_spectrum<T: Real>(graph: &MetricGraph<T>, e: T, eps: T, rule: PartitionRule<T>) -> Result<Vec<C<T>>> {
    let b = assemble_with(graph, c(e, eps), rule)?;
    Ok(eigenvalues(&b.reduce_unchecked().u_red))
}
