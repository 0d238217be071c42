//! `qgs`: spectra, counting functions, trace formulas and structural checks for
//! quantum graphs described in JSON.

mod output;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use qgs_core::graph::{graph_from_json, MetricGraph};
use qgs_core::quantum_map::{assemble, residual_suite, ResidualSuite};
use qgs_core::random::{random_graph, RandomGraphOptions};
use qgs_core::scalar::{c, C};
use qgs_core::scattering::check_threshold;
use qgs_core::spectra::{find_eigenvalues, SpectralOptions};
use qgs_core::trace_formula::{
    count_sweep, enumerate_primitive_orbits, orbit_sum, sweep_grid, Mode, TraceOptions, ORBIT_CAP,
};
use qgs_core::Error;

use output::Table;

const EXIT_ERROR: u8 = 1;
const EXIT_TRAPPED: u8 = 2;
const EXIT_ORBIT_BUDGET: u8 = 3;
const EXIT_VERIFY: u8 = 4;

/// Largest residual accepted by `verify`.
const VERIFY_TOL: f64 = 1e-8;

#[derive(Parser, Debug)]
#[command(name = "qgs", version, about = "Quantum graphs with piecewise constant potentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Graph description (JSON).
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0.0)]
    emin: f64,
    #[arg(long, global = true, default_value_t = 400.0)]
    emax: f64,
    /// Number of sweep points.
    #[arg(long, global = true, default_value_t = 4000)]
    grid: usize,
    /// Relative regularisation: eps = epsilon (1 + |E|).
    #[arg(long, global = true, default_value_t = 1e-8)]
    epsilon: f64,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Reduced)]
    mode: ModeArg,
    /// E0 of the fixed partition: edges with V_e < E0 are oscillatory.
    #[arg(long, global = true)]
    fixed_partition_below: Option<f64>,
    /// Longest periodic orbit.
    #[arg(long, global = true, default_value_t = 4)]
    nmax: usize,
    /// Most repetitions per orbit in the truncated oscillatory sum.
    #[arg(long, global = true, default_value_t = 4)]
    rmax: usize,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Eigenvalues below the lower end of the range.
    #[arg(long, global = true, default_value_t = 0)]
    floor_count: usize,
    /// Number of random graphs checked by `verify`.
    #[arg(long, global = true)]
    fuzz: Option<usize>,
    /// Seed for `verify --fuzz`.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Energy at which `orbits` evaluates amplitudes and phases.
    #[arg(long, global = true)]
    energy: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Eigenvalues in [emin, emax] with multiplicities.
    Eigs,
    /// Mean, oscillatory and exact counting functions along a sweep.
    Count,
    /// Full and reduced secular determinants along a sweep.
    Trace,
    /// Structural identities on a graph or on random graphs.
    Verify,
    /// Primitive periodic orbits and the orbit expansion of tr U^n.
    Orbits,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    Reduced,
    AboveThreshold,
    FixedPartition,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::TrappedStateSuspected { .. } => EXIT_TRAPPED,
            Error::OrbitBudgetExceeded { .. } => EXIT_ORBIT_BUDGET,
            _ => EXIT_ERROR,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { code: EXIT_ERROR, message: e.to_string() }
    }
}

fn fail(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_ERROR, message: message.into() }
}

struct Loaded {
    graph: MetricGraph<f64>,
    hash: String,
}

fn load(cli: &Cli) -> Result<Loaded, Failure> {
    let path = cli.graph.as_ref().ok_or_else(|| fail("--graph is required"))?;
    let bytes = fs::read(path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| fail(format!("{}: {e}", path.display())))?;
    let graph = graph_from_json(&text)?;
    Ok(Loaded { graph, hash: hex::encode(Sha256::digest(&bytes)) })
}

fn mode(cli: &Cli) -> Result<Mode<f64>, Failure> {
    match (cli.mode, cli.fixed_partition_below) {
        (ModeArg::Reduced, _) => Ok(Mode::Reduced),
        (ModeArg::AboveThreshold, _) => Ok(Mode::AboveThreshold),
        (ModeArg::FixedPartition, Some(e0)) => Ok(Mode::FixedPartition(e0)),
        (ModeArg::FixedPartition, None) => Err(fail("--mode fixed-partition needs --fixed-partition-below")),
    }
}

fn spectral(cli: &Cli) -> SpectralOptions {
    SpectralOptions { grid: cli.grid.max(16), floor_count: cli.floor_count, ..SpectralOptions::default() }
}

fn emit(cli: &Cli, table: &Table, meta: Value) -> Result<(), Failure> {
    let mut sink: Box<dyn Write> = match &cli.out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p).map_err(|e| fail(format!("{}: {e}", p.display())))?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    };
    match cli.format {
        Format::Csv => table.write_csv(&mut *sink)?,
        Format::Json => table.write_json(meta, &mut *sink)?,
    }
    sink.flush()?;
    Ok(())
}

fn meta(cli: &Cli, hash: Option<&str>, mode_name: &str) -> Value {
    json!({
        "command": format!("{:?}", cli.command).to_lowercase(),
        "version": env!("CARGO_PKG_VERSION"),
        "graph_sha256": hash,
        "epsilon": cli.epsilon,
        "mode": mode_name,
        "emin": cli.emin,
        "emax": cli.emax,
        "grid": cli.grid,
    })
}

fn directed_label(graph: &MetricGraph<f64>, d: usize) -> String {
    let e = &graph.edges()[d / 2];
    format!("{}{}", e.id, if d.is_multiple_of(2) { ">" } else { "<" })
}

fn run_eigs(cli: &Cli) -> Result<u8, Failure> {
    let g = load(cli)?;
    let r = find_eigenvalues(&g.graph, cli.emin, cli.emax, &spectral(cli))?;
    let mut t = Table::new(&["index", "E", "multiplicity", "residual"]);
    let mut index = cli.floor_count;
    for ev in &r.eigenvalues {
        index += ev.multiplicity;
        t.push(vec![index.into(), ev.energy.into(), ev.multiplicity.into(), ev.residual.into()]);
    }
    t.extra.insert("trapped".into(), json!(r.trapped));
    t.extra.insert("thresholds".into(), json!(r.thresholds));
    emit(cli, &t, meta(cli, Some(&g.hash), "exact"))?;
    if !r.trapped.is_empty() {
        eprintln!("warning: suspected trapped states near {:?}", r.trapped);
        return Ok(EXIT_TRAPPED);
    }
    Ok(0)
}

fn run_count(cli: &Cli) -> Result<u8, Failure> {
    let g = load(cli)?;
    let mode = mode(cli)?;
    let opts = TraceOptions { epsilon_rel: cli.epsilon, spectral: spectral(cli), ..TraceOptions::default() };
    let s = count_sweep(&g.graph, cli.emin, cli.emax, cli.grid, mode, &opts)?;
    let name = mode.name();
    let mut t = Table::new(&[
        "E", "N_mean", "N_osc", "N_total", "N_exact", "mode", "flags", "weyl", "det_s", "ev_inv", "ev_fwd", "branch",
        "c",
    ]);
    let mut trapped = false;
    for r in &s.reports {
        trapped |= r.trapped;
        t.push(vec![
            r.energy.into(),
            r.n_mean.into(),
            r.n_osc.into(),
            r.n_total.into(),
            r.n_exact.into(),
            name.as_str().into(),
            if r.trapped { "trapped" } else { "" }.into(),
            r.weyl.into(),
            r.det_s.into(),
            r.ev_inv.into(),
            r.ev_fwd.into(),
            r.branch.into(),
            r.c.into(),
        ]);
    }
    t.extra.insert(
        "calibration".into(),
        json!({ "c": s.c, "energies": s.calibration_energies, "estimates": s.calibration_estimates }),
    );
    t.extra.insert("branch_shifts".into(), json!(s.branch_shifts));
    emit(cli, &t, meta(cli, Some(&g.hash), &name))?;
    Ok(if trapped { EXIT_TRAPPED } else { 0 })
}

fn run_trace(cli: &Cli) -> Result<u8, Failure> {
    let g = load(cli)?;
    let spectrum = find_eigenvalues(&g.graph, cli.emin, cli.emax, &spectral(cli))?;
    let energies = sweep_grid(&g.graph, cli.emin, cli.emax, cli.grid);
    let mut t = Table::new(&["E", "re_xi", "im_xi", "abs_xi", "re_xi_red", "im_xi_red", "abs_xi_red", "N_exact"]);
    let mut trapped = false;
    for &e in &energies {
        let b = assemble(&g.graph, e)?;
        let red = b.reduce_unchecked();
        trapped |= red.trapped.is_some_and(|t| t.flagged);
        let xi = b.secular().value();
        let xr = red.u_red.one_minus().log_det().value();
        t.push(vec![
            e.into(),
            xi.re.into(),
            xi.im.into(),
            xi.norm().into(),
            xr.re.into(),
            xr.im.into(),
            xr.norm().into(),
            spectrum.count_below(e).into(),
        ]);
    }
    emit(cli, &t, meta(cli, Some(&g.hash), "reduced"))?;
    Ok(if trapped { EXIT_TRAPPED } else { 0 })
}

fn amplitude(rng: &mut ChaCha8Rng) -> C<f64> {
    c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_energy(graph: &MetricGraph<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = (graph.min_potential() + 0.1, graph.max_potential() + 60.0);
    loop {
        let e = rng.random_range(lo..hi);
        if check_threshold(graph, e).is_ok() {
            return e;
        }
    }
}

fn suite_row(t: &mut Table, label: String, e: f64, r: &ResidualSuite<f64>) {
    t.push(vec![
        label.into(),
        e.into(),
        r.vertex_symmetry.into(),
        r.block_symmetry.into(),
        r.unitarity.into(),
        r.det_identity_1.into(),
        r.det_identity_2.into(),
        r.flux.into(),
        if r.trapped { "trapped" } else { "" }.into(),
    ]);
}

fn run_verify(cli: &Cli) -> Result<u8, Failure> {
    let mut t = Table::new(&[
        "graph", "E", "vertex_symmetry", "block_symmetry", "unitarity", "det_identity_1", "det_identity_2", "flux",
        "flags",
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut worst = ResidualSuite::<f64>::default();
    let hash = match cli.fuzz {
        Some(n) => {
            for j in 0..n {
                let g = random_graph::<f64, _>(&RandomGraphOptions::default(), &mut rng);
                for _ in 0..20 {
                    let e = random_energy(&g, &mut rng);
                    let r = residual_suite(&g, e, |_, _| amplitude(&mut rng))?;
                    worst = worst.merge(r);
                    suite_row(&mut t, format!("random{j}"), e, &r);
                }
            }
            None
        }
        None => {
            let g = load(cli)?;
            for e in sweep_grid(&g.graph, cli.emin, cli.emax, cli.grid) {
                let r = residual_suite(&g.graph, e, |_, _| amplitude(&mut rng))?;
                worst = worst.merge(r);
                suite_row(&mut t, "input".into(), e, &r);
            }
            Some(g.hash)
        }
    };
    t.extra.insert(
        "worst".into(),
        json!({
            "vertex_symmetry": worst.vertex_symmetry,
            "block_symmetry": worst.block_symmetry,
            "unitarity": worst.unitarity,
            "det_identity_1": worst.det_identity_1,
            "det_identity_2": worst.det_identity_2,
            "flux": worst.flux,
            "tolerance": VERIFY_TOL,
        }),
    );
    emit(cli, &t, meta(cli, hash.as_deref(), "reduced"))?;
    eprintln!(
        "max residuals: vertex {:.2e}, block {:.2e}, unitarity {:.2e}, det {:.2e}/{:.2e}, flux {:.2e}",
        worst.vertex_symmetry, worst.block_symmetry, worst.unitarity, worst.det_identity_1, worst.det_identity_2, worst.flux
    );
    Ok(if worst.max() > VERIFY_TOL { EXIT_VERIFY } else { 0 })
}

fn run_orbits(cli: &Cli) -> Result<u8, Failure> {
    let g = load(cli)?;
    let graph = &g.graph;
    let mode = mode(cli)?;
    let e = cli.energy.unwrap_or(0.5 * (cli.emin + cli.emax));
    check_threshold(graph, e)?;
    let eps = cli.epsilon * (1.0 + e.abs());
    // Enumerate first so that the budget error comes before any evaluation.
    enumerate_primitive_orbits(graph, cli.nmax, ORBIT_CAP)?;
    let sum = orbit_sum(graph, e, eps, mode.rule(), cli.nmax, cli.rmax, ORBIT_CAP)?;
    let mut t = Table::new(&["index", "n_p", "sequence", "class", "re_A", "im_A", "re_W", "im_W"]);
    for (j, o) in sum.orbits.iter().enumerate() {
        let seq: Vec<String> = o.sequence.iter().map(|&d| directed_label(graph, d)).collect();
        t.push(vec![
            j.into(),
            o.n_p.into(),
            seq.join(" ").into(),
            format!("{:?}", o.class).into(),
            o.amplitude.re.into(),
            o.amplitude.im.into(),
            o.phase.re.into(),
            o.phase.im.into(),
        ]);
    }
    let traces: Vec<Value> = sum
        .rows
        .iter()
        .map(|r| json!({ "n": r.n, "residual": r.residual, "primed_residual": r.primed_residual,
                         "trace": [r.trace.re, r.trace.im] }))
        .collect();
    t.extra.insert("traces".into(), Value::Array(traces));
    t.extra.insert("n_osc_truncated".into(), json!(sum.n_osc_truncated));
    emit(cli, &t, meta(cli, Some(&g.hash), &mode.name()))?;
    for r in &sum.rows {
        eprintln!("n = {}: |orbit sum - tr U^n| = {:.2e}, primed {:.2e}", r.n, r.residual, r.primed_residual);
    }
    Ok(0)
}

fn configure_threads() {
    if let Some(n) = std::env::var("QGS_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match cli.command {
        Command::Eigs => run_eigs(&cli),
        Command::Count => run_count(&cli),
        Command::Trace => run_trace(&cli),
        Command::Verify => run_verify(&cli),
        Command::Orbits => run_orbits(&cli),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
