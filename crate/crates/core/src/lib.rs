//! Quantum graphs with piecewise-constant potentials: vertex scattering,
//! quantum maps with evanescent edges, exact spectra and trace formulas.
//!
//! Everything numerical is generic over the scalar type `T: Real` (`f64` or
//! `f32`); the aliases below fix the common choices.

pub mod error;
pub mod graph;
pub mod linalg;
pub mod quantum_map;
pub mod random;
pub mod scalar;
pub mod scattering;
pub mod spectra;
pub mod trace_formula;

pub use error::{Error, Result};
pub use graph::{graph_from_json, GraphBuilder, MatchingConditions, MatchingKind, VertexMatching};
pub use quantum_map::{assemble, assemble_with, PartitionRule};
pub use scalar::Real;
pub use spectra::{find_eigenvalues, SpectralOptions};
pub use trace_formula::{count_sweep, Mode, TraceOptions};

/// Double-precision graph.
pub type Graph = graph::MetricGraph<f64>;
/// Double-precision complex matrix.
pub type Matrix = linalg::CMatrix<f64>;
/// Double-precision quantum map with its factors.
pub type MapBundle = quantum_map::QuantumMapBundle<f64>;
pub type Spectrum = spectra::SpectralResult<f64>;
pub type Sweep = trace_formula::CountingSweep<f64>;

/// Single-precision graph.
pub type GraphF32 = graph::MetricGraph<f32>;
pub type MatrixF32 = linalg::CMatrix<f32>;
pub type MapBundleF32 = quantum_map::QuantumMapBundle<f32>;
pub type SpectrumF32 = spectra::SpectralResult<f32>;
