use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("graph description: {0}")]
    Schema(String),
    #[error("graph is not connected")]
    DisconnectedGraph,
    #[error("edge {edge}: length must be positive and finite, got {length}")]
    NonPositiveLength { edge: String, length: f64 },
    #[error("edge {edge}: potential must be finite")]
    NonFinitePotential { edge: String },
    #[error("vertex {vertex}: malformed matching conditions: {reason}")]
    MalformedMatching { vertex: String, reason: String },
    #[error("matching kind {kind} is not available at degree {degree}")]
    UnsupportedDegree { kind: String, degree: usize },
    #[error("energy {energy} coincides with the potential of edge {edge}")]
    AtThreshold { edge: String, energy: f64 },
    #[error("vertex {vertex}: A + iBK is numerically singular (condition {condition:e})")]
    SingularVertexMatrix { vertex: String, condition: f64 },
    #[error("I - U_ee nearly singular at E = {energy} (smallest singular value {min_singular:e}); possible trapped state")]
    TrappedStateSuspected { energy: f64, min_singular: f64 },
    #[error("graph is not a star")]
    NotAStar,
    #[error("no oscillatory edges at E = {energy}; energies must lie above the lowest potential")]
    NoOscillatoryEdges { energy: f64 },
    #[error("invalid energy range: {0}")]
    InvalidRange(String),
    #[error("eigenphase tracking failed to resolve the interval [{lo}, {hi}]")]
    GridTooCoarse { lo: f64, hi: f64 },
    #[error("calibration constants disagree: {estimates:?}")]
    InconsistentCalibration { estimates: Vec<f64> },
    #[error("periodic orbit budget of {cap} records exceeded")]
    OrbitBudgetExceeded { cap: usize },
    #[error("evanescent correction series did not converge (residual {residual:e})")]
    SeriesNotConverged { residual: f64 },
}
