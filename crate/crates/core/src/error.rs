use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants are grouped by the subsystem that raises them, but every public
/// operation returns this one type so that pipelines (restore, then bound,
/// then identify) compose with `?`.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // tables and laws
    #[error("negative probability {value} at cell {cell}")]
    NegativeEntry { cell: String, value: f64 },
    #[error("table does not sum to one (total {total})")]
    NotNormalized { total: f64 },
    #[error("axis mismatch: {0}")]
    AxisMismatch(String),
    #[error("restriction Z violated: mass {mass} on {cell}")]
    ZViolation { cell: String, mass: f64 },
    #[error("{n} indicators exceeds the limit of {max}")]
    TooManyIndicators { n: usize, max: usize },
    #[error("channel factor {factor} is singular (determinant {det})")]
    SingularFactor { factor: String, det: f64 },
    #[error("invalid channel entry: {0}")]
    InvalidChannel(String),

    // graphs
    #[error("graph has a directed cycle through {0}")]
    CycleFound(String),
    #[error("proxy {node} must have exactly the parents {expected}")]
    BadProxyParents { node: String, expected: String },
    #[error("forbidden edge {from} -> {to} into a counterfactual")]
    ForbiddenEdgeIntoCounterfactual { from: String, to: String },
    #[error("indicator proxy {node} must have parent {expected}")]
    BadIndicatorProxy { node: String, expected: String },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("graph parse error on line {line}: {msg}")]
    GraphParse { line: usize, msg: String },

    // restoration
    #[error("channel is singular (|det| = {det:e})")]
    SingularChannel { det: f64 },
    #[error("channel incompatible with observed law: {detail}")]
    IncompatibleChannel { detail: String },

    // bounds
    #[error("observed law falsifies the {model} model (worst {constraint} deviation {deviation:e})")]
    FalsifiedModel { model: String, constraint: String, deviation: f64 },
    #[error("positivity violated: {0}")]
    PositivityViolation(String),
    #[error("p(R=0) = {p_r0} is incompatible with the observed law (q = {q})")]
    IncompatibleR0 { p_r0: f64, q: f64 },
    #[error("degenerate interval: {0}")]
    DegenerateInterval(String),
    #[error("no feasible grid point")]
    NoFeasiblePoint,

    // downstream
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty bound interval")]
    EmptyInterval,
    #[error("unsupported: {0}")]
    Unsupported(String),

    // simulation and estimation
    #[error("invalid scaling m = {m}: {reason}")]
    InvalidM { m: f64, reason: String },
    #[error("record set is empty")]
    EmptyData,
    #[error("record value out of range: {0}")]
    RecordOutOfRange(String),
    #[error("every EM restart collapsed to a singular channel")]
    DegenerateInit,
}

pub type Result<T> = std::result::Result<T, Error>;
