use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected} values, got {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("field is not zero on the Dirichlet boundary (node {node}, value {value})")]
    NonZeroBoundary { node: usize, value: f64 },

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("time {t} is outside the horizon [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error(
        "ellipticity violated at t={t}, x={x:?}, eta={eta:?}: quotient {quotient} outside [{lower}, {upper}]"
    )]
    EllipticityViolation {
        t: f64,
        x: Vec<f64>,
        eta: Vec<f64>,
        quotient: f64,
        lower: f64,
        upper: f64,
    },

    #[error("coefficient matrix is not symmetric at t={t}, x={x:?}")]
    AsymmetricCoefficient { t: f64, x: Vec<f64> },

    #[error("coefficient entry {value} exceeds the entrywise bound {bound} at t={t}, x={x:?}")]
    EntryBound { t: f64, x: Vec<f64>, value: f64, bound: f64 },

    #[error("degenerate coefficient field: smallest sampled quotient {0}")]
    DegenerateCoefficient(f64),

    #[error("kernel is not positive semidefinite: eigenvalue {0}")]
    KernelNotPsd(f64),

    #[error("kernel is not symmetric: k(x,y)={kxy} but k(y,x)={kyx}")]
    KernelNotSymmetric { kxy: f64, kyx: f64 },

    #[error("invalid truncation {requested}: must be in 1..={available}")]
    InvalidTruncation { requested: usize, available: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("complementarity solver did not converge after {sweeps} sweeps (residual {residual:e})")]
    LcpNonConvergence { sweeps: usize, residual: f64 },

    #[error("step {step} failed: {source}")]
    Step { step: usize, source: Box<Error> },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("problem is outside the spectral oracle class: {0}")]
    OutsideOracleClass(String),

    #[error("not a parabolic potential: measure mass {mass:e} at level {level}, node {node}")]
    NotAPotential { level: usize, node: usize, mass: f64 },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("problems are not driven by the same noise: {0}")]
    Uncoupled(String),
}
