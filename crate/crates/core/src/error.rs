use thiserror::Error;

/// Everything that can go wrong while building, solving or running a scenario.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: need b > a and n >= 2, got a = {a}, b = {b}, n = {n}")]
    InvalidDomain { a: f64, b: f64, n: usize },

    #[error("kernel too narrow: support {support} is below two mesh spacings ({min})")]
    KernelTooNarrow { support: f64, min: f64 },

    #[error("parameter `{name}` must be positive, got {value}")]
    NonpositiveParameter { name: &'static str, value: f64 },

    #[error("kernel mass is complete on every row; the domain must truncate the kernel somewhere")]
    KernelMassComplete,

    #[error("length mismatch: expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("{name} must be strictly positive at every node (node {node} has {value})")]
    NonpositiveField { name: &'static str, node: usize, value: f64 },

    #[error("operator is not symmetric; only symmetric spectral computations are supported")]
    AsymmetricOperator,

    #[error("principal eigenvector changes sign (min {min} after max-normalization)")]
    NonpositiveEigenvector { min: f64 },

    #[error("-A is not positive definite")]
    SingularOperator,

    #[error("invalid bracket: need lo < hi, got [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },

    #[error("subcritical regime: {0}")]
    SubcriticalRegime(String),

    #[error("no convergence in {what} after {iterations} iterations (last gap {gap:e})")]
    NoConvergence { what: &'static str, iterations: usize, gap: f64 },

    #[error("monotone bracket violated in {what} at iteration {iteration}")]
    BracketViolation { what: &'static str, iteration: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("negative state entry {value} at node {node}")]
    NegativeState { node: usize, value: f64 },

    #[error("step collapse at t = {t}: positivity not restored after {halvings} halvings")]
    StepCollapse { t: f64, halvings: usize },

    #[error("time step {dt} exceeds the explicit stability bound {dt_max}")]
    StepTooLarge { dt: f64, dt_max: f64 },

    #[error("mass drift at t = {t}: mass {mass}, expected {expected}")]
    MassDrift { t: f64, mass: f64, expected: f64 },

    #[error("equilibrium infected density {value} at node {node} is too small for the Lyapunov weight")]
    DivisionGuard { node: usize, value: f64 },

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
