use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-positive rate: {name} = {value}")]
    NonPositiveRate { name: &'static str, value: f64 },

    #[error("post-change drift must be non-zero")]
    ZeroDrift,

    #[error("prior out of range: {name} = {value}")]
    PriorOutOfRange { name: &'static str, value: f64 },

    #[error("non-finite parameter: {name}")]
    NonFinite { name: &'static str },

    #[error("argument outside domain: {0}")]
    DomainError(String),

    #[error("quadrature failed to reach tolerance: estimate {estimate:e}, error {error:e} after {subdivisions} subdivisions")]
    QuadratureFailure {
        estimate: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("no sign change found in [{lo}, {hi}] (f(lo) = {f_lo:e}, f(hi) = {f_hi:e})")]
    BracketFailure {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("Monte Carlo budget exhausted: std error {std_error:e} above target {target:e}")]
    BudgetExhausted { std_error: f64, target: f64 },

    #[error("no convergence after {iterations} iterations (last update {last_update:e})")]
    NoConvergence { iterations: usize, last_update: f64 },

    #[error("Picard iteration did not converge after {iterations} sweeps (last sup update {last_update:e})")]
    PicardNoConvergence {
        iterations: usize,
        last_update: f64,
        previous: Vec<f64>,
        last: Vec<f64>,
    },

    #[error("root bracket failure at node phi1 = {phi1}: {detail}")]
    RootBracketFailure { phi1: f64, detail: String },

    #[error("extracted boundary is not monotone at phi1 = {phi1}")]
    NonMonotoneExtraction { phi1: f64 },

    #[error("boundary violates convexity by {excess:e} at phi1 = {phi1}")]
    ConvexityViolation { phi1: f64, excess: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}
