use thiserror::Error;

/// Errors raised by the operator, constants, experiment and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigenvalues leave the closure of Gamma_{k}: sigma_{l} = {value:e}")]
    ConeViolation { k: usize, l: usize, value: f64 },

    #[error("rejection sampling exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("tail of the radial integral is unbounded for s = {s} (s <= 1/2 needs a bounded far field)")]
    TailUnbounded { s: f64 },

    #[error("truncation bound {bound:e} exceeds tolerance {tol:e}")]
    TruncationTooLarge { bound: f64, tol: f64 },

    #[error("anisotropy too extreme: cond(sqrt M) = {cond:e} exceeds {limit:e}")]
    AnisotropyTooExtreme { cond: f64, limit: f64 },

    #[error("frame is not orthonormal (defect {defect:e})")]
    FrameNotOrthonormal { defect: f64 },

    #[error("no feasible start found for lambda_min(M) >= {eps0:e}")]
    InfeasibleConstraint { eps0: f64 },

    #[error("eps = {eps} outside the admissible range (0, {max}) for n = {n}")]
    EpsOutOfRange { eps: f64, max: f64, n: usize },

    #[error("s must lie in {range} for {what}, got {s}")]
    SOutOfRange { s: f64, range: &'static str, what: &'static str },

    #[error("constrained sample left Gamma_2 after {attempts} attempts")]
    InfeasibleSample { attempts: usize },

    #[error("fixed-point iteration diverged at iteration {iter}: residual {residual:e} vs minimum {min:e}")]
    Diverged { iter: usize, residual: f64, min: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
