use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("periodic domains need an even side, got L={0}")]
    OddPeriodicSide(usize),
    #[error("side length must exceed 1, got L={0}")]
    SideTooSmall(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown vertex {0}")]
    UnknownVertex(usize),
    #[error("graph is not bipartite")]
    NotBipartite,
    #[error("pseudoinverse residual {0:e} exceeds 1e-8")]
    SingularBeyondKernel(f64),
    #[error("function is not mean-zero (sum {0:e})")]
    NotMeanZero(f64),
    #[error("row y1={y1} must be below L-1={max}")]
    BadRow { y1: usize, max: usize },
    #[error("support of size {0} exceeds the exact cover limit of 64")]
    SupportTooLargeForExactCover(usize),
    #[error("density has nonzero charge {0}")]
    NotNeutral(i64),
    #[error("densities have overlapping supports")]
    OverlappingSupports,
    #[error("weight is not normalized")]
    NotNormalized,
    #[error("renormalization did not terminate by scale {0}")]
    NonTermination(u32),
    #[error("restriction of the density to the square is neutral")]
    NeutralRestriction,
    #[error("no bipartition available for this domain")]
    BipartitionUnavailable,
    #[error("property violated: {0}")]
    PropertyViolation(String),
    #[error("edge ({0},{1}) carries gradient in more than one spin-wave summand")]
    GradientOverlap(usize, usize),
    #[error("Cholesky factorization failed")]
    FactorizationFailure,
    #[error("state space too large: {0:.3e} states")]
    StateSpaceTooLarge(f64),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("empty density")]
    EmptyDensity,
}

pub type Result<T> = std::result::Result<T, Error>;
