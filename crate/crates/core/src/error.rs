use thiserror::Error;

/// Errors raised by the numerical toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("negative off-diagonal rate at ({0}, {1})")]
    NegativeOffDiagonal(usize, usize),

    #[error("row {row} sums to {sum:e}, outside tolerance")]
    RowSumViolation { row: usize, sum: f64 },

    #[error("negative Markov matrix entry at ({0}, {1})")]
    NegativeEntry(usize, usize),

    #[error("point is not in the simplex: {0}")]
    NotInSimplex(String),

    #[error("vector is not tangent to the simplex (coordinate sum {0:e})")]
    NotTangent(f64),

    #[error("rate matrix is not irreducible")]
    NotIrreducible,

    #[error("linear system is singular")]
    SingularSystem,

    #[error("point lies on the simplex boundary (coordinate {index} is {value:e})")]
    BoundaryPoint { index: usize, value: f64 },

    #[error("rate matrix is not reversible with respect to the given measure (defect {0:e})")]
    NotReversible(f64),

    #[error("point is not an equilibrium (residual {0:e})")]
    NotAnEquilibrium(f64),

    #[error("row {row} normalizer {value:e} is degenerate")]
    DegenerateDenominator { row: usize, value: f64 },

    #[error("comparison row {row} has off-diagonal mass {sum} > 1")]
    RowOverflow { row: usize, sum: f64 },

    #[error("coupling matrix is not symmetric (defect {0:e})")]
    AsymmetricMatrix(f64),

    #[error("field is not defined at this point: {0}")]
    DomainViolation(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepsizeUnderflow { t: f64, h: f64 },

    #[error("epsilon too large: x + eps*G(x) leaves the open simplex at {0:?}")]
    EpsilonTooLarge(Vec<f64>),

    #[error("equilibrium {index} is not hyperbolic")]
    EquilibriaNotHyperbolic { index: usize },

    #[error("kernel row {row} is degenerate")]
    DegenerateKernelRow { row: usize },

    #[error("the two evaluation routes disagree: {0}")]
    FormulaMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
