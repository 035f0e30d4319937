use std::fmt;

use nalgebra::Complex;
use serde::Serialize;

pub type Result<T> = std::result::Result<T, Error>;

/// A single problem found while validating a model declaration.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelIssue {
    UnsupportedSchema { found: u32 },
    EmptyModel,
    NotSquare { rows: usize, row: usize, len: usize },
    StateCountMismatch { generator: usize, states: usize },
    NonFinite { location: String },
    NegativeRate { row: usize, col: usize, value: f64 },
    RowSum { row: usize, sum: f64 },
    Reducible,
    NegativeSigma { state: usize, value: f64 },
    InvalidJump { location: String, reason: String },
    PositiveJump { location: String },
    BadTransition { from: usize, to: usize, reason: String },
    NoRecordStates,
}

impl fmt::Display for ModelIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelIssue::UnsupportedSchema { found } => {
                write!(f, "unsupported schema version {found} (expected 1)")
            }
            ModelIssue::EmptyModel => write!(f, "model has no states"),
            ModelIssue::NotSquare { rows, row, len } => {
                write!(f, "Q row {row} has {len} entries, expected {rows}")
            }
            ModelIssue::StateCountMismatch { generator, states } => write!(
                f,
                "Q is {generator}x{generator} but {states} state descriptors were given"
            ),
            ModelIssue::NonFinite { location } => write!(f, "non-finite value at {location}"),
            ModelIssue::NegativeRate { row, col, value } => {
                write!(f, "Q[{row}][{col}] = {value} is a negative off-diagonal rate")
            }
            ModelIssue::RowSum { row, sum } => {
                write!(f, "Q row {row} sums to {sum:e}, expected 0")
            }
            ModelIssue::Reducible => write!(f, "Q is not irreducible"),
            ModelIssue::NegativeSigma { state, value } => {
                write!(f, "state {state} has negative volatility {value}")
            }
            ModelIssue::InvalidJump { location, reason } => write!(f, "{location}: {reason}"),
            ModelIssue::PositiveJump { location } => {
                write!(f, "{location}: negative decay describes an upward jump")
            }
            ModelIssue::BadTransition { from, to, reason } => {
                write!(f, "transition jump {from}->{to}: {reason}")
            }
            ModelIssue::NoRecordStates => {
                write!(f, "every state is a downward subordinator (N+ = 0)")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {}", join_issues(.0))]
    InvalidModel(Vec<ModelIssue>),

    #[error("model parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation requires a Markov-modulated Brownian motion (no jumps)")]
    NotMmbm,

    #[error("matrix exponent evaluated at a pole (alpha = {0})")]
    AtPole(Complex<f64>),

    #[error("{what}: expected {expected} zeros, found {found}")]
    CountMismatch {
        what: String,
        expected: usize,
        found: usize,
        spectrum: Vec<(Complex<f64>, usize)>,
    },

    #[error("eigenvalue {0} lies on the imaginary axis")]
    ImaginaryAxis(Complex<f64>),

    #[error("linearization of size {0} exceeds the supported degree")]
    DegreeOverflow(usize),

    #[error("eigenvalue solver did not converge")]
    EigenSolver,

    #[error("rank of the Jordan system at {eigenvalue} is ambiguous (singular values {singular_values:?})")]
    RankAmbiguity {
        eigenvalue: Complex<f64>,
        singular_values: Vec<f64>,
    },

    #[error("Jordan chain at {eigenvalue} has residual {residual:e}")]
    ChainResidual { eigenvalue: Complex<f64>, residual: f64 },

    #[error("{what} is numerically singular (condition number {condition:e})")]
    Singular { what: String, condition: f64 },

    #[error("{what} has an imaginary residue of {residue:e}")]
    ImaginaryResidue { what: String, residue: f64 },

    #[error("{0}")]
    Precondition(String),

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        trajectory: Vec<f64>,
    },
}

impl Error {
    /// True when the failure comes from the input rather than from the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::Parse(_)
                | Error::InvalidArgument(_)
                | Error::NotMmbm
                | Error::Precondition(_)
        )
    }
}

fn join_issues(issues: &[ModelIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
