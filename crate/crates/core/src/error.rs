use alloc::string::String;

/// Errors raised by the numerical core.
///
/// Variants fall in two families: validation problems with the input
/// ([`Error::is_numerical`] is `false`) and numerical failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("observational unit observed twice: eu {eu}, obs {obs}")]
    ObservedTwice { eu: String, obs: String },
    #[error("duplicate (eu, obs, time, rep) key at observation {row}")]
    DuplicateKey { row: usize },
    #[error("unknown factor `{0}`")]
    UnknownFactor(String),
    #[error("unbalanced layout: {0}")]
    Unbalanced(String),
    #[error("cell (eu {eu}, time {time}) has {count} observations, fewer than {needed}")]
    CellTooSmall {
        eu: String,
        time: u32,
        count: usize,
        needed: usize,
    },
    #[error("empty cell: {0}")]
    EmptyCell(String),
    #[error("zero degrees of freedom for `{0}`")]
    ZeroDf(String),
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("rank-deficient fixed-effects matrix (column {column}, pivot {pivot:e})")]
    RankDeficient { column: usize, pivot: f64 },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("numerically singular R_X (condition estimate {condition:e})")]
    SingularRx { condition: f64 },
    #[error("negative eigenvalue {0:e}")]
    NegativeEigenvalue(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl Error {
    /// `true` for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::Singular(_)
                | Error::SingularRx { .. }
                | Error::NegativeEigenvalue(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
