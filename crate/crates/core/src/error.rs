use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for dimension {p}")]
    IndexOutOfRange { index: usize, p: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("coordinate {0} has zero sample variance; correlation is undefined")]
    ZeroVariance(usize),

    #[error("block {group} is not positive definite")]
    NotPositiveDefinite { group: String },

    #[error(
        "sub-block {group} of the sample covariance is singular; \
         use a smaller maximal block size or more samples"
    )]
    SingularBlock { group: String },

    #[error("{what} of size {size} exceeds the limit of {limit}: {hint}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
        hint: &'static str,
    },

    #[error("no candidate partition could be evaluated")]
    NoFeasibleCandidate,

    #[error("design matrix is rank deficient (condition estimate {0:.3e})")]
    RankDeficient(f64),

    #[error("insufficient samples: n = {n}, need at least {required}")]
    InsufficientSamples { n: usize, required: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{}: {source}", path.display())]
    InFile {
        path: std::path::PathBuf,
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Failures of numerical routines (as opposed to malformed input).
    pub fn is_numeric(&self) -> bool {
        if let Error::InFile { source, .. } = self {
            return source.is_numeric();
        }
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::SingularBlock { .. }
                | Error::NoFeasibleCandidate
                | Error::RankDeficient(_)
                | Error::ZeroVariance(_)
        )
    }

    /// Attaches the offending path.
    pub fn in_file(self, path: &std::path::Path) -> Self {
        Error::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}
