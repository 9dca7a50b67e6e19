use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("matrix is rank deficient: smallest singular value {smallest:.3e} vs largest {largest:.3e}")]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("parameter outside its domain: {0}")]
    Domain(String),

    #[error("ill-conditioned matrix: {0}")]
    Conditioning(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("invalid weights matrix: {0}")]
    Weights(String),

    #[error("degenerate test statistic: {0}")]
    Degenerate(String),

    #[error("limit vector e lies in the column span of the design")]
    LimitInSpan,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("Monte Carlo resolution too coarse: {0}")]
    Resolution(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
