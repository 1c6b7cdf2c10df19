use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("instrument count {0} outside supported range {1}..={2}")]
    InstrumentCountOutOfRange(usize, usize, usize),

    #[error("instrument index {0} outside 1..={1}")]
    InstrumentIndexOutOfRange(usize, usize),

    #[error("family is not an antichain: {0} is contained in {1}")]
    NotAntichain(String, String),

    #[error("weight table has {got} entries, expected {expected}")]
    IncompleteTable { got: usize, expected: usize },

    #[error("weight table entry {0} is not binary")]
    NonBinaryWeight(i64),

    #[error("weights violate the linear compliance structure at z={z}: {detail}")]
    PropertyMViolated { z: String, detail: String },

    #[error("matrix is rank deficient (rank {rank} of {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },

    #[error("design matrix is singular; consider the reduced subset family for discretized instruments")]
    SingularDesign,

    #[error("covariance of the instrument products is singular")]
    SingularCovariance,

    #[error("weak identification: complier share estimate {share:.6} (t = {t_stat:.2}) below the gate")]
    WeakIdentification { share: f64, t_stat: f64 },

    #[error("moment matrix for the variance estimator is singular; use bootstrap standard errors")]
    SingularMoments,

    #[error("invalid estimand: {0}")]
    InvalidEstimand(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty instrument cell {0}; the estimand requires support there")]
    EmptyCell(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
