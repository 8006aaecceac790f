use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("inadmissible parameter: {0}")]
    Inadmissible(String),

    #[error("invalid moments: {0}")]
    InvalidMoments(String),

    #[error("model is over-parametrized: {moments} moments but {params} free parameters")]
    OverParametrized { moments: usize, params: usize },

    #[error("rank deficiency: {context} (singular values {singular_values:?})")]
    RankDeficient {
        context: String,
        singular_values: Vec<f64>,
    },

    #[error("rank mismatch: {0}")]
    RankMismatch(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("infeasible target: {0}")]
    Infeasible(String),

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 2 for bad input, 1 for numerical trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::OverParametrized { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Infeasible(_)
            | Error::DegenerateData(_) => 2,
            _ => 1,
        }
    }
}
