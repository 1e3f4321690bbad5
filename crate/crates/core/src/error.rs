use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    MalformedRow { row: u64, message: String },

    #[error("input contains no readings")]
    EmptyInput,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("absolute temperature {kelvin} K is not positive")]
    NonPositiveTemperature { kelvin: f64 },

    #[error("invalid spline specification: {0}")]
    InvalidSpline(String),

    #[error("value {value} lies outside the knot boundary [{lo}, {hi}]")]
    OutsideKnotRange { value: f64, lo: f64, hi: f64 },

    #[error("beta = {beta} is infeasible: {reason}")]
    InfeasibleBeta { beta: f64, reason: String },

    #[error("design has no data support for basis functions {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("correlation rho = {rho} makes a block of size {block} singular")]
    SingularCorrelation { rho: f64, block: usize },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("all candidate fits failed: {0}")]
    AllCandidatesFailed(String),

    #[error("extrapolation refused: {0}")]
    Extrapolation(String),

    #[error("threshold {threshold} is not below the initial level {initial}")]
    ThresholdAboveInitial { threshold: f64, initial: f64 },

    #[error("optimizer failed: {0}")]
    Optimization(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by bad inputs or queries rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedRow { .. }
                | Error::EmptyInput
                | Error::InvalidDataset(_)
                | Error::NonPositiveTemperature { .. }
                | Error::InvalidSpline(_)
                | Error::InvalidArgument(_)
                | Error::Extrapolation(_)
                | Error::ThresholdAboveInitial { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
