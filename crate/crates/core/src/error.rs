use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("degenerate diffusion matrix: {0}")]
    DegenerateSigma(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("profile carries no dissipativity certificate")]
    MissingCertificate,

    #[error("grid too short: r_max = {r_max} is below the required {required}")]
    GridTooShort { r_max: f64, required: f64 },

    #[error("reflection direction undefined at separation {0:e}")]
    DegenerateDirection(f64),

    #[error("simulation diverged on path {path} at t = {time}")]
    SimulationDiverged { path: usize, time: f64 },

    #[error("sample sizes differ ({0} vs {1})")]
    UnequalSizes(usize, usize),

    #[error("problem size {n} exceeds the limit of {limit}")]
    SizeLimit { n: usize, limit: usize },

    #[error("time slice t = {0} was not recorded")]
    SliceNotRecorded(f64),

    #[error("certificate invalid: {0}")]
    CertificateInvalid(String),

    #[error("stationarity not reached: drift statistic {statistic:.4e} exceeds threshold {threshold:.4e}")]
    StationarityNotReached { statistic: f64, threshold: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
