use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("ensemble reliability: {0}")]
    Reliability(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("expression parse error: {0}")]
    Expr(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
