use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("invalid parameter {name} = {value}: must be {constraint}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("{0}")]
    Domain(String),

    #[error("t = {t} outside trajectory domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("delay out of range: {0}")]
    DelayRange(String),

    #[error("operation unsupported for delay family {family}: {why}")]
    UnsupportedFamily {
        family: &'static str,
        why: &'static str,
    },

    #[error("{what} requires k2 > 0")]
    NeedsSaturation { what: &'static str },

    #[error(
        "step fixed-point iteration failed at t = {t}: residual {residual:.3e} after {iters} iterations"
    )]
    StepFailure { t: f64, residual: f64, iters: usize },

    #[error("state became non-finite at t = {t}")]
    Blowup { t: f64 },

    #[error("hypothesis {name} fails: {lhs} vs {rhs} (need strict >)")]
    HypothesisFailure {
        name: &'static str,
        lhs: f64,
        rhs: f64,
    },

    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
