use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum StarkError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate profile: both Lorentzian and Gaussian widths are zero")]
    DegenerateProfile,

    #[error("degenerate level structure: {0}")]
    DegenerateLevels(String),

    #[error("voltage {0} V outside electrode range [{1}, {2}] V")]
    VoltageOutOfRange(f64, f64, f64),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("no peak found in spectrum")]
    NoPeak,

    #[error("detuning grids do not match across traces")]
    GridMismatch,

    #[error("infeasible plan: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, StarkError>;
