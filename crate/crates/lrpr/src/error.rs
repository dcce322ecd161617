use thiserror::Error;

/// Crate-wide error type. The CLI maps each variant class to a distinct
/// process exit code (config 1, numeric 2, assertion 3, io 4).
#[derive(Debug, Error)]
pub enum LrprError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("divergence: objective exceeded 1e3x its initial value after {} iterations", history.len())]
    Divergence { history: Vec<f64> },

    #[error("infeasible: no lambda in bracket reached the residual target; closest residual {closest_residual}")]
    Infeasible { closest_residual: f64 },

    #[error(
        "net size cap exceeded: construction needs at least {required} elements, cap is {cap}"
    )]
    SizeCap { required: usize, cap: usize },

    #[error("assertion failed: {0}")]
    AssertionFail(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl LrprError {
    /// Process exit code category for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            LrprError::Config(_) | LrprError::Argument(_) | LrprError::Dimension(_) => 1,
            LrprError::Numeric(_)
            | LrprError::Divergence { .. }
            | LrprError::Infeasible { .. }
            | LrprError::SizeCap { .. } => 2,
            LrprError::AssertionFail(_) => 3,
            LrprError::Io(_) | LrprError::Format(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, LrprError>;
