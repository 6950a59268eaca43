use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("degenerate state: norm is zero")]
    DegenerateState,
    #[error("state is not normalized (norm² = {norm2})")]
    NotNormalized { norm2: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operator is not Hermitian: |M - M†| = {asymmetry:e} at entry ({row}, {col})")]
    NotHermitian {
        row: usize,
        col: usize,
        asymmetry: f64,
    },
    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),
    #[error("invalid configuration: `{field}` must be {constraint}")]
    Config { field: String, constraint: String },
    #[error("step-size error: {0}")]
    StepSize(String),
    #[error("weight underflow: ln‖ψ‖² = {log_norm2}")]
    WeightUnderflow { log_norm2: f64 },
    #[error("mode error: {0}")]
    Mode(String),
    #[error("enumeration guard: {records} records exceed the limit of {limit}")]
    EnumerationGuard { records: f64, limit: u64 },
    #[error("grid resolution: {0}")]
    GridResolution(String),
    #[error("oracle failure: {0}")]
    Oracle(String),
    #[error("measurement is switched off (κ = 0); no record is defined")]
    NoMeasurement,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: &str, constraint: &str) -> Self {
        Error::Config {
            field: field.to_owned(),
            constraint: constraint.to_owned(),
        }
    }

    /// Errors that stem from numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::StepSize(_)
                | Error::WeightUnderflow { .. }
                | Error::Oracle(_)
                | Error::DegenerateState
                | Error::NotNormalized { .. }
        )
    }
}
