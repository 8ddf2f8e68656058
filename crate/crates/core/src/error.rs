use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Violation;

/// Errors raised by the forecasting core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dataset: {}", join_violations(.0))]
    InvalidDataset(Vec<Violation>),

    #[error("insufficient data: need {required} rows, have {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate scale for variable `{variable}`: {reason}")]
    DegenerateScale { variable: String, reason: &'static str },

    #[error("categorical code {code} out of range for variable `{variable}` (cardinality {cardinality})")]
    CodeOutOfRange {
        variable: String,
        code: f64,
        cardinality: usize,
    },

    #[error("formulation not applicable: {0}")]
    FormulationInapplicable(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("MAPE undefined: |truth| below {guard:e} at cell {index}")]
    GuardedDenominator { index: usize, guard: f64 },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

fn join_violations(v: &[Violation]) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(out, "{x}");
    }
    out
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
