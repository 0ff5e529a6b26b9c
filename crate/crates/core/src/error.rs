use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum CmtaError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error in {op}: value {value} at index {index}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },

    #[error("format error in {path} at byte {offset}: {reason}")]
    Format {
        path: String,
        offset: u64,
        reason: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("binning error: {0}")]
    Binning(String),

    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("non-finite loss for patient {patient_id} (epoch {epoch}, step {step})")]
    NonFiniteLoss {
        patient_id: String,
        epoch: usize,
        step: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CmtaError>;

impl CmtaError {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        CmtaError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        CmtaError::Contract(msg.into())
    }
}
