use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signature dimension overflows for d = {dim}, m = {degree}")]
    DimensionOverflow { dim: usize, degree: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("timestamps must be strictly increasing (violated at index {index})")]
    NonMonotoneTime { index: usize },

    #[error("checkpoint time {time} is not on the fine grid")]
    OffGrid { time: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error("training diverged at checkpoint {step}: {source}")]
    Diverged {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("window average {value} is not positive (asset {asset}, window {window})")]
    NonPositiveAverage { asset: usize, window: usize, value: f64 },

    #[error("brute-force signature cost {cost:.3e} exceeds the limit {limit:.3e}; use a smaller degree")]
    CostGuard { cost: f64, limit: f64 },

    #[error("malformed parameter file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the failure came from non-finite numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::Diverged { .. })
    }
}
