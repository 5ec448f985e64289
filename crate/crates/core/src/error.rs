use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("depth {0} out of range 1..=20")]
    DepthOutOfRange(u32),
    #[error("no valid split at level {level} (parent {parent} has no unclaimed child)")]
    SplitFailed { level: u32, parent: usize },
    #[error("series diverged: {0}")]
    Divergence(String),
    #[error("operator is zero but input is not")]
    DegenerateOperator,
    #[error("step {step} exceeds 1/lambda_max for bound {bound}")]
    StepTooLarge { step: f64, bound: f64 },
    #[error("malformed bitstream: {0}")]
    Bitstream(String),
    #[error("geometry digest mismatch")]
    GeometryMismatch,
}

pub type Result<T> = core::result::Result<T, Error>;
