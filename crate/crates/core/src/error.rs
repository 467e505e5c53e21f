use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid step kernel: {0}")]
    InvalidKernel(String),

    #[error("lattice coordinate {coord} does not fit in 16 bits")]
    CoordinateOverflow { coord: i64 },

    #[error("scenery value missing at site {0:?}")]
    MissingSite([i32; 4]),

    #[error("box with {states} states exceeds the limit of {limit}")]
    BoxTooLarge { states: usize, limit: usize },

    #[error("instance too large for exhaustive enumeration: {0}")]
    InstanceTooLarge(String),

    #[error("linear solve residual {residual:e} exceeds tolerance")]
    SingularSolve { residual: f64 },

    #[error("operation requires a centered gaussian scenery")]
    NotGaussian,
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
