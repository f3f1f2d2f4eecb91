use alloc::vec::Vec;

use crate::losses::LossReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("buffer of length {actual} does not match {expected} elements")]
    BufferLength { expected: usize, actual: usize },

    #[error("cannot downsample a {width}x{height} field")]
    CannotDownsample { width: usize, height: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),

    #[error("invalid depth value {value} at index {index}")]
    InvalidDepth { index: usize, value: f64 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("plane {index} is behind the camera")]
    PlaneBehindCamera { index: usize },

    #[error("no ground truth pixels")]
    NoGroundTruth,

    #[error("non-finite {term} loss")]
    NonFiniteLoss { term: &'static str },

    #[error("optimization diverged at iteration {iteration} ({term} loss is not finite)")]
    Diverged {
        iteration: usize,
        term: &'static str,
        trace: Vec<LossReport>,
    },
}
