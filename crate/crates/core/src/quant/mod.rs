//! Learned step size quantization and post-training int8 conversion.

mod calibration;
mod convert;
mod lsq;

pub use calibration::{
    calibrate, CalibPolicy, CalibrationStats, ACTIVATION_PERCENTILE, HIST_BINS, MIN_STEP,
};
pub use convert::{collect_stats, convert_to_int8, convert_to_int8_with, sqnr_db, ModelStats};
pub use lsq::{lsq_grad_input, lsq_grad_step, lsq_quantize, QN, QP};

use thiserror::Error;

use crate::codec::CodecError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("step size must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("no values observed")]
    EmptyStats,
    #[error("percentile must be in (0, 100], got {0}")]
    BadPercentile(f64),
    #[error("calibration needs at least one image")]
    NoCalibrationData,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
