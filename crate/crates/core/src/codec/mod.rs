//! The hyperprior codec: channel configs, model weights, the bitstream
//! container and image encode/decode.

mod bitstream;
mod config;
mod image_io;
mod pipeline;
mod transforms;
mod weights;

pub use bitstream::{
    write_container, BitstreamHeader, Container, FLAG_FULL_INT, HEADER_LEN, MAGIC, VERSION,
};
pub use config::{ChannelConfig, GA, GS, HA, HS};
pub use image_io::{crop, pad_replicate, raster_format, Raster};
pub use pipeline::{
    decode_image, encode_image, latent_dims, Codec, Encoded, QuantMode, Symbols, MAX_PIXELS,
    PAD_MULTIPLE,
};
pub use transforms::{
    bin_of, hyper_decode_params, run_float, run_int, sigma_thresholds, HyperParams,
};
pub use weights::{
    init_weights, load_weights, save_weights, LayerQuant, LayerWeights, ModelWeights, DEFAULT_S_MU,
    DEFAULT_S_SIGMA, HS_ACT_SCALE, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};

use thiserror::Error;

use crate::entropy::EntropyError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("bad magic, expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch")]
    Checksum,
    #[error("model id mismatch: file says {expected:016x}, contents hash to {found:016x}")]
    ModelIdMismatch { expected: u64, found: u64 },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("integer parameters missing: {0}")]
    QuantMissing(String),
    #[error("stream was produced by model {stream:016x}, loaded model is {model:016x}")]
    ModelMismatch { stream: u64, model: u64 },
    #[error("container declares {declared} bytes but holds {actual}")]
    StreamLength { declared: u64, actual: u64 },
    #[error("image dimensions {width}x{height} out of range")]
    DimensionOverflow { width: u64, height: u64 },
    #[error("corrupt stream: {0}")]
    Corrupt(&'static str),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
