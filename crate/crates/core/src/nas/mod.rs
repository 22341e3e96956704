//! Supernet channel search: search spaces, hypernetwork weight generation,
//! slimmable slicing, FLOPs, latency tables and constrained search.

mod latency;
mod search;
mod space;
mod supernet;

pub use latency::{
    device_label, lut_latency, measure_latency_table, median, space_latency_keys, LatencyKey,
    LatencyTable, MIN_REPETITIONS, TABLE_HEADER, WARMUP,
};
pub use search::{
    pareto_front, search, Candidate, Constraints, SearchOptions, SearchOutcome, SearchReport,
    Strategy, EXHAUSTIVE_LIMIT, POPULATION, TOURNAMENT,
};
pub use space::{flops, layer_flops, sample_sandwich, SearchSpace, SpaceLayer, SubConfig, Width};
pub use supernet::{
    grouped_indices, mix_banks, slice_submodel, slice_weight, LayerBanks, Linear, Supernet, BANKS,
};

use thiserror::Error;

use crate::codec::CodecError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum NasError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no latency record for {0}")]
    MissingLatency(String),
    #[error("{0} lies outside the measured out_c range")]
    OutsideHull(String),
    #[error("latency for {key} must be positive and finite, got {ms}")]
    BadLatency { key: String, ms: f64 },
    #[error("cannot measure layer kind of {0}")]
    Unmeasurable(String),
    #[error("{got} repetitions requested, at least {min} required")]
    TooFewRepetitions { got: usize, min: usize },
    #[error("a latency constraint needs a latency table")]
    MissingTable,
    #[error("latency table line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
