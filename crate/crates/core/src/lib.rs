//! Learned image compression with a hyperprior, deterministic integer
//! entropy coding, supernet channel search and int8 tooling.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: conv / transposed conv kernels, activations and the int8 path.
//! * [`entropy`]: discretized Gaussian tables and the range coder.
//! * [`codec`]: model weights, the bitstream container and encode/decode.
//! * [`nas`]: hypernetwork weight generation, slicing, FLOPs, latency tables
//!   and constrained search.
//! * [`quant`]: LSQ primitives, calibration and int8 conversion.
//! * [`metrics`] and [`bench`]: quality metrics and the benchmark harness.

pub mod bench;
pub mod codec;
pub mod entropy;
pub mod metrics;
pub mod nas;
pub mod quant;
pub mod rng;
pub mod tensor;
