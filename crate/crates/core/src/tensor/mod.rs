//! Dense NCHW tensors and the deterministic kernel set the codec runs on.

mod activation;
mod conv;
mod quant;

pub use activation::{gelu_tanh, gelu_tanh_scalar, relu, relu6, softmax, GeluVariant};
pub use conv::{conv2d, deconv2d, output_hw};
pub use quant::{
    accumulator_bound_ok, quant_conv2d, quant_conv2d_wide, IntTensor, QuantScale, QuantTensor,
    Requant,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match dims {dims:?}")]
    DataLength { dims: [usize; 4], len: usize },
    #[error("layer {layer}: {what} (got {got:?}, expected {expected:?})")]
    Shape {
        layer: String,
        what: &'static str,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("softmax of an empty vector")]
    EmptySoftmax,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid quantization scale {0}")]
    BadScale(f32),
}

/// Round half away from zero, the single rounding rule used wherever a float
/// becomes an integer.
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    // f64::round already rounds half away from zero.
    v.round()
}

/// Dense (n, c, h, w) float tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self, TensorError> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                dims,
                len: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for y in 0..dims[2] {
                    for x in 0..dims[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    /// Plane of one (batch, channel) pair.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of channels `[start, start + count)`.
    pub fn channel_range(&self, start: usize, count: usize) -> Tensor {
        let [n, c, h, w] = self.dims;
        assert!(start + count <= c, "channel range out of bounds");
        let hw = h * w;
        let mut data = Vec::with_capacity(n * count * hw);
        for b in 0..n {
            let base = (b * c + start) * hw;
            data.extend_from_slice(&self.data[base..base + count * hw]);
        }
        Tensor {
            dims: [n, count, h, w],
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Deconv,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Deconv => "deconv",
        }
    }
}

impl std::str::FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conv" => Ok(LayerKind::Conv),
            "deconv" => Ok(LayerKind::Deconv),
            other => Err(format!("unknown layer kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Relu6,
}

/// Static description of one (transposed) convolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Conv,
            in_channels: in_c,
            out_channels: out_c,
            kernel,
            stride,
            activation: Activation::None,
        }
    }

    pub fn deconv(name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Deconv,
            ..Self::conv(name, in_c, out_c, kernel, stride)
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Weight dims, (out, in, k, k) for both kinds.
    pub fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub(crate) fn shape_error(
        &self,
        what: &'static str,
        got: &[usize],
        expected: &[usize],
    ) -> TensorError {
        TensorError::Shape {
            layer: self.name.clone(),
            what,
            got: got.to_vec(),
            expected: expected.to_vec(),
        }
    }
}
