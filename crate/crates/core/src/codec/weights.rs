//! Model parameters and the "LICW" weight file.
//!
//! File layout (little-endian):
//!
//! ```text
//! "LICW" | version u8 | model_id u64 | body | crc32 u32
//! body   = 14 x u32 channel counts | s_mu f32 | s_sigma f32 | chunk count u32 | chunks
//! chunk  = name (u16 length + utf-8) | dtype u8 | ndim u8 | dims u32* |
//!          scale count u32 | scales f32* | data
//! ```
//!
//! `model_id` is the first 8 bytes (LE) of SHA-256 over `body`, and the CRC
//! covers every preceding byte of the file.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::{ChannelConfig, HS};
use super::CodecError;
use crate::rng::SplitMix64;
use crate::tensor::{
    accumulator_bound_ok, round_half_away, Activation, LayerSpec, QuantScale, QuantTensor, Requant,
    Tensor,
};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LICW";
pub const WEIGHTS_VERSION: u8 = 1;
/// Activation scale of the two hidden h_s layers: relu6 maps onto 0..=127.
pub const HS_ACT_SCALE: f32 = 6.0 / 127.0;
pub const DEFAULT_S_MU: f32 = 1.0 / 64.0;
pub const DEFAULT_S_SIGMA: f32 = 1.0 / 64.0;
/// Integer biases are clamped to +-2^30 so the accumulator bound holds.
const BIAS_LIMIT: f64 = (1u64 << 30) as f64;

const DTYPE_F32: u8 = 0;
const DTYPE_I8: u8 = 1;
const DTYPE_I32: u8 = 2;

/// Integer-path parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerQuant {
    /// int8 weights with one scale per output channel.
    pub weight: QuantTensor,
    pub bias: Vec<i32>,
    pub requant: Vec<Requant>,
    /// Scale of the int8 input activations.
    pub in_scale: f32,
    /// Scale of each output channel (uniform for int8 outputs).
    pub out_scales: Vec<f32>,
}

impl LayerQuant {
    /// Quantize float parameters: per-channel absmax weight scales, bias at
    /// `in_scale * w_scale`, requant ratio `in_scale * w_scale / out_scale`.
    pub fn derive(
        spec: &LayerSpec,
        weight: &Tensor,
        bias: &[f32],
        in_scale: f32,
        out_scales: Vec<f32>,
    ) -> Result<Self, CodecError> {
        let oc = spec.out_channels;
        if out_scales.len() != oc {
            return Err(CodecError::InvalidWeights(format!(
                "{}: {} output scales for {oc} channels",
                spec.name,
                out_scales.len()
            )));
        }
        let per = weight.len() / oc.max(1);
        let w_scales: Vec<f32> = (0..oc)
            .map(|c| {
                let m = weight.data()[c * per..(c + 1) * per]
                    .iter()
                    .fold(0f32, |m, v| m.max(v.abs()));
                if m > 0.0 {
                    m / 127.0
                } else {
                    1.0
                }
            })
            .collect();
        let wq = QuantTensor::quantize_per_channel(weight, &w_scales)?;
        let mut bq = Vec::with_capacity(oc);
        let mut requant = Vec::with_capacity(oc);
        for c in 0..oc {
            let acc_scale = in_scale as f64 * w_scales[c] as f64;
            bq.push(
                round_half_away(bias[c] as f64 / acc_scale).clamp(-BIAS_LIMIT, BIAS_LIMIT) as i32,
            );
            requant.push(Requant::from_ratio(acc_scale / out_scales[c] as f64)?);
        }
        Ok(Self {
            weight: wq,
            bias: bq,
            requant,
            in_scale,
            out_scales,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub quant: Option<LayerQuant>,
}

/// Every parameter of a codec model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ChannelConfig,
    /// Storage order of [`ChannelConfig::layer_specs`].
    pub layers: Vec<LayerWeights>,
    /// Per-channel z prior.
    pub z_mu: Vec<f32>,
    pub z_sigma: Vec<f32>,
    /// Dequantization scale of the integer mean output.
    pub s_mu: f32,
    /// Scale of the integer log-sigma output.
    pub s_sigma: f32,
}

/// Seed-initialized model: SplitMix64 stream, weights uniform with variance
/// gain / fan_in (gain 2 after rectifiers), biases uniform in +-0.01, unit
/// z-prior scales. h_s integer parameters are derived at the end.
pub fn init_weights(config: &ChannelConfig, seed: u64) -> Result<ModelWeights, CodecError> {
    config.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut layers = Vec::with_capacity(14);
    for spec in config.layer_specs() {
        let gain = if spec.activation == Activation::None {
            1.0
        } else {
            2.0
        };
        let bound = (3.0 * gain / spec.fan_in() as f64).sqrt();
        let weight = Tensor::from_fn(spec.weight_dims(), |_| {
            ((2.0 * rng.next_f64() - 1.0) * bound) as f32
        });
        let bias = (0..spec.out_channels)
            .map(|_| ((2.0 * rng.next_f64() - 1.0) * 0.01) as f32)
            .collect();
        layers.push(LayerWeights {
            spec,
            weight,
            bias,
            quant: None,
        });
    }
    let zc = config.hyper_channels();
    let mut model = ModelWeights {
        config: *config,
        layers,
        z_mu: vec![0.0; zc],
        z_sigma: vec![1.0; zc],
        s_mu: DEFAULT_S_MU,
        s_sigma: DEFAULT_S_SIGMA,
    };
    model.derive_hs_quant()?;
    Ok(model)
}

impl ModelWeights {
    pub fn layer(&self, name: &str) -> Option<&LayerWeights> {
        self.layers.iter().find(|l| l.spec.name == name)
    }

    /// Re-derive the h_s integer parameters from its float weights with the
    /// fixed scales: input 1.0 (integer hyper-latent), hidden 6/127, and the
    /// final layer's outputs at `s_mu` (means) and `s_sigma` (log-scales).
    pub fn derive_hs_quant(&mut self) -> Result<(), CodecError> {
        let m = self.config.latent_channels();
        let scales_in = [1.0, HS_ACT_SCALE, HS_ACT_SCALE];
        for (j, i) in HS.enumerate() {
            let layer = &self.layers[i];
            let out_scales = if j < 2 {
                vec![HS_ACT_SCALE; layer.spec.out_channels]
            } else {
                let mut v = vec![self.s_mu; m];
                v.extend(std::iter::repeat_n(self.s_sigma, m));
                v
            };
            let q = LayerQuant::derive(
                &layer.spec,
                &layer.weight,
                &layer.bias,
                scales_in[j],
                out_scales,
            )?;
            self.layers[i].quant = Some(q);
        }
        Ok(())
    }

    /// True when every layer carries integer parameters.
    pub fn is_full_int(&self) -> bool {
        self.layers.iter().all(|l| l.quant.is_some())
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        self.config.validate()?;
        let specs = self.config.layer_specs();
        if self.layers.len() != specs.len() {
            return Err(CodecError::InvalidWeights(format!(
                "{} layers, expected 14",
                self.layers.len()
            )));
        }
        for (layer, spec) in self.layers.iter().zip(&specs) {
            if &layer.spec != spec {
                return Err(CodecError::InvalidWeights(format!(
                    "layer {} does not match config",
                    spec.name
                )));
            }
            if layer.weight.dims() != spec.weight_dims() || layer.bias.len() != spec.out_channels {
                return Err(CodecError::InvalidWeights(format!(
                    "{}: parameter shape",
                    spec.name
                )));
            }
            if !layer.weight.all_finite() || layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(CodecError::InvalidWeights(format!(
                    "{}: non-finite parameter",
                    spec.name
                )));
            }
            if let Some(q) = &layer.quant {
                let oc = spec.out_channels;
                if q.weight.dims != spec.weight_dims()
                    || q.bias.len() != oc
                    || q.requant.len() != oc
                    || q.out_scales.len() != oc
                {
                    return Err(CodecError::InvalidWeights(format!(
                        "{}: integer parameter shape",
                        spec.name
                    )));
                }
                let scale_ok = |s: f32| s > 0.0 && s.is_finite();
                if !scale_ok(q.in_scale) || !q.out_scales.iter().all(|&s| scale_ok(s)) {
                    return Err(CodecError::InvalidWeights(format!(
                        "{}: activation scale",
                        spec.name
                    )));
                }
                if q.requant
                    .iter()
                    .any(|r| r.multiplier < (1 << 30) || r.shift > 126)
                {
                    return Err(CodecError::InvalidWeights(format!(
                        "{}: requant multiplier",
                        spec.name
                    )));
                }
                if !accumulator_bound_ok(spec, &q.bias) {
                    return Err(CodecError::InvalidWeights(format!(
                        "{}: int32 accumulator may overflow",
                        spec.name
                    )));
                }
            }
        }
        if self.layers[HS].iter().any(|l| l.quant.is_none()) {
            return Err(CodecError::InvalidWeights(
                "h_s integer parameters missing".into(),
            ));
        }
        let zc = self.config.hyper_channels();
        if self.z_mu.len() != zc || self.z_sigma.len() != zc {
            return Err(CodecError::InvalidWeights("z prior length".into()));
        }
        if self.z_mu.iter().any(|v| !v.is_finite())
            || self.z_sigma.iter().any(|&s| !(s > 0.0 && s.is_finite()))
        {
            return Err(CodecError::InvalidWeights(
                "z prior requires finite means and sigma > 0".into(),
            ));
        }
        if !(self.s_mu > 0.0 && self.s_mu.is_finite())
            || !(self.s_sigma > 0.0 && self.s_sigma.is_finite())
        {
            return Err(CodecError::InvalidWeights(
                "s_mu and s_sigma must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Canonical serialization of all parameters (the file body).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for c in self.config.to_array() {
            put_u32(&mut out, c as u32);
        }
        put_f32(&mut out, self.s_mu);
        put_f32(&mut out, self.s_sigma);
        let mut chunks: Vec<Chunk> = Vec::new();
        for l in &self.layers {
            let name = &l.spec.name;
            chunks.push(Chunk::f32(
                format!("{name}.weight"),
                &l.weight.dims(),
                &[],
                l.weight.data(),
            ));
            chunks.push(Chunk::f32(
                format!("{name}.bias"),
                &[l.bias.len()],
                &[],
                &l.bias,
            ));
            if let Some(q) = &l.quant {
                let w_scales = match &q.weight.scale {
                    QuantScale::PerChannel(v) => v.clone(),
                    QuantScale::PerTensor(s) => vec![*s; l.spec.out_channels],
                };
                chunks.push(Chunk {
                    name: format!("{name}.qweight"),
                    dtype: DTYPE_I8,
                    dims: q.weight.dims.to_vec(),
                    scales: w_scales,
                    data: q.weight.data.iter().map(|&v| v as u8).collect(),
                });
                chunks.push(Chunk::i32(
                    format!("{name}.qbias"),
                    &[q.bias.len()],
                    &[],
                    &q.bias,
                ));
                let rq: Vec<i32> = q
                    .requant
                    .iter()
                    .flat_map(|r| [r.multiplier, r.shift as i32])
                    .collect();
                let mut scales = vec![q.in_scale];
                scales.extend_from_slice(&q.out_scales);
                chunks.push(Chunk::i32(
                    format!("{name}.requant"),
                    &[q.requant.len(), 2],
                    &scales,
                    &rq,
                ));
            }
        }
        chunks.push(Chunk::f32(
            "z_prior.mu".into(),
            &[self.z_mu.len()],
            &[],
            &self.z_mu,
        ));
        chunks.push(Chunk::f32(
            "z_prior.sigma".into(),
            &[self.z_sigma.len()],
            &[],
            &self.z_sigma,
        ));
        put_u32(&mut out, chunks.len() as u32);
        for c in &chunks {
            c.write(&mut out);
        }
        out
    }

    /// 64-bit content hash: first 8 bytes of SHA-256 of the canonical bytes.
    pub fn model_id(&self) -> u64 {
        id_of(&self.canonical_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body = self.canonical_bytes();
        let mut out = Vec::with_capacity(body.len() + 17);
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.push(WEIGHTS_VERSION);
        out.extend_from_slice(&id_of(&body).to_le_bytes());
        out.extend_from_slice(&body);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < 4 || &bytes[..4] != WEIGHTS_MAGIC {
            return Err(CodecError::BadMagic { expected: "LICW" });
        }
        if bytes.len() < 4 + 1 + 8 + 4 {
            return Err(CodecError::Truncated("weight file header"));
        }
        if bytes[4] != WEIGHTS_VERSION {
            return Err(CodecError::UnsupportedVersion(bytes[4]));
        }
        let (payload, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(payload) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(CodecError::Checksum);
        }
        let stored_id = u64::from_le_bytes(payload[5..13].try_into().unwrap());
        let body = &payload[13..];
        let model = parse_body(body)?;
        let id = id_of(body);
        if id != stored_id {
            return Err(CodecError::ModelIdMismatch {
                expected: stored_id,
                found: id,
            });
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Free-function spelling of [`ModelWeights::load`].
pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights, CodecError> {
    ModelWeights::load(path)
}

pub fn save_weights(model: &ModelWeights, path: impl AsRef<Path>) -> Result<(), CodecError> {
    model.save(path)
}

fn id_of(body: &[u8]) -> u64 {
    let digest = Sha256::digest(body);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Chunk {
    name: String,
    dtype: u8,
    dims: Vec<usize>,
    scales: Vec<f32>,
    data: Vec<u8>,
}

impl Chunk {
    fn f32(name: String, dims: &[usize], scales: &[f32], data: &[f32]) -> Self {
        Self {
            name,
            dtype: DTYPE_F32,
            dims: dims.to_vec(),
            scales: scales.to_vec(),
            data: data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn i32(name: String, dims: &[usize], scales: &[f32], data: &[i32]) -> Self {
        Self {
            name,
            dtype: DTYPE_I32,
            dims: dims.to_vec(),
            scales: scales.to_vec(),
            data: data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.name.len() as u16).to_le_bytes());
        out.extend_from_slice(self.name.as_bytes());
        out.push(self.dtype);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            put_u32(out, d as u32);
        }
        put_u32(out, self.scales.len() as u32);
        for &s in &self.scales {
            put_f32(out, s);
        }
        out.extend_from_slice(&self.data);
    }

    fn as_f32(&self) -> Result<Vec<f32>, CodecError> {
        self.expect_dtype(DTYPE_F32)?;
        Ok(self
            .data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn as_i32(&self) -> Result<Vec<i32>, CodecError> {
        self.expect_dtype(DTYPE_I32)?;
        Ok(self
            .data
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn expect_dtype(&self, dtype: u8) -> Result<(), CodecError> {
        if self.dtype != dtype {
            return Err(CodecError::InvalidWeights(format!(
                "{}: unexpected dtype tag {}",
                self.name, self.dtype
            )));
        }
        Ok(())
    }

    fn expect_dims(&self, dims: &[usize]) -> Result<(), CodecError> {
        if self.dims != dims {
            return Err(CodecError::InvalidWeights(format!(
                "{}: dims {:?}, expected {:?}",
                self.name, self.dims, dims
            )));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CodecError::Truncated("weight file body"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn chunk(&mut self) -> Result<Chunk, CodecError> {
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| CodecError::InvalidWeights("chunk name is not utf-8".into()))?
            .to_string();
        let dtype = self.u8()?;
        let width = match dtype {
            DTYPE_F32 | DTYPE_I32 => 4,
            DTYPE_I8 => 1,
            t => {
                return Err(CodecError::InvalidWeights(format!(
                    "{name}: unknown dtype tag {t}"
                )))
            }
        };
        let ndim = self.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(self.u32()? as usize);
        }
        let n_scales = self.u32()? as usize;
        let mut scales = Vec::with_capacity(n_scales.min(1 << 16));
        for _ in 0..n_scales {
            scales.push(self.f32()?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(width))
            .ok_or_else(|| CodecError::InvalidWeights(format!("{name}: dims overflow")))?;
        let data = self.take(count)?.to_vec();
        Ok(Chunk {
            name,
            dtype,
            dims,
            scales,
            data,
        })
    }
}

fn parse_body(body: &[u8]) -> Result<ModelWeights, CodecError> {
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    let mut counts = [0usize; 14];
    for c in counts.iter_mut() {
        *c = r.u32()? as usize;
    }
    let config = ChannelConfig::from_array(counts);
    config.validate()?;
    let s_mu = r.f32()?;
    let s_sigma = r.f32()?;
    let n = r.u32()? as usize;
    let mut chunks = BTreeMap::new();
    for _ in 0..n {
        let c = r.chunk()?;
        if chunks.contains_key(&c.name) {
            return Err(CodecError::InvalidWeights(format!(
                "duplicate chunk {}",
                c.name
            )));
        }
        chunks.insert(c.name.clone(), c);
    }
    if r.pos != body.len() {
        return Err(CodecError::InvalidWeights(format!(
            "{} unparsed bytes",
            body.len() - r.pos
        )));
    }
    let mut take = |name: String| {
        chunks
            .remove(&name)
            .ok_or_else(|| CodecError::InvalidWeights(format!("missing chunk {name}")))
    };

    let mut layers = Vec::with_capacity(14);
    for spec in config.layer_specs() {
        let name = spec.name.clone();
        let oc = spec.out_channels;
        let w = take(format!("{name}.weight"))?;
        w.expect_dims(&spec.weight_dims())?;
        let weight = Tensor::new(spec.weight_dims(), w.as_f32()?)?;
        let b = take(format!("{name}.bias"))?;
        b.expect_dims(&[oc])?;
        let bias = b.as_f32()?;
        let quant = match take(format!("{name}.qweight")) {
            Err(_) => None,
            Ok(qw) => {
                qw.expect_dtype(DTYPE_I8)?;
                qw.expect_dims(&spec.weight_dims())?;
                let data = qw.data.iter().map(|&v| v as i8).collect();
                let wq = QuantTensor::new(
                    spec.weight_dims(),
                    data,
                    QuantScale::PerChannel(qw.scales.clone()),
                )?;
                if qw.scales.len() != oc {
                    return Err(CodecError::InvalidWeights(format!(
                        "{name}: weight scale count"
                    )));
                }
                let qb = take(format!("{name}.qbias"))?;
                qb.expect_dims(&[oc])?;
                let rq = take(format!("{name}.requant"))?;
                rq.expect_dims(&[oc, 2])?;
                if rq.scales.len() != oc + 1 {
                    return Err(CodecError::InvalidWeights(format!(
                        "{name}: requant scale block"
                    )));
                }
                let raw = rq.as_i32()?;
                let requant = raw
                    .chunks_exact(2)
                    .map(|p| {
                        u8::try_from(p[1])
                            .map(|shift| Requant {
                                multiplier: p[0],
                                shift,
                            })
                            .map_err(|_| {
                                CodecError::InvalidWeights(format!("{name}: requant shift"))
                            })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(LayerQuant {
                    weight: wq,
                    bias: qb.as_i32()?,
                    requant,
                    in_scale: rq.scales[0],
                    out_scales: rq.scales[1..].to_vec(),
                })
            }
        };
        layers.push(LayerWeights {
            spec,
            weight,
            bias,
            quant,
        });
    }
    let zc = config.hyper_channels();
    let zm = take("z_prior.mu".into())?;
    zm.expect_dims(&[zc])?;
    let zs = take("z_prior.sigma".into())?;
    zs.expect_dims(&[zc])?;
    let z_mu = zm.as_f32()?;
    let z_sigma = zs.as_f32()?;
    if let Some(name) = chunks.keys().next() {
        return Err(CodecError::InvalidWeights(format!("unknown chunk {name}")));
    }
    Ok(ModelWeights {
        config,
        layers,
        z_mu,
        z_sigma,
        s_mu,
        s_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ChannelConfig {
        ChannelConfig {
            ga: [4, 5, 6, 8],
            ha: [6, 5, 4],
            hs: [5, 6, 8],
            gs: [8, 6, 5, 3],
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_weights(&small(), 7).unwrap();
        let b = init_weights(&small(), 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.model_id(), init_weights(&small(), 8).unwrap().model_id());
        a.validate().unwrap();
    }

    #[test]
    fn bytes_round_trip() {
        let m = init_weights(&small(), 3).unwrap();
        let bytes = m.to_bytes();
        let back = ModelWeights::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn damaged_files_rejected() {
        let bytes = init_weights(&small(), 3).unwrap().to_bytes();
        for cut in [0, 3, 10, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                ModelWeights::from_bytes(&bytes[..cut]).is_err(),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            ModelWeights::from_bytes(&bad),
            Err(CodecError::BadMagic { .. })
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            ModelWeights::from_bytes(&bad),
            Err(CodecError::UnsupportedVersion(9))
        ));
        let mut bad = bytes.clone();
        bad[100] ^= 0x40;
        assert!(matches!(
            ModelWeights::from_bytes(&bad),
            Err(CodecError::Checksum)
        ));
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        let mut m = init_weights(&small(), 3).unwrap();
        m.z_sigma[1] = 0.0;
        assert!(ModelWeights::from_bytes(&m.to_bytes()).is_err());
    }

    #[test]
    fn requant_matches_scales() {
        let m = init_weights(&small(), 5).unwrap();
        for l in &m.layers[HS] {
            let q = l.quant.as_ref().unwrap();
            for (c, r) in q.requant.iter().enumerate() {
                let want = q.in_scale as f64 * q.weight.scale.for_channel(c) as f64
                    / q.out_scales[c] as f64;
                assert!((r.ratio() / want - 1.0).abs() < 1e-9);
            }
        }
    }
}
