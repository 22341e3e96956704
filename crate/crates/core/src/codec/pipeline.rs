//! Encode and decode, per image.
//!
//! Encoder: y = g_a(x), z = h_a(y), z_hat = clamp(round(z), -128, 127).
//! z_hat is coded against per-channel Gaussians, (mu, sigma bins) come from
//! the integer h_s, and the latent is sent as residuals r = round(y - mu)
//! against zero-mean tables. The decoder mirrors this and reconstructs
//! y_hat = r + mu, x_hat = clamp(g_s(y_hat), 0, 1).

use std::str::FromStr;
use std::sync::Arc;

use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use super::bitstream::{write_container, BitstreamHeader, Container, FLAG_FULL_INT, VERSION};
use super::config::{ChannelConfig, GA, GS, HA};
use super::image_io::{crop, pad_replicate, Raster};
use super::transforms::{hyper_decode_params, run_float, run_int, sigma_thresholds, HyperParams};
use super::weights::{LayerWeights, ModelWeights};
use super::CodecError;
use crate::entropy::{
    bypass_encode, escape_index, sigma_to_bin, values_to_symbols, BypassReader, CdfTable,
    RangeDecoder, RangeEncoder, ScaleTable, BYPASS_BITS,
};
use crate::tensor::{round_half_away, IntTensor, Tensor};

/// Spatial padding multiple: four stride-2 stages in g_a and two in h_a.
pub const PAD_MULTIPLE: usize = 64;
/// Largest padded image area accepted by the decoder.
pub const MAX_PIXELS: u64 = 1 << 28;
const RESIDUAL_LIMIT: f64 = 32767.0;

/// Which transforms run on the int8 path. h_s is always integer, so `Float`
/// and `HsInt` behave identically; `FullInt` also runs g_a, h_a and g_s as
/// int8 and needs a calibrated model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantMode {
    Float,
    #[default]
    HsInt,
    FullInt,
}

impl QuantMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantMode::Float => "float",
            QuantMode::HsInt => "hs-int",
            QuantMode::FullInt => "full-int",
        }
    }
}

impl FromStr for QuantMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float" => Ok(QuantMode::Float),
            "hs-int" => Ok(QuantMode::HsInt),
            "full-int" => Ok(QuantMode::FullInt),
            other => Err(format!("unknown quantization mode {other:?}")),
        }
    }
}

/// The integer symbols carried by a stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbols {
    pub z_dims: [usize; 4],
    /// Quantized hyper-latent, channel-major.
    pub z_hat: Vec<i32>,
    pub y_dims: [usize; 4],
    /// round(y - mu), channel-major.
    pub residual: Vec<i32>,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub symbols: Symbols,
    /// Sum of -log2 of the quantized table probability over every coded
    /// symbol of both latents (escape symbols included, bypass bits not).
    pub ideal_bits: f64,
    pub escapes: usize,
}

/// A model prepared for coding: shared weights, scale tables and an optional
/// private thread pool. Cheap to clone.
#[derive(Clone)]
pub struct Codec {
    model: Arc<ModelWeights>,
    model_id: u64,
    scales: Arc<ScaleTable>,
    thresholds: Arc<Vec<i32>>,
    mode: QuantMode,
    pool: Option<Arc<ThreadPool>>,
}

impl std::fmt::Debug for Codec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Codec")
            .field("model_id", &format_args!("{:016x}", self.model_id))
            .field("mode", &self.mode)
            .field(
                "threads",
                &self.pool.as_ref().map(|p| p.current_num_threads()),
            )
            .finish()
    }
}

impl Codec {
    pub fn new(model: ModelWeights) -> Result<Self, CodecError> {
        Self::from_shared(Arc::new(model))
    }

    pub fn from_shared(model: Arc<ModelWeights>) -> Result<Self, CodecError> {
        model.validate()?;
        let scales = Arc::new(ScaleTable::new());
        let thresholds = Arc::new(sigma_thresholds(model.s_sigma, &scales));
        Ok(Self {
            model_id: model.model_id(),
            model,
            scales,
            thresholds,
            mode: QuantMode::default(),
            pool: None,
        })
    }

    pub fn with_mode(mut self, mode: QuantMode) -> Result<Self, CodecError> {
        if mode == QuantMode::FullInt && !self.model.is_full_int() {
            return Err(CodecError::QuantMissing(
                "full-int mode needs a calibrated model".into(),
            ));
        }
        self.mode = mode;
        Ok(self)
    }

    /// Run every call on a private pool of `threads` workers.
    pub fn with_threads(mut self, threads: usize) -> Result<Self, CodecError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| CodecError::Config(format!("thread pool: {e}")))?;
        self.pool = Some(Arc::new(pool));
        Ok(self)
    }

    pub fn model(&self) -> &ModelWeights {
        &self.model
    }

    pub fn shared_model(&self) -> Arc<ModelWeights> {
        Arc::clone(&self.model)
    }

    pub fn model_id(&self) -> u64 {
        self.model_id
    }

    pub fn mode(&self) -> QuantMode {
        self.mode
    }

    pub fn scale_table(&self) -> &ScaleTable {
        &self.scales
    }

    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    fn transform(&self, layers: &[LayerWeights], x: &Tensor) -> Result<Tensor, CodecError> {
        match self.mode {
            QuantMode::FullInt => run_int(layers, x),
            _ => run_float(layers, x),
        }
    }

    /// Entropy parameters for a decoded hyper-latent.
    pub fn hyper_params(&self, z_hat: &IntTensor) -> Result<HyperParams, CodecError> {
        self.run(|| hyper_decode_params(z_hat, &self.model, &self.thresholds))
    }

    fn z_offsets(&self) -> Vec<i32> {
        self.model
            .z_mu
            .iter()
            .map(|&m| round_half_away(m as f64).clamp(i32::MIN as f64, i32::MAX as f64) as i32)
            .collect()
    }

    fn z_tables(&self) -> Vec<&CdfTable> {
        self.model
            .z_sigma
            .iter()
            .map(|&s| self.scales.table(sigma_to_bin(s as f64, &self.scales)))
            .collect()
    }

    pub fn encode(&self, x: &Tensor) -> Result<Vec<u8>, CodecError> {
        Ok(self.encode_with_symbols(x)?.bytes)
    }

    pub fn encode_raster(&self, r: &Raster) -> Result<Vec<u8>, CodecError> {
        self.encode(&r.to_tensor())
    }

    pub fn encode_with_symbols(&self, x: &Tensor) -> Result<Encoded, CodecError> {
        self.run(|| self.encode_inner(x))
    }

    fn encode_inner(&self, x: &Tensor) -> Result<Encoded, CodecError> {
        let [n, c, h, w] = x.dims();
        if n != 1 || c != 3 || h == 0 || w == 0 {
            return Err(CodecError::Image(format!(
                "expected a (1, 3, h, w) image, got {:?}",
                x.dims()
            )));
        }
        if h > u32::MAX as usize || w > u32::MAX as usize {
            return Err(CodecError::DimensionOverflow {
                width: w as u64,
                height: h as u64,
            });
        }
        let xp = pad_replicate(x, PAD_MULTIPLE);
        let model = &*self.model;
        let y = self.transform(&model.layers[GA], &xp)?;
        let z = self.transform(&model.layers[HA], &y)?;
        let z_hat: Vec<i32> = z
            .data()
            .iter()
            .map(|&v| round_half_away(v as f64).clamp(-128.0, 127.0) as i32)
            .collect();
        let z_int = IntTensor {
            dims: z.dims(),
            data: z_hat,
        };
        let hyper = hyper_decode_params(&z_int, model, &self.thresholds)?;
        let residual: Vec<i32> = y
            .data()
            .iter()
            .zip(hyper.mu.data())
            .map(|(&yv, &mu)| {
                round_half_away(yv as f64 - mu as f64).clamp(-RESIDUAL_LIMIT - 1.0, RESIDUAL_LIMIT)
                    as i32
            })
            .collect();

        let a_max = self.scales.a_max();
        let z_plane = z_int.dims[2] * z_int.dims[3];
        let offsets = self.z_offsets();
        let z_tables = self.z_tables();
        let z_values: Vec<i32> = z_int
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v - offsets[i / z_plane])
            .collect();
        let z_sym = values_to_symbols(&z_values, a_max);
        let y_sym = values_to_symbols(&residual, a_max);
        let y_table = |i: usize| self.scales.table(hyper.bins[i] as usize);
        let z_table = |i: usize| z_tables[i / z_plane];

        let (z_res, y_res) = rayon::join(
            || encode_stream(&z_sym.symbols, z_table),
            || encode_stream(&y_sym.symbols, y_table),
        );
        let (z_bytes, z_bits) = z_res?;
        let (y_bytes, y_bits) = y_res?;
        let mut escaped = z_sym.escaped;
        escaped.extend_from_slice(&y_sym.escaped);
        let bypass = bypass_encode(&escaped, BYPASS_BITS)?;

        let header = BitstreamHeader {
            version: VERSION,
            flags: if self.mode == QuantMode::FullInt {
                FLAG_FULL_INT
            } else {
                0
            },
            width: w as u32,
            height: h as u32,
            model_id: self.model_id,
            z_stream_len: stream_len(&z_bytes)?,
            y_stream_len: stream_len(&y_bytes)?,
            bypass_len: stream_len(&bypass)?,
        };
        Ok(Encoded {
            bytes: write_container(&header, &z_bytes, &y_bytes, &bypass),
            symbols: Symbols {
                z_dims: z_int.dims,
                z_hat: z_int.data,
                y_dims: y.dims(),
                residual,
            },
            ideal_bits: z_bits + y_bits,
            escapes: escaped.len(),
        })
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Tensor, CodecError> {
        Ok(self.decode_with_symbols(bytes)?.0)
    }

    pub fn decode_raster(&self, bytes: &[u8]) -> Result<Raster, CodecError> {
        Raster::from_tensor(&self.decode(bytes)?)
    }

    pub fn decode_with_symbols(&self, bytes: &[u8]) -> Result<(Tensor, Symbols), CodecError> {
        self.run(|| self.decode_inner(bytes))
    }

    fn decode_inner(&self, bytes: &[u8]) -> Result<(Tensor, Symbols), CodecError> {
        let c = Container::parse(bytes)?;
        let hdr = c.header;
        if hdr.model_id != self.model_id {
            return Err(CodecError::ModelMismatch {
                stream: hdr.model_id,
                model: self.model_id,
            });
        }
        if hdr.flags & !FLAG_FULL_INT != 0 {
            return Err(CodecError::Corrupt("unknown header flags"));
        }
        let full_int = hdr.flags & FLAG_FULL_INT != 0;
        if full_int && !self.model.is_full_int() {
            return Err(CodecError::QuantMissing(
                "stream was coded in full-int mode".into(),
            ));
        }
        let (w, h) = (hdr.width as usize, hdr.height as usize);
        if w == 0 || h == 0 {
            return Err(CodecError::Corrupt("zero image dimension"));
        }
        if (h.div_ceil(PAD_MULTIPLE) * w.div_ceil(PAD_MULTIPLE)) as u64
            * (PAD_MULTIPLE * PAD_MULTIPLE) as u64
            > MAX_PIXELS
        {
            return Err(CodecError::DimensionOverflow {
                width: w as u64,
                height: h as u64,
            });
        }
        let model = &*self.model;
        let zc = model.config.hyper_channels();
        let (y_dims, z_dims) = latent_dims(&model.config, w, h);
        let z_plane = z_dims[2] * z_dims[3];
        let a_max = self.scales.a_max();
        let esc = escape_index(a_max);
        let mut bypass = BypassReader::new(c.bypass, BYPASS_BITS);

        let offsets = self.z_offsets();
        let z_tables = self.z_tables();
        let mut dec = RangeDecoder::new(c.z_stream)?;
        let mut z_hat = Vec::with_capacity(zc * z_plane);
        for i in 0..zc * z_plane {
            let s = dec.decode(z_tables[i / z_plane])?;
            let v = if s == esc {
                bypass.next_value()?
            } else {
                s as i32 - a_max as i32
            };
            let zv = v as i64 + offsets[i / z_plane] as i64;
            if !(-128..=127).contains(&zv) {
                return Err(CodecError::Corrupt("hyper-latent outside the int8 range"));
            }
            z_hat.push(zv as i32);
        }
        dec.finish()?;
        let z_int = IntTensor {
            dims: z_dims,
            data: z_hat,
        };
        let hyper = hyper_decode_params(&z_int, model, &self.thresholds)?;

        let count: usize = y_dims.iter().product();
        let mut dec = RangeDecoder::new(c.y_stream)?;
        let mut residual = Vec::with_capacity(count);
        for i in 0..count {
            let s = dec.decode(self.scales.table(hyper.bins[i] as usize))?;
            residual.push(if s == esc {
                bypass.next_value()?
            } else {
                s as i32 - a_max as i32
            });
        }
        dec.finish()?;
        if !bypass.is_exhausted() {
            return Err(CodecError::Corrupt("bypass stream length"));
        }
        let y_hat = Tensor::new(
            y_dims,
            residual
                .iter()
                .zip(hyper.mu.data())
                .map(|(&r, &mu)| r as f32 + mu)
                .collect(),
        )?;
        let x_hat = if full_int {
            run_int(&model.layers[GS], &y_hat)?
        } else {
            run_float(&model.layers[GS], &y_hat)?
        };
        let x_hat = crop(&x_hat.map(|v| v.clamp(0.0, 1.0)), h, w);
        Ok((
            x_hat,
            Symbols {
                z_dims,
                z_hat: z_int.data,
                y_dims,
                residual,
            },
        ))
    }
}

/// Dims of y and z for an image of `width` x `height`: the padded size
/// divided by 16 and by 64.
pub fn latent_dims(
    config: &ChannelConfig,
    width: usize,
    height: usize,
) -> ([usize; 4], [usize; 4]) {
    let hp = height.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE;
    let wp = width.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE;
    (
        [1, config.latent_channels(), hp / 16, wp / 16],
        [1, config.hyper_channels(), hp / 64, wp / 64],
    )
}

fn encode_stream<'t>(
    symbols: &[usize],
    table_for: impl Fn(usize) -> &'t CdfTable,
) -> Result<(Vec<u8>, f64), CodecError> {
    let mut enc = RangeEncoder::new();
    let mut bits = 0.0;
    for (i, &s) in symbols.iter().enumerate() {
        let t = table_for(i);
        bits += t.cost_bits(s);
        enc.encode(t, s)?;
    }
    Ok((enc.finish(), bits))
}

fn stream_len(s: &[u8]) -> Result<u32, CodecError> {
    u32::try_from(s.len()).map_err(|_| CodecError::DimensionOverflow {
        width: s.len() as u64,
        height: 1,
    })
}

/// One-shot encode with a fresh [`Codec`].
pub fn encode_image(x: &Tensor, model: &ModelWeights) -> Result<Vec<u8>, CodecError> {
    Codec::new(model.clone())?.encode(x)
}

/// One-shot decode with a fresh [`Codec`].
pub fn decode_image(bytes: &[u8], model: &ModelWeights) -> Result<Tensor, CodecError> {
    Codec::new(model.clone())?.decode(bytes)
}
