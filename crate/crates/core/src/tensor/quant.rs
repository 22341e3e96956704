//! Symmetric int8 inference: int8 activations (per-tensor scale), int8
//! weights (per-output-channel scale), int32 accumulation, fixed-point
//! requantization. Every step is exact integer arithmetic, so results do not
//! depend on summation order or thread count.

use super::conv::{check_shapes, run_tasks, Plan};
use super::{round_half_away, Activation, LayerSpec, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub enum QuantScale {
    PerTensor(f32),
    PerChannel(Vec<f32>),
}

impl QuantScale {
    pub fn for_channel(&self, c: usize) -> f32 {
        match self {
            QuantScale::PerTensor(s) => *s,
            QuantScale::PerChannel(v) => v[c],
        }
    }

    fn validate(&self) -> Result<(), TensorError> {
        let bad = match self {
            QuantScale::PerTensor(s) => (!(*s > 0.0 && s.is_finite())).then_some(*s),
            QuantScale::PerChannel(v) => v.iter().copied().find(|s| !(*s > 0.0 && s.is_finite())),
        };
        match bad {
            Some(s) => Err(TensorError::BadScale(s)),
            None => Ok(()),
        }
    }
}

/// int8 tensor with zero point 0; value = int * scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub dims: [usize; 4],
    pub data: Vec<i8>,
    pub scale: QuantScale,
}

impl QuantTensor {
    pub fn new(dims: [usize; 4], data: Vec<i8>, scale: QuantScale) -> Result<Self, TensorError> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                dims,
                len: data.len(),
            });
        }
        scale.validate()?;
        Ok(Self { dims, data, scale })
    }

    /// Quantize with a per-tensor scale (round half away, saturate).
    pub fn quantize(t: &super::Tensor, scale: f32) -> Result<Self, TensorError> {
        let inv = 1.0 / scale as f64;
        let data = t
            .data()
            .iter()
            .map(|&v| round_half_away(v as f64 * inv).clamp(-128.0, 127.0) as i8)
            .collect();
        Self::new(t.dims(), data, QuantScale::PerTensor(scale))
    }

    /// Quantize a (out, in, k, k) weight tensor with one scale per output channel.
    pub fn quantize_per_channel(t: &super::Tensor, scales: &[f32]) -> Result<Self, TensorError> {
        let per = t.len() / t.dims()[0].max(1);
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                round_half_away(v as f64 / scales[i / per] as f64).clamp(-128.0, 127.0) as i8
            })
            .collect();
        Self::new(t.dims(), data, QuantScale::PerChannel(scales.to_vec()))
    }

    pub fn dequantize(&self) -> super::Tensor {
        // Per-channel scales belong to weights, whose channel is the leading dim.
        let per = (self.data.len() / self.dims[0].max(1)).max(1);
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &q)| {
                let c = match &self.scale {
                    QuantScale::PerTensor(_) => 0,
                    QuantScale::PerChannel(_) => i / per,
                };
                q as f32 * self.scale.for_channel(c)
            })
            .collect();
        super::Tensor::new(self.dims, data).expect("dims unchanged")
    }
}

/// int32 tensor, used for accumulator-width outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor {
    pub dims: [usize; 4],
    pub data: Vec<i32>,
}

/// Fixed-point multiplier `multiplier / 2^shift`, multiplier in [2^30, 2^31).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requant {
    pub multiplier: i32,
    pub shift: u8,
}

impl Requant {
    /// Closest representation of a positive real ratio; relative error < 2^-30.
    pub fn from_ratio(ratio: f64) -> Result<Self, TensorError> {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(TensorError::BadScale(ratio as f32));
        }
        let (frac, exp) = libm::frexp(ratio);
        let mut m = (frac * (1u64 << 31) as f64).round() as i64;
        let mut e = exp;
        if m == 1 << 31 {
            m = 1 << 30;
            e += 1;
        }
        let shift = 31 - e;
        if !(0..=126).contains(&shift) {
            return Err(TensorError::BadScale(ratio as f32));
        }
        Ok(Self {
            multiplier: m as i32,
            shift: shift as u8,
        })
    }

    pub fn ratio(self) -> f64 {
        self.multiplier as f64 / 2f64.powi(self.shift as i32)
    }

    /// round_half_away(v * m / 2^shift), exact.
    #[inline]
    pub fn apply(self, v: i64) -> i64 {
        let p = v as i128 * self.multiplier as i128;
        let r = if self.shift == 0 {
            p
        } else {
            let half = 1i128 << (self.shift - 1);
            if p >= 0 {
                (p + half) >> self.shift
            } else {
                -((-p + half) >> self.shift)
            }
        };
        r.clamp(i64::MIN as i128, i64::MAX as i128) as i64
    }
}

/// True when no accumulator of this layer can leave i32:
/// in_c * k^2 * 128 * 128 + max|bias| < 2^31.
pub fn accumulator_bound_ok(spec: &LayerSpec, bias: &[i32]) -> bool {
    let products = spec.fan_in() as i64 * 128 * 128;
    let b = bias.iter().map(|&v| (v as i64).abs()).max().unwrap_or(0);
    products + b < (1i64 << 31)
}

fn accumulate(
    x: &QuantTensor,
    w: &QuantTensor,
    b: &[i32],
    requant: &[Requant],
    spec: &LayerSpec,
    mut store: impl FnMut(usize, usize, i64),
) -> Result<[usize; 4], TensorError> {
    let out_dims = check_shapes(x.dims, w.dims, b.len(), spec)?;
    if requant.len() != spec.out_channels {
        return Err(spec.shape_error("requant length", &[requant.len()], &[spec.out_channels]));
    }
    if !accumulator_bound_ok(spec, b) {
        return Err(spec.shape_error("accumulator bound", &[spec.fan_in()], &[]));
    }
    if out_dims.iter().product::<usize>() == 0 {
        return Ok(out_dims);
    }
    let plan = Plan::new(x.dims, out_dims, spec);
    let m = spec.out_channels;
    run_tasks(
        &plan,
        |task| {
            let a = plan.gather_weights(&w.data, spec, task);
            let (col, n) = plan.gather_input(&x.data, task);
            let k = col.len().checked_div(n).unwrap_or(0);
            let mut acc = vec![0i32; m * n];
            for oc in 0..m {
                let out = &mut acc[oc * n..(oc + 1) * n];
                for kk in 0..k {
                    let av = a[oc * k + kk] as i32;
                    if av == 0 {
                        continue;
                    }
                    let row = &col[kk * n..(kk + 1) * n];
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o += av * v as i32;
                    }
                }
            }
            (acc, n)
        },
        |task, (acc, n)| {
            for oc in 0..m {
                let row = &acc[oc * n..(oc + 1) * n];
                let rq = requant[oc];
                let bias = b[oc] as i64;
                plan.for_each_output(task, oc, |idx, col| {
                    store(idx, oc, rq.apply(row[col] as i64 + bias));
                });
            }
        },
    );
    Ok(out_dims)
}

/// Quantized conv/deconv producing int8 output with scale `out_scale`.
///
/// out = saturate(round_half_away((acc + b) * m / 2^n)), then the layer's
/// activation in the integer domain (relu6 clamps at round(6 / out_scale)).
pub fn quant_conv2d(
    x: &QuantTensor,
    w: &QuantTensor,
    b: &[i32],
    requant: &[Requant],
    spec: &LayerSpec,
    out_scale: f32,
) -> Result<QuantTensor, TensorError> {
    let (lo, hi) = int_activation_range(spec.activation, out_scale, -128, 127);
    let mut data = Vec::new();
    let dims = {
        let out_dims = check_shapes(x.dims, w.dims, b.len(), spec)?;
        data.resize(out_dims.iter().product(), 0i8);
        accumulate(x, w, b, requant, spec, |idx, _, v| {
            data[idx] = v.clamp(lo, hi) as i8;
        })?
    };
    QuantTensor::new(dims, data, QuantScale::PerTensor(out_scale))
}

/// Quantized conv/deconv keeping an int32 output (saturated to i32), for
/// layers whose consumers want more than 8 bits.
pub fn quant_conv2d_wide(
    x: &QuantTensor,
    w: &QuantTensor,
    b: &[i32],
    requant: &[Requant],
    spec: &LayerSpec,
) -> Result<IntTensor, TensorError> {
    let out_dims = check_shapes(x.dims, w.dims, b.len(), spec)?;
    let mut data = vec![0i32; out_dims.iter().product()];
    let (lo, hi) = match spec.activation {
        Activation::None => (i32::MIN as i64, i32::MAX as i64),
        _ => (0, i32::MAX as i64),
    };
    accumulate(x, w, b, requant, spec, |idx, _, v| {
        data[idx] = v.clamp(lo, hi) as i32;
    })?;
    Ok(IntTensor {
        dims: out_dims,
        data,
    })
}

fn int_activation_range(act: Activation, out_scale: f32, lo: i64, hi: i64) -> (i64, i64) {
    match act {
        Activation::None => (lo, hi),
        Activation::Relu => (0, hi),
        Activation::Relu6 => {
            let six = round_half_away(6.0 / out_scale as f64).min(hi as f64) as i64;
            (0, six.max(0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::{conv2d, deconv2d, LayerKind, Tensor};

    fn absmax(v: &[f32]) -> f32 {
        v.iter().fold(0.0f32, |m, &x| m.max(x.abs()))
    }

    struct Case {
        spec: LayerSpec,
        xq: QuantTensor,
        wq: QuantTensor,
        bq: Vec<i32>,
        rq: Vec<Requant>,
        out_scale: f32,
        float_out: Tensor,
    }

    /// Random Gaussian layer calibrated by absmax; `float_out` runs the float
    /// kernels on the dequantized operands.
    fn case(kind: LayerKind, seed: u64) -> Case {
        let mut rng = SplitMix64::new(seed);
        let spec = LayerSpec {
            name: "q".into(),
            kind,
            in_channels: 8,
            out_channels: 6,
            kernel: 5,
            stride: 2,
            activation: Activation::None,
        };
        let x = Tensor::from_fn([1, 8, 12, 10], |_| rng.next_gaussian() as f32);
        let w = Tensor::from_fn(spec.weight_dims(), |_| rng.next_gaussian() as f32 * 0.1);
        let b: Vec<f32> = (0..6).map(|_| rng.next_gaussian() as f32 * 0.1).collect();
        let s_in = absmax(x.data()) / 127.0;
        let per = w.len() / 6;
        let s_w: Vec<f32> = (0..6)
            .map(|c| absmax(&w.data()[c * per..(c + 1) * per]) / 127.0)
            .collect();
        let xq = QuantTensor::quantize(&x, s_in).unwrap();
        let wq = QuantTensor::quantize_per_channel(&w, &s_w).unwrap();
        let bq: Vec<i32> = b
            .iter()
            .zip(&s_w)
            .map(|(&bv, &sw)| round_half_away(bv as f64 / (s_in as f64 * sw as f64)) as i32)
            .collect();
        let bd: Vec<f32> = bq
            .iter()
            .zip(&s_w)
            .map(|(&q, &sw)| q as f32 * s_in * sw)
            .collect();
        let xd = xq.dequantize();
        let wd = wq.dequantize();
        let float_out = match kind {
            LayerKind::Conv => conv2d(&xd, &wd, &bd, &spec).unwrap(),
            LayerKind::Deconv => deconv2d(&xd, &wd, &bd, &spec).unwrap(),
        };
        let out_scale = absmax(float_out.data()) / 127.0;
        let rq = s_w
            .iter()
            .map(|&sw| Requant::from_ratio(s_in as f64 * sw as f64 / out_scale as f64).unwrap())
            .collect();
        Case {
            spec,
            xq,
            wq,
            bq,
            rq,
            out_scale,
            float_out,
        }
    }

    #[test]
    fn requant_multiplier_range_and_error() {
        let mut rng = SplitMix64::new(9);
        for _ in 0..1000 {
            let ratio = (rng.next_f64() * 40.0 - 30.0).exp2();
            let r = Requant::from_ratio(ratio).unwrap();
            assert!((1 << 30..1i64 << 31).contains(&(r.multiplier as i64)));
            assert!(((r.ratio() - ratio) / ratio).abs() < 2f64.powi(-30));
        }
        assert!(Requant::from_ratio(0.0).is_err());
        assert!(Requant::from_ratio(f64::NAN).is_err());
    }

    #[test]
    fn requant_rounds_half_away() {
        let half = Requant {
            multiplier: 1 << 30,
            shift: 31,
        };
        assert_eq!(half.apply(1), 1);
        assert_eq!(half.apply(-1), -1);
        assert_eq!(half.apply(2), 1);
        assert_eq!(half.apply(3), 2);
        assert_eq!(half.apply(-3), -2);
    }

    #[test]
    fn zero_input_yields_requantized_bias() {
        let c = case(LayerKind::Conv, 1);
        let zero =
            QuantTensor::new(c.xq.dims, vec![0; c.xq.data.len()], c.xq.scale.clone()).unwrap();
        let out = quant_conv2d(&zero, &c.wq, &c.bq, &c.rq, &c.spec, c.out_scale).unwrap();
        let hw = out.dims[2] * out.dims[3];
        for oc in 0..6 {
            let expect = c.rq[oc].apply(c.bq[oc] as i64).clamp(-128, 127) as i8;
            assert!(out.data[oc * hw..(oc + 1) * hw]
                .iter()
                .all(|&v| v == expect));
        }
    }

    #[test]
    fn agrees_with_float_path_within_one_step() {
        for kind in [LayerKind::Conv, LayerKind::Deconv] {
            for seed in 0..4 {
                let c = case(kind, seed + 10);
                let out = quant_conv2d(&c.xq, &c.wq, &c.bq, &c.rq, &c.spec, c.out_scale).unwrap();
                let close = out
                    .data
                    .iter()
                    .zip(c.float_out.data())
                    .filter(|(&q, &f)| (q as f32 * c.out_scale - f).abs() <= c.out_scale * 1.0001)
                    .count();
                assert!(
                    close as f64 >= 0.99 * out.data.len() as f64,
                    "{kind:?}: {close}/{}",
                    out.data.len()
                );
            }
        }
    }

    #[test]
    fn independent_of_thread_count() {
        let c = case(LayerKind::Deconv, 3);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| quant_conv2d_wide(&c.xq, &c.wq, &c.bq, &c.rq, &c.spec).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(4));
        assert_eq!(a, run(3));
    }

    #[test]
    fn relu6_clamps_in_integer_domain() {
        let mut c = case(LayerKind::Conv, 5);
        c.spec.activation = Activation::Relu6;
        let scale = 6.0 / 100.0;
        let out = quant_conv2d(&c.xq, &c.wq, &c.bq, &c.rq, &c.spec, scale).unwrap();
        assert!(out.data.iter().all(|&v| (0..=100).contains(&v)));
    }

    #[test]
    fn bound_rejects_oversized_layers() {
        let spec = LayerSpec::conv("big", 8192, 1, 5, 1);
        assert!(!accumulator_bound_ok(&spec, &[0]));
        let spec = LayerSpec::conv("ok", 512, 1, 5, 1);
        assert!(accumulator_bound_ok(&spec, &[1 << 29]));
    }
}
