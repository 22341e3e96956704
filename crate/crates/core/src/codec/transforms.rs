//! Running the four subnetworks, on the float path or the int8 path, and the
//! integer hyper-decoder that both encoder and decoder rely on.

use super::config::HS;
use super::weights::{LayerQuant, LayerWeights, ModelWeights};
use super::CodecError;
use crate::entropy::ScaleTable;
use crate::tensor::{
    conv2d, deconv2d, quant_conv2d, quant_conv2d_wide, IntTensor, LayerKind, QuantScale,
    QuantTensor, Tensor,
};

/// Float forward through consecutive layers.
pub fn run_float(layers: &[LayerWeights], x: &Tensor) -> Result<Tensor, CodecError> {
    let mut cur = x.clone();
    for l in layers {
        cur = match l.spec.kind {
            LayerKind::Conv => conv2d(&cur, &l.weight, &l.bias, &l.spec)?,
            LayerKind::Deconv => deconv2d(&cur, &l.weight, &l.bias, &l.spec)?,
        };
    }
    Ok(cur)
}

fn quant_of(l: &LayerWeights) -> Result<&LayerQuant, CodecError> {
    l.quant
        .as_ref()
        .ok_or_else(|| CodecError::QuantMissing(l.spec.name.clone()))
}

/// int8 forward: quantize the input at the first layer's scale, keep int8
/// activations between layers, take the last layer at int32 width and
/// dequantize it per output channel.
pub fn run_int(layers: &[LayerWeights], x: &Tensor) -> Result<Tensor, CodecError> {
    let first = quant_of(&layers[0])?;
    let xq = QuantTensor::quantize(x, first.in_scale)?;
    let wide = run_int_wide(layers, xq)?;
    let last = quant_of(layers.last().unwrap())?;
    let per = wide.dims[2] * wide.dims[3];
    let data = wide
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| v as f32 * last.out_scales[(i / per) % wide.dims[1]])
        .collect();
    Ok(Tensor::new(wide.dims, data)?)
}

fn run_int_wide(layers: &[LayerWeights], x: QuantTensor) -> Result<IntTensor, CodecError> {
    let (last, hidden) = layers.split_last().expect("non-empty layer list");
    let mut cur = x;
    for l in hidden {
        let q = quant_of(l)?;
        check_scale(&cur, q.in_scale, &l.spec.name)?;
        cur = quant_conv2d(
            &cur,
            &q.weight,
            &q.bias,
            &q.requant,
            &l.spec,
            q.out_scales[0],
        )?;
    }
    let q = quant_of(last)?;
    check_scale(&cur, q.in_scale, &last.spec.name)?;
    Ok(quant_conv2d_wide(
        &cur, &q.weight, &q.bias, &q.requant, &last.spec,
    )?)
}

fn check_scale(x: &QuantTensor, in_scale: f32, layer: &str) -> Result<(), CodecError> {
    match x.scale {
        QuantScale::PerTensor(s) if s == in_scale => Ok(()),
        _ => Err(CodecError::InvalidWeights(format!(
            "{layer}: input scale does not match the previous layer's output scale"
        ))),
    }
}

/// Entropy parameters of the latent y, as computed by the integer h_s.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Raw integer means, (1, M, h, w) row-major.
    pub mu_int: Vec<i32>,
    /// `mu_int * s_mu`.
    pub mu: Tensor,
    /// Scale-table bin of every latent element.
    pub bins: Vec<u8>,
}

/// `T[b] = floor(ln(bins[b]) / s_sigma) + 1` for the first 63 bins, so that
/// an integer log-sigma `v` falls in bin `#{b : T[b] <= v}`: the smallest bin
/// whose sigma is at least `exp(v * s_sigma)`.
pub fn sigma_thresholds(s_sigma: f32, scales: &ScaleTable) -> Vec<i32> {
    let bins = scales.bins();
    bins[..bins.len() - 1]
        .iter()
        .map(|&b| {
            let t = libm::floor(libm::log(b) / s_sigma as f64) + 1.0;
            t.clamp(i32::MIN as f64, i32::MAX as f64) as i32
        })
        .collect()
}

#[inline]
pub fn bin_of(log_sigma: i32, thresholds: &[i32]) -> usize {
    thresholds.partition_point(|&t| t <= log_sigma)
}

/// Evaluates h_s entirely on the int8/int32 path. `z_hat` must hold values
/// in the int8 range; its scale is 1.
pub fn hyper_decode_params(
    z_hat: &IntTensor,
    model: &ModelWeights,
    thresholds: &[i32],
) -> Result<HyperParams, CodecError> {
    let data = z_hat
        .data
        .iter()
        .map(|&v| {
            i8::try_from(v).map_err(|_| CodecError::Corrupt("hyper-latent outside the int8 range"))
        })
        .collect::<Result<Vec<i8>, _>>()?;
    let x = QuantTensor::new(z_hat.dims, data, QuantScale::PerTensor(1.0))?;
    let wide = run_int_wide(&model.layers[HS], x)?;
    let m = model.config.latent_channels();
    let [_, c2, h, w] = wide.dims;
    debug_assert_eq!(c2, 2 * m);
    let half = m * h * w;
    let mu_int = wide.data[..half].to_vec();
    let s_mu = model.s_mu;
    let mu = Tensor::new(
        [1, m, h, w],
        mu_int.iter().map(|&v| v as f32 * s_mu).collect(),
    )?;
    let bins = wide.data[half..]
        .iter()
        .map(|&v| bin_of(v, thresholds) as u8)
        .collect();
    Ok(HyperParams { mu_int, mu, bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::sigma_to_bin;

    #[test]
    fn thresholds_are_monotone_and_match_the_float_lookup() {
        let st = ScaleTable::new();
        for s in [1.0f32 / 64.0, 1.0 / 8.0, 0.37] {
            let t = sigma_thresholds(s, &st);
            assert_eq!(t.len(), 63);
            assert!(t.windows(2).all(|w| w[0] <= w[1]));
            let mut probes: Vec<i32> = t.iter().flat_map(|&b| [b - 1, b, b + 1]).collect();
            probes.sort_unstable();
            let bins: Vec<usize> = probes.iter().map(|&v| bin_of(v, &t)).collect();
            assert!(bins.windows(2).all(|w| w[0] <= w[1]));
            for (&v, &bin) in probes.iter().zip(&bins) {
                let ln_sigma = v as f64 * s as f64;
                let on_edge = st.bins().iter().any(|b| (b.ln() - ln_sigma).abs() < 1e-9);
                if !on_edge {
                    assert_eq!(bin, sigma_to_bin(ln_sigma.exp(), &st), "v {v} s {s}");
                }
            }
            assert_eq!(bin_of(i32::MIN, &t), 0);
            assert_eq!(bin_of(i32::MAX, &t), 63);
        }
    }
}
