//! Post-training conversion of a float model to the full int8 path.

use super::calibration::{calibrate, CalibPolicy, CalibrationStats};
use super::QuantError;
use crate::codec::{pad_replicate, run_float, LayerQuant, ModelWeights, GA, GS, HA, PAD_MULTIPLE};
use crate::tensor::Tensor;

/// Activation statistics of g_a, h_a and g_s gathered on the float path:
/// the input of every layer plus the output of each subnetwork.
#[derive(Debug, Clone)]
pub struct ModelStats {
    /// Indexed like `ModelWeights::layers`; h_s entries stay empty.
    pub inputs: Vec<CalibrationStats>,
    pub ga_out: CalibrationStats,
    pub ha_out: CalibrationStats,
    pub gs_out: CalibrationStats,
}

impl ModelStats {
    fn new(layers: usize) -> Self {
        Self {
            inputs: vec![CalibrationStats::new(); layers],
            ga_out: CalibrationStats::new(),
            ha_out: CalibrationStats::new(),
            gs_out: CalibrationStats::new(),
        }
    }

    pub fn merge(&mut self, other: &ModelStats) {
        for (a, b) in self.inputs.iter_mut().zip(&other.inputs) {
            a.merge(b);
        }
        self.ga_out.merge(&other.ga_out);
        self.ha_out.merge(&other.ha_out);
        self.gs_out.merge(&other.gs_out);
    }
}

fn observe_chain(
    model: &ModelWeights,
    range: std::ops::Range<usize>,
    x: &Tensor,
    stats: &mut ModelStats,
) -> Result<Tensor, QuantError> {
    let mut cur = x.clone();
    for i in range {
        stats.inputs[i].observe(cur.data());
        cur = run_float(&model.layers[i..i + 1], &cur)?;
    }
    Ok(cur)
}

/// Float forward over each image (NCHW, values in [0, 1]) collecting
/// statistics. g_s sees the unquantized latent.
pub fn collect_stats(model: &ModelWeights, images: &[Tensor]) -> Result<ModelStats, QuantError> {
    let mut total = ModelStats::new(model.layers.len());
    for x in images {
        let mut s = ModelStats::new(model.layers.len());
        let xp = pad_replicate(x, PAD_MULTIPLE);
        let y = observe_chain(model, GA, &xp, &mut s)?;
        s.ga_out.observe(y.data());
        let z = observe_chain(model, HA, &y, &mut s)?;
        s.ha_out.observe(z.data());
        let xh = observe_chain(model, GS, &y, &mut s)?;
        s.gs_out.observe(xh.data());
        total.merge(&s);
    }
    Ok(total)
}

/// Derive int8 parameters for every layer from calibration images.
///
/// Weights get per-channel absmax scales. Activation scales come from
/// `policy`; a hidden layer's output scale is the next layer's input scale
/// and a subnetwork's last layer uses the scale of its own output. h_s keeps
/// its fixed scales.
pub fn convert_to_int8_with(
    model: &ModelWeights,
    images: &[Tensor],
    policy: CalibPolicy,
) -> Result<ModelWeights, QuantError> {
    if images.is_empty() {
        return Err(QuantError::NoCalibrationData);
    }
    let stats = collect_stats(model, images)?;
    let mut out = model.clone();
    for (range, out_stats) in [
        (GA, &stats.ga_out),
        (HA, &stats.ha_out),
        (GS, &stats.gs_out),
    ] {
        let ins: Vec<f32> = range
            .clone()
            .map(|i| calibrate(&stats.inputs[i], policy).map(|s| s as f32))
            .collect::<Result<_, _>>()?;
        let last_out = calibrate(out_stats, policy)? as f32;
        log::debug!("input scales {ins:?}, output scale {last_out}");
        for (j, i) in range.clone().enumerate() {
            let l = &model.layers[i];
            let o = ins.get(j + 1).copied().unwrap_or(last_out);
            let q = LayerQuant::derive(
                &l.spec,
                &l.weight,
                &l.bias,
                ins[j],
                vec![o; l.spec.out_channels],
            )?;
            out.layers[i].quant = Some(q);
        }
    }
    out.derive_hs_quant()?;
    out.validate()?;
    Ok(out)
}

/// [`convert_to_int8_with`] at the default 99.99th percentile.
pub fn convert_to_int8(
    model: &ModelWeights,
    images: &[Tensor],
) -> Result<ModelWeights, QuantError> {
    convert_to_int8_with(model, images, CalibPolicy::default())
}

/// Signal to quantization noise ratio in dB; infinite for identical inputs.
pub fn sqnr_db(reference: &[f32], test: &[f32]) -> f64 {
    let (mut sig, mut noise) = (0f64, 0f64);
    for (&r, &t) in reference.iter().zip(test) {
        sig += (r as f64).powi(2);
        noise += (r as f64 - t as f64).powi(2);
    }
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (sig / noise).log10()
    }
}
