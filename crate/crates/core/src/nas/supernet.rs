//! Hypernetwork parameter generation and slimmable slicing.
//!
//! Every layer owns `G` weight banks at its largest shape. A config vector
//! is mapped by a linear layer and softmax to `G` mixing coefficients; the
//! layer weight is the coefficient-weighted sum of the banks, sliced to the
//! chosen widths. Biases come from a Linear -> GeLU -> Linear MLP on the same
//! config vector.

use super::space::{SearchSpace, SubConfig, Width};
use super::NasError;
use crate::codec::{ChannelConfig, LayerWeights, ModelWeights, HS};
use crate::rng::SplitMix64;
use crate::tensor::{gelu_tanh_scalar, softmax, GeluVariant, LayerSpec, Tensor};

/// Weight banks per layer.
pub const BANKS: usize = 4;

/// Dense `out x in` matrix with bias, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn random(inputs: usize, outputs: usize, scale: f64, rng: &mut SplitMix64) -> Self {
        let bound = scale / (inputs.max(1) as f64).sqrt();
        let mut l = Self::zeros(inputs, outputs);
        l.weight
            .iter_mut()
            .for_each(|w| *w = (2.0 * rng.next_f64() - 1.0) * bound);
        l
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.inputs, "linear input width");
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerBanks {
    /// `BANKS` tensors of dims (max_out, max_in, k, k).
    pub banks: Vec<Tensor>,
    /// Config vector -> `BANKS` logits.
    pub coeff: Linear,
    /// Config vector -> hidden, then hidden -> max_out biases.
    pub bias_hidden: Linear,
    pub bias_out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supernet {
    pub space: SearchSpace,
    pub layers: Vec<LayerBanks>,
    pub gelu: GeluVariant,
}

impl Supernet {
    /// Seeded random banks and MLPs; `hidden` is the bias-MLP width.
    pub fn init(space: SearchSpace, hidden: usize, seed: u64) -> Result<Self, NasError> {
        space.validate()?;
        let mut rng = SplitMix64::new(seed);
        let dim = space.searched().len();
        let max_w = space.max_widths();
        let mut layers = Vec::with_capacity(space.layers.len());
        for (i, l) in space.layers.iter().enumerate() {
            let max_in = l.input.map_or(space.image_channels, |j| max_w[j]);
            let dims = [max_w[i], max_in, l.kernel, l.kernel];
            let bound = (6.0 / (max_in * l.kernel * l.kernel) as f64).sqrt();
            let banks = (0..BANKS)
                .map(|_| Tensor::from_fn(dims, |_| ((2.0 * rng.next_f64() - 1.0) * bound) as f32))
                .collect();
            layers.push(LayerBanks {
                banks,
                coeff: Linear::random(dim, BANKS, 1.0, &mut rng),
                bias_hidden: Linear::random(dim, hidden, 1.0, &mut rng),
                bias_out: Linear::random(hidden, max_w[i], 0.01, &mut rng),
            });
        }
        Ok(Self {
            space,
            layers,
            gelu: GeluVariant::default(),
        })
    }

    /// softmax(Linear(cfg_vec)), one coefficient per bank.
    pub fn coefficients(&self, layer: usize, cfg_vec: &[f64]) -> Result<Vec<f64>, NasError> {
        Ok(softmax(&self.layers[layer].coeff.forward(cfg_vec))?)
    }

    /// Coefficient-weighted sum of the banks at full shape.
    pub fn mixed_weight(&self, layer: usize, cfg_vec: &[f64]) -> Result<Tensor, NasError> {
        let c = self.coefficients(layer, cfg_vec)?;
        Ok(mix_banks(&self.layers[layer].banks, &c))
    }

    pub fn generate_weight(&self, layer: usize, cfg: &SubConfig) -> Result<Tensor, NasError> {
        let v = self.space.encode_config(cfg)?;
        let full = self.mixed_weight(layer, &v)?;
        let (out_idx, in_idx) = self.channel_indices(layer, cfg)?;
        Ok(slice_weight(&full, &out_idx, &in_idx))
    }

    pub fn generate_bias(&self, layer: usize, cfg: &SubConfig) -> Result<Vec<f32>, NasError> {
        let v = self.space.encode_config(cfg)?;
        let l = &self.layers[layer];
        let hidden: Vec<f64> = l
            .bias_hidden
            .forward(&v)
            .into_iter()
            .map(|h| gelu_tanh_scalar(h, self.gelu))
            .collect();
        let full = l.bias_out.forward(&hidden);
        let (out_idx, _) = self.channel_indices(layer, cfg)?;
        Ok(out_idx.iter().map(|&o| full[o] as f32).collect())
    }

    /// Kept output and input channel indices of `layer` within its banks.
    pub fn channel_indices(
        &self,
        layer: usize,
        cfg: &SubConfig,
    ) -> Result<(Vec<usize>, Vec<usize>), NasError> {
        let widths = self.space.widths(cfg)?;
        let max_w = self.space.max_widths();
        let kept = |i: usize| -> Vec<usize> {
            match self.space.layers[i].width {
                Width::Tied { layer: t, factor } => grouped_indices(factor, max_w[t], widths[t]),
                _ => (0..widths[i]).collect(),
            }
        };
        let in_idx = match self.space.layers[layer].input {
            None => (0..self.space.image_channels).collect(),
            Some(j) => kept(j),
        };
        Ok((kept(layer), in_idx))
    }

    /// Every layer's spec, weight and bias for `cfg`.
    pub fn materialize(
        &self,
        cfg: &SubConfig,
    ) -> Result<Vec<(LayerSpec, Tensor, Vec<f32>)>, NasError> {
        let specs = self.space.layer_specs(cfg, (1, 1))?;
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (spec, _))| {
                Ok((
                    spec,
                    self.generate_weight(i, cfg)?,
                    self.generate_bias(i, cfg)?,
                ))
            })
            .collect()
    }

    /// A codec model for `cfg` (codec-layout spaces only), with its z prior
    /// and h_s integer parameters set to the seed-initialized defaults.
    pub fn to_model(&self, cfg: &SubConfig) -> Result<ModelWeights, NasError> {
        let cc = self.space.to_channel_config(cfg)?;
        let mut model = crate::codec::init_weights(&cc, 0)?;
        for (layer, (spec, w, b)) in model.layers.iter_mut().zip(self.materialize(cfg)?) {
            *layer = LayerWeights {
                spec: LayerSpec {
                    activation: layer.spec.activation,
                    ..spec
                },
                weight: w,
                bias: b,
                quant: None,
            };
        }
        model.derive_hs_quant()?;
        Ok(model)
    }
}

/// `sum_g coeffs[g] * banks[g]`, elementwise, accumulated in f64.
pub fn mix_banks(banks: &[Tensor], coeffs: &[f64]) -> Tensor {
    assert_eq!(banks.len(), coeffs.len(), "one coefficient per bank");
    let dims = banks[0].dims();
    let data = (0..banks[0].len())
        .map(|i| {
            banks
                .iter()
                .zip(coeffs)
                .map(|(b, &c)| c * b.data()[i] as f64)
                .sum::<f64>() as f32
        })
        .collect();
    Tensor::new(dims, data).expect("banks share one shape")
}

/// Leading `keep` channels of each of `groups` groups of `group` channels.
pub fn grouped_indices(groups: usize, group: usize, keep: usize) -> Vec<usize> {
    (0..groups)
        .flat_map(|g| (0..keep).map(move |c| g * group + c))
        .collect()
}

/// Selects output rows and input columns of an (out, in, k, k) weight.
pub fn slice_weight(w: &Tensor, out_idx: &[usize], in_idx: &[usize]) -> Tensor {
    let [_, _, kh, kw] = w.dims();
    let k2 = kh * kw;
    let mut data = Vec::with_capacity(out_idx.len() * in_idx.len() * k2);
    for &o in out_idx {
        for &i in in_idx {
            let start = w.index(o, i, 0, 0);
            data.extend_from_slice(&w.data()[start..start + k2]);
        }
    }
    Tensor::new([out_idx.len(), in_idx.len(), kh, kw], data).expect("sliced dims")
}

/// Keeps the leading channels of every layer of a larger model. The h_s
/// output is sliced per half (means, log-scales). h_s integer parameters are
/// re-derived; other layers lose theirs and need recalibration.
pub fn slice_submodel(max: &ModelWeights, cfg: &ChannelConfig) -> Result<ModelWeights, NasError> {
    cfg.validate()?;
    if *cfg == max.config {
        return Ok(max.clone());
    }
    let big = max.config.to_array();
    let small = cfg.to_array();
    if let Some(i) = (0..14).find(|&i| small[i] > big[i]) {
        return Err(NasError::InvalidConfig(format!(
            "{}: width {} exceeds the source model's {}",
            max.layers[i].spec.name, small[i], big[i]
        )));
    }
    let specs = cfg.layer_specs();
    let big_m = max.config.latent_channels();
    let m = cfg.latent_channels();
    let mut layers = Vec::with_capacity(14);
    for (i, (src, spec)) in max.layers.iter().zip(specs).enumerate() {
        let out_idx: Vec<usize> = if i == HS.end - 1 {
            grouped_indices(2, big_m, m)
        } else {
            (0..spec.out_channels).collect()
        };
        let in_idx: Vec<usize> = (0..spec.in_channels).collect();
        layers.push(LayerWeights {
            weight: slice_weight(&src.weight, &out_idx, &in_idx),
            bias: out_idx.iter().map(|&o| src.bias[o]).collect(),
            spec,
            quant: None,
        });
    }
    let zc = cfg.hyper_channels();
    let mut model = ModelWeights {
        config: *cfg,
        layers,
        z_mu: max.z_mu[..zc].to_vec(),
        z_sigma: max.z_sigma[..zc].to_vec(),
        s_mu: max.s_mu,
        s_sigma: max.s_sigma,
    };
    model.derive_hs_quant().map_err(NasError::from)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Supernet {
        Supernet::init(SearchSpace::codec(&[8, 12, 16]), 8, 5).unwrap()
    }

    #[test]
    fn coefficients_are_a_distribution() {
        let s = net();
        let cfg = s.space.sample(&mut SplitMix64::new(1));
        let v = s.space.encode_config(&cfg).unwrap();
        for l in 0..s.layers.len() {
            let c = s.coefficients(l, &v).unwrap();
            assert_eq!(c.len(), BANKS);
            assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn generated_shapes_follow_the_config() {
        let s = net();
        let cfg = s.space.sample(&mut SplitMix64::new(2));
        let specs = s.space.layer_specs(&cfg, (64, 64)).unwrap();
        for (i, (spec, _)) in specs.iter().enumerate() {
            assert_eq!(
                s.generate_weight(i, &cfg).unwrap().dims(),
                spec.weight_dims()
            );
            assert_eq!(s.generate_bias(i, &cfg).unwrap().len(), spec.out_channels);
        }
        let model = s.to_model(&cfg).unwrap();
        model.validate().unwrap();
    }

    #[test]
    fn zero_mlp_gives_zero_bias() {
        let mut s = net();
        for l in &mut s.layers {
            l.bias_out = Linear::zeros(l.bias_out.inputs, l.bias_out.outputs);
        }
        let cfg = s.space.max_config();
        assert!(s.generate_bias(0, &cfg).unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn grouped_slicing() {
        assert_eq!(grouped_indices(2, 4, 2), vec![0, 1, 4, 5]);
    }
}
