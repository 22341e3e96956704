use serde::{Deserialize, Serialize};

use super::NasError;
use crate::codec::ChannelConfig;
use crate::rng::SplitMix64;
use crate::tensor::{output_hw, Activation, LayerKind, LayerSpec};

/// How a layer's output width is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Width {
    /// Searched over these candidates (non-empty, strictly increasing).
    Search(Vec<usize>),
    /// `factor` times the width of an earlier searched layer, laid out as
    /// `factor` groups of that width.
    Tied {
        layer: usize,
        factor: usize,
    },
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceLayer {
    pub name: String,
    /// Subnetwork the layer belongs to; block-level latency records use it.
    pub block: String,
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    #[serde(default = "no_activation")]
    pub activation: Activation,
    /// Index of the layer feeding this one; `None` reads the image.
    pub input: Option<usize>,
    pub width: Width,
}

fn no_activation() -> Activation {
    Activation::None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub image_channels: usize,
    pub layers: Vec<SpaceLayer>,
}

/// One chosen width per searched layer, in layer order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubConfig(pub Vec<usize>);

impl SearchSpace {
    pub fn validate(&self) -> Result<(), NasError> {
        let bad = |msg: String| Err(NasError::InvalidSpace(msg));
        if self.image_channels == 0 {
            return bad("image_channels must be positive".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel % 2 == 0 || l.kernel == 0 || !(1..=2).contains(&l.stride) {
                return bad(format!("{}: kernel must be odd and stride 1 or 2", l.name));
            }
            if l.input.is_some_and(|j| j >= i) {
                return bad(format!("{}: input must be an earlier layer", l.name));
            }
            match &l.width {
                Width::Search(c) => {
                    if c.is_empty() || c[0] == 0 || c.windows(2).any(|w| w[1] <= w[0]) {
                        return bad(format!(
                            "{}: candidates must be positive and strictly increasing",
                            l.name
                        ));
                    }
                }
                Width::Tied { layer, factor } => {
                    let ok = *layer < i
                        && *factor > 0
                        && matches!(self.layers[*layer].width, Width::Search(_));
                    if !ok {
                        return bad(format!("{}: must tie to an earlier searched layer", l.name));
                    }
                }
                Width::Fixed(w) => {
                    if *w == 0 {
                        return bad(format!("{}: fixed width must be positive", l.name));
                    }
                }
            }
        }
        Ok(())
    }

    /// Layer indices that carry a choice, in [`SubConfig`] order.
    pub fn searched(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| matches!(self.layers[i].width, Width::Search(_)))
            .collect()
    }

    pub fn candidates(&self, layer: usize) -> &[usize] {
        match &self.layers[layer].width {
            Width::Search(c) => c,
            _ => &[],
        }
    }

    /// Number of configs, saturating.
    pub fn size(&self) -> u128 {
        self.searched().iter().fold(1u128, |a, &i| {
            a.saturating_mul(self.candidates(i).len() as u128)
        })
    }

    pub fn min_config(&self) -> SubConfig {
        SubConfig(
            self.searched()
                .iter()
                .map(|&i| self.candidates(i)[0])
                .collect(),
        )
    }

    pub fn max_config(&self) -> SubConfig {
        SubConfig(
            self.searched()
                .iter()
                .map(|&i| *self.candidates(i).last().unwrap())
                .collect(),
        )
    }

    /// Candidate index of every choice.
    pub fn indices(&self, cfg: &SubConfig) -> Result<Vec<usize>, NasError> {
        let searched = self.searched();
        if cfg.0.len() != searched.len() {
            return Err(NasError::InvalidConfig(format!(
                "{} choices for {} searched layers",
                cfg.0.len(),
                searched.len()
            )));
        }
        searched
            .iter()
            .zip(&cfg.0)
            .map(|(&i, &v)| {
                self.candidates(i).binary_search(&v).map_err(|_| {
                    NasError::InvalidConfig(format!(
                        "{}: {v} is not a candidate",
                        self.layers[i].name
                    ))
                })
            })
            .collect()
    }

    pub fn from_indices(&self, idx: &[usize]) -> SubConfig {
        SubConfig(
            self.searched()
                .iter()
                .zip(idx)
                .map(|(&i, &k)| self.candidates(i)[k])
                .collect(),
        )
    }

    pub fn check(&self, cfg: &SubConfig) -> Result<(), NasError> {
        self.indices(cfg).map(|_| ())
    }

    /// Output width of every layer.
    pub fn widths(&self, cfg: &SubConfig) -> Result<Vec<usize>, NasError> {
        self.check(cfg)?;
        let mut choice = cfg.0.iter();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let w = match &l.width {
                Width::Search(_) => *choice.next().unwrap(),
                Width::Tied { layer, factor } => out[*layer] * factor,
                Width::Fixed(w) => *w,
            };
            out.push(w);
        }
        Ok(out)
    }

    /// Every output width layer `i` can take.
    pub fn possible_widths(&self, i: usize) -> Vec<usize> {
        match &self.layers[i].width {
            Width::Search(c) => c.clone(),
            Width::Tied { layer, factor } => self
                .possible_widths(*layer)
                .iter()
                .map(|w| w * factor)
                .collect(),
            Width::Fixed(w) => vec![*w],
        }
    }

    /// Width of each layer in the largest config.
    pub fn max_widths(&self) -> Vec<usize> {
        self.widths(&self.max_config())
            .expect("max config is valid")
    }

    /// Concrete layer specs and the input (h, w) of each layer.
    pub fn layer_specs(
        &self,
        cfg: &SubConfig,
        input_hw: (usize, usize),
    ) -> Result<Vec<(LayerSpec, (usize, usize))>, NasError> {
        let widths = self.widths(cfg)?;
        let mut out_hw: Vec<(usize, usize)> = Vec::with_capacity(self.layers.len());
        let mut specs = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (in_c, hw) = match l.input {
                None => (self.image_channels, input_hw),
                Some(j) => (widths[j], out_hw[j]),
            };
            let spec = LayerSpec {
                name: l.name.clone(),
                kind: l.kind,
                in_channels: in_c,
                out_channels: widths[i],
                kernel: l.kernel,
                stride: l.stride,
                activation: l.activation,
            };
            out_hw.push(output_hw(l.kind, hw.0, hw.1, l.stride));
            specs.push((spec, hw));
        }
        Ok(specs)
    }

    /// Per-choice min-max normalization to [0, 1]; single-candidate layers
    /// encode to 0.
    pub fn encode_config(&self, cfg: &SubConfig) -> Result<Vec<f64>, NasError> {
        self.check(cfg)?;
        Ok(self
            .searched()
            .iter()
            .zip(&cfg.0)
            .map(|(&i, &v)| {
                let c = self.candidates(i);
                let (lo, hi) = (c[0], *c.last().unwrap());
                if hi == lo {
                    0.0
                } else {
                    (v - lo) as f64 / (hi - lo) as f64
                }
            })
            .collect())
    }

    /// Uniformly random config.
    pub fn sample(&self, rng: &mut SplitMix64) -> SubConfig {
        SubConfig(
            self.searched()
                .iter()
                .map(|&i| {
                    let c = self.candidates(i);
                    c[rng.below(c.len())]
                })
                .collect(),
        )
    }

    /// Every config in lexicographic order of candidate indices.
    pub fn enumerate(&self) -> Vec<SubConfig> {
        let lens: Vec<usize> = self
            .searched()
            .iter()
            .map(|&i| self.candidates(i).len())
            .collect();
        let mut idx = vec![0usize; lens.len()];
        let mut out = Vec::new();
        loop {
            out.push(self.from_indices(&idx));
            let mut k = lens.len();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < lens[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// The codec layout: four k5s2 convs (g_a), k3s1/k5s2/k5s2 (h_a), two
    /// k5s2 deconvs and a k3s1 conv emitting twice the latent width (h_s),
    /// and four k5s2 deconvs ending in RGB (g_s). Every other layer searches
    /// over `candidates`.
    pub fn codec(candidates: &[usize]) -> Self {
        let cands = vec![candidates.to_vec(); 12];
        Self::codec_with(|i| Width::Search(cands[i].clone()))
    }

    /// The codec layout with exactly one candidate per layer.
    pub fn fixed(cfg: &ChannelConfig) -> Self {
        let a = cfg.to_array();
        let searched = [0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12];
        Self::codec_with(|k| Width::Search(vec![a[searched[k]]]))
    }

    fn codec_with(mut width: impl FnMut(usize) -> Width) -> Self {
        let specs = ChannelConfig::ORIGIN.layer_specs();
        let inputs = [
            None,
            Some(0),
            Some(1),
            Some(2),
            Some(3),
            Some(4),
            Some(5),
            Some(6),
            Some(7),
            Some(8),
            Some(3),
            Some(10),
            Some(11),
            Some(12),
        ];
        let mut k = 0;
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let w = match i {
                    9 => Width::Tied {
                        layer: 3,
                        factor: 2,
                    },
                    13 => Width::Fixed(3),
                    _ => {
                        k += 1;
                        width(k - 1)
                    }
                };
                SpaceLayer {
                    block: s.name.split('.').next().unwrap().to_string(),
                    name: s.name,
                    kind: s.kind,
                    kernel: s.kernel,
                    stride: s.stride,
                    activation: s.activation,
                    input: inputs[i],
                    width: w,
                }
            })
            .collect();
        Self {
            image_channels: 3,
            layers,
        }
    }

    /// The codec channel config of `cfg` in a codec-layout space.
    pub fn to_channel_config(&self, cfg: &SubConfig) -> Result<ChannelConfig, NasError> {
        let w = self.widths(cfg)?;
        if w.len() != 14 {
            return Err(NasError::InvalidSpace("not a codec-layout space".into()));
        }
        let mut a = [0usize; 14];
        a.copy_from_slice(&w);
        a[9] /= 2;
        Ok(ChannelConfig::from_array(a))
    }

    /// Inverse of [`SearchSpace::to_channel_config`].
    pub fn subconfig_of(&self, cc: &ChannelConfig) -> Result<SubConfig, NasError> {
        let a = cc.to_array();
        let cfg = SubConfig(self.searched().iter().map(|&i| a[i]).collect());
        if self.to_channel_config(&cfg)? != *cc {
            return Err(NasError::InvalidConfig(
                "config does not fit the codec layout".into(),
            ));
        }
        Ok(cfg)
    }

    /// The default codec search space: 32..=256 in steps of 4.
    pub fn default_codec() -> Self {
        Self::codec(&(32..=256).step_by(4).collect::<Vec<_>>())
    }
}

/// The sandwich batch {min, random, random, max}.
pub fn sample_sandwich(space: &SearchSpace, seed: u64) -> [SubConfig; 4] {
    let mut rng = SplitMix64::new(seed);
    let a = space.sample(&mut rng);
    let b = space.sample(&mut rng);
    [space.min_config(), a, b, space.max_config()]
}

/// Multiply-accumulates counted as two operations: conv
/// 2*oh*ow*oc*ic*k^2, deconv 2*ih*iw*ic*oc*k^2. Bias and activations are
/// not counted.
pub fn layer_flops(spec: &LayerSpec, input_hw: (usize, usize)) -> u64 {
    let (h, w) = input_hw;
    let k2 = (spec.kernel * spec.kernel) as u64;
    let cc = (spec.in_channels * spec.out_channels) as u64;
    match spec.kind {
        LayerKind::Conv => {
            let (oh, ow) = output_hw(LayerKind::Conv, h, w, spec.stride);
            2 * (oh * ow) as u64 * cc * k2
        }
        LayerKind::Deconv => 2 * (h * w) as u64 * cc * k2,
    }
}

pub fn flops(
    space: &SearchSpace,
    cfg: &SubConfig,
    input_hw: (usize, usize),
) -> Result<u64, NasError> {
    Ok(space
        .layer_specs(cfg, input_hw)?
        .iter()
        .map(|(s, hw)| layer_flops(s, *hw))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codec_space_round_trips_table_configs() {
        let space = SearchSpace::default_codec();
        space.validate().unwrap();
        assert_eq!(space.searched().len(), 12);
        let cfg = space.subconfig_of(&ChannelConfig::NAS).unwrap();
        assert_eq!(space.to_channel_config(&cfg).unwrap(), ChannelConfig::NAS);
        // 246 is not on the 4-step grid.
        assert!(space.subconfig_of(&ChannelConfig::ORIGIN).is_err());
        let fixed = SearchSpace::fixed(&ChannelConfig::ORIGIN);
        assert_eq!(fixed.size(), 1);
        let only = fixed.min_config();
        assert_eq!(
            fixed.to_channel_config(&only).unwrap(),
            ChannelConfig::ORIGIN
        );
    }

    #[test]
    fn encoding_is_min_max() {
        let space = SearchSpace::codec(&[32, 48, 64, 80, 96]);
        assert!(space
            .encode_config(&space.min_config())
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(space
            .encode_config(&space.max_config())
            .unwrap()
            .iter()
            .all(|&v| v == 1.0));
        let mid = SubConfig(vec![64; 12]);
        assert!(space.encode_config(&mid).unwrap().iter().all(|&v| v == 0.5));
        assert!(space.encode_config(&SubConfig(vec![50; 12])).is_err());
        let fixed = SearchSpace::fixed(&ChannelConfig::NAS);
        assert!(fixed
            .encode_config(&fixed.min_config())
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn sandwich() {
        let space = SearchSpace::codec(&[32, 64, 128]);
        let [lo, a, b, hi] = sample_sandwich(&space, 3);
        assert_eq!(lo, space.min_config());
        assert_eq!(hi, space.max_config());
        space.check(&a).unwrap();
        space.check(&b).unwrap();
        assert_eq!(sample_sandwich(&space, 3)[1], a);
        let fixed = SearchSpace::fixed(&ChannelConfig::ORIGIN);
        let s = sample_sandwich(&fixed, 9);
        assert!(s.iter().all(|c| *c == s[0]));
    }

    #[test]
    fn enumeration_covers_the_space() {
        let space = SearchSpace {
            image_channels: 3,
            layers: vec![
                SpaceLayer {
                    name: "a".into(),
                    block: "b".into(),
                    kind: LayerKind::Conv,
                    kernel: 3,
                    stride: 1,
                    activation: Activation::None,
                    input: None,
                    width: Width::Search(vec![1, 2, 3]),
                },
                SpaceLayer {
                    name: "b".into(),
                    block: "b".into(),
                    kind: LayerKind::Conv,
                    kernel: 3,
                    stride: 1,
                    activation: Activation::None,
                    input: Some(0),
                    width: Width::Search(vec![4, 5]),
                },
            ],
        };
        let all = space.enumerate();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], SubConfig(vec![1, 4]));
        assert_eq!(all[5], SubConfig(vec![3, 5]));
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, all);
    }

    #[test]
    fn flops_worked_example() {
        let spec = LayerSpec::conv("c", 3, 32, 5, 2);
        assert_eq!(layer_flops(&spec, (64, 64)), 4_915_200);
        let empty = SearchSpace {
            image_channels: 3,
            layers: vec![],
        };
        assert_eq!(flops(&empty, &SubConfig(vec![]), (64, 64)).unwrap(), 0);
    }
}
