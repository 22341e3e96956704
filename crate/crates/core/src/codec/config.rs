use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::tensor::{Activation, LayerSpec};

/// Output channels of every (de)convolution in the four subnetworks.
///
/// `gs` lists all four synthesis stages, the last one being RGB. The final
/// h_s layer emits `2 * hs[2]` maps (means, then log-scales).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub ga: [usize; 4],
    pub ha: [usize; 3],
    pub hs: [usize; 3],
    pub gs: [usize; 4],
}

impl ChannelConfig {
    pub const ORIGIN: ChannelConfig = ChannelConfig {
        ga: [48, 96, 112, 176],
        ha: [176, 246, 176],
        hs: [246, 176, 176],
        gs: [176, 112, 96, 3],
    };

    pub const NAS: ChannelConfig = ChannelConfig {
        ga: [32, 120, 104, 220],
        ha: [248, 224, 256],
        hs: [236, 200, 220],
        gs: [220, 112, 112, 3],
    };

    pub fn by_name(name: &str) -> Option<ChannelConfig> {
        match name {
            "origin" => Some(Self::ORIGIN),
            "nas" => Some(Self::NAS),
            _ => None,
        }
    }

    /// Latent channel count M.
    pub fn latent_channels(&self) -> usize {
        self.ga[3]
    }

    pub fn hyper_channels(&self) -> usize {
        self.ha[2]
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let all = self
            .ga
            .iter()
            .chain(&self.ha)
            .chain(&self.hs)
            .chain(&self.gs);
        if all.clone().any(|&c| c == 0) {
            return Err(CodecError::Config("channel counts must be positive".into()));
        }
        if all.clone().any(|&c| c > u16::MAX as usize) {
            return Err(CodecError::Config("channel count above 65535".into()));
        }
        if self.gs[3] != 3 {
            return Err(CodecError::Config(format!(
                "last g_s stage must have 3 channels, got {}",
                self.gs[3]
            )));
        }
        if self.hs[2] != self.ga[3] {
            return Err(CodecError::Config(format!(
                "h_s width {} must equal the latent channel count {}",
                self.hs[2], self.ga[3]
            )));
        }
        Ok(())
    }

    /// The 14 layer specs in storage order: g_a, h_a, h_s, g_s.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        use Activation::{None as Linear, Relu, Relu6};
        let m = self.ga[3];
        let mut out = Vec::with_capacity(14);
        let ga_in = [3, self.ga[0], self.ga[1], self.ga[2]];
        for i in 0..4 {
            let act = if i < 3 { Relu } else { Linear };
            out.push(
                LayerSpec::conv(&format!("g_a.{i}"), ga_in[i], self.ga[i], 5, 2)
                    .with_activation(act),
            );
        }
        out.push(LayerSpec::conv("h_a.0", m, self.ha[0], 3, 1).with_activation(Relu));
        out.push(LayerSpec::conv("h_a.1", self.ha[0], self.ha[1], 5, 2).with_activation(Relu));
        out.push(LayerSpec::conv("h_a.2", self.ha[1], self.ha[2], 5, 2));
        out.push(LayerSpec::deconv("h_s.0", self.ha[2], self.hs[0], 5, 2).with_activation(Relu6));
        out.push(LayerSpec::deconv("h_s.1", self.hs[0], self.hs[1], 5, 2).with_activation(Relu6));
        out.push(LayerSpec::conv("h_s.2", self.hs[1], 2 * self.hs[2], 3, 1));
        let gs_in = [m, self.gs[0], self.gs[1], self.gs[2]];
        for i in 0..4 {
            let act = if i < 3 { Relu } else { Linear };
            out.push(
                LayerSpec::deconv(&format!("g_s.{i}"), gs_in[i], self.gs[i], 5, 2)
                    .with_activation(act),
            );
        }
        out
    }

    pub fn to_array(&self) -> [usize; 14] {
        let mut a = [0; 14];
        a[..4].copy_from_slice(&self.ga);
        a[4..7].copy_from_slice(&self.ha);
        a[7..10].copy_from_slice(&self.hs);
        a[10..].copy_from_slice(&self.gs);
        a
    }

    pub fn from_array(a: [usize; 14]) -> Self {
        Self {
            ga: [a[0], a[1], a[2], a[3]],
            ha: [a[4], a[5], a[6]],
            hs: [a[7], a[8], a[9]],
            gs: [a[10], a[11], a[12], a[13]],
        }
    }
}

/// Index ranges of each subnetwork inside [`ChannelConfig::layer_specs`].
pub const GA: std::ops::Range<usize> = 0..4;
pub const HA: std::ops::Range<usize> = 4..7;
pub const HS: std::ops::Range<usize> = 7..10;
pub const GS: std::ops::Range<usize> = 10..14;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_are_valid() {
        for cfg in [ChannelConfig::ORIGIN, ChannelConfig::NAS] {
            cfg.validate().unwrap();
            let specs = cfg.layer_specs();
            assert_eq!(specs.len(), 14);
            for w in specs[GA].windows(2).chain(specs[GS].windows(2)) {
                assert_eq!(w[0].out_channels, w[1].in_channels);
            }
            assert_eq!(specs[9].out_channels, 2 * cfg.latent_channels());
            assert_eq!(ChannelConfig::from_array(cfg.to_array()), cfg);
        }
        assert_eq!(ChannelConfig::ORIGIN.latent_channels(), 176);
        assert_eq!(ChannelConfig::NAS.latent_channels(), 220);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ChannelConfig::ORIGIN;
        c.gs[3] = 4;
        assert!(c.validate().is_err());
        let mut c = ChannelConfig::ORIGIN;
        c.hs[2] = 100;
        assert!(c.validate().is_err());
        let mut c = ChannelConfig::NAS;
        c.ha[1] = 0;
        assert!(c.validate().is_err());
    }
}
