//! 8-bit RGB rasters, their float view, and edge padding.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::CodecError;
use crate::tensor::{round_half_away, Tensor};

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, CodecError> {
        if width.checked_mul(height).and_then(|a| a.checked_mul(3)) != Some(data.len()) {
            return Err(CodecError::Image(format!(
                "{} bytes for a {width}x{height} RGB raster",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// (1, 3, H, W) tensor with values v / 255.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h) = (self.width, self.height);
        Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
            self.data[(y * w + x) * 3 + c] as f32 / 255.0
        })
    }

    /// Clamp to [0, 1] and round v * 255 half away from zero.
    pub fn from_tensor(t: &Tensor) -> Result<Self, CodecError> {
        let [n, c, h, w] = t.dims();
        if n != 1 || c != 3 {
            return Err(CodecError::Image(format!(
                "expected a (1, 3, h, w) tensor, got {:?}",
                t.dims()
            )));
        }
        let mut data = vec![0u8; h * w * 3];
        for ch in 0..3 {
            let plane = t.plane(0, ch);
            for (i, &v) in plane.iter().enumerate() {
                data[i * 3 + ch] = round_half_away(v.clamp(0.0, 1.0) as f64 * 255.0) as u8;
            }
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        let path = path.as_ref();
        let img =
            image::open(path).map_err(|e| CodecError::Image(format!("{}: {e}", path.display())))?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w as usize, h as usize, rgb.into_raw())
    }

    /// Writes png or bmp, chosen by the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        let path = path.as_ref();
        let format = raster_format(path).ok_or_else(|| {
            CodecError::Image(format!(
                "{}: extension must be .png or .bmp",
                path.display()
            ))
        })?;
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .ok_or_else(|| CodecError::Image("raster size".into()))?;
        img.save_with_format(path, format)
            .map_err(|e| CodecError::Image(format!("{}: {e}", path.display())))
    }
}

/// png or bmp by extension (case-insensitive).
pub fn raster_format(path: &Path) -> Option<ImageFormat> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "png" => Some(ImageFormat::Png),
        "bmp" => Some(ImageFormat::Bmp),
        _ => None,
    }
}

/// Pads right and bottom by edge replication up to the next multiple.
pub fn pad_replicate(x: &Tensor, multiple: usize) -> Tensor {
    let [n, c, h, w] = x.dims();
    let ph = h.div_ceil(multiple).max(1) * multiple;
    let pw = w.div_ceil(multiple).max(1) * multiple;
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    Tensor::from_fn([n, c, ph, pw], |[b, ch, y, xx]| {
        x.at(b, ch, y.min(h - 1), xx.min(w - 1))
    })
}

/// Top-left (h, w) window.
pub fn crop(x: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, c, xh, xw] = x.dims();
    assert!(h <= xh && w <= xw, "crop {h}x{w} out of {xh}x{xw}");
    if (h, w) == (xh, xw) {
        return x.clone();
    }
    Tensor::from_fn([n, c, h, w], |[b, ch, y, xx]| x.at(b, ch, y, xx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_raster(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = SplitMix64::new(seed);
        Raster::new(w, h, (0..w * h * 3).map(|_| rng.below(256) as u8).collect()).unwrap()
    }

    #[test]
    fn pad_sizes() {
        let t = Tensor::zeros([1, 3, 1080, 1920]);
        assert_eq!(pad_replicate(&t, 64).dims(), [1, 3, 1088, 1920]);
        let t = Tensor::zeros([1, 3, 64, 64]);
        assert_eq!(pad_replicate(&t, 64).dims(), [1, 3, 64, 64]);
        let t = Tensor::zeros([1, 3, 1, 65]);
        assert_eq!(pad_replicate(&t, 64).dims(), [1, 3, 64, 128]);
    }

    #[test]
    fn pad_replicates_edges_and_crop_inverts() {
        let x = random_raster(37, 5, 1).to_tensor();
        let p = pad_replicate(&x, 64);
        assert_eq!(p.at(0, 1, 63, 63), x.at(0, 1, 4, 36));
        assert_eq!(p.at(0, 2, 2, 50), x.at(0, 2, 2, 36));
        assert_eq!(crop(&p, 5, 37), x);
    }

    #[test]
    fn raster_tensor_round_trip() {
        let r = random_raster(9, 7, 2);
        assert_eq!(Raster::from_tensor(&r.to_tensor()).unwrap(), r);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = random_raster(13, 11, 3);
        for name in ["a.png", "b.bmp", "c.PNG"] {
            let p = dir.path().join(name);
            r.save(&p).unwrap();
            assert_eq!(Raster::load(&p).unwrap(), r);
        }
        assert!(r.save(dir.path().join("d.jpg")).is_err());
    }
}
