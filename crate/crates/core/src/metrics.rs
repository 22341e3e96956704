//! Reconstruction quality and rate.

use thiserror::Error;

use crate::codec::Raster;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Default weight of the MS-SSIM term in [`hybrid_score`].
pub const HYBRID_WEIGHT: f64 = 0.5;

const PEAK: f64 = 255.0;
const C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("images differ in size: {a:?} vs {b:?}")]
    DimMismatch {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("zero image area")]
    ZeroArea,
    #[error("weight must be in [0, 1], got {0}")]
    BadWeight(f64),
}

fn same_dims(a: &Raster, b: &Raster) -> Result<(), MetricsError> {
    if (a.width, a.height) != (b.width, b.height) || a.data.len() != b.data.len() {
        return Err(MetricsError::DimMismatch {
            a: (a.width, a.height),
            b: (b.width, b.height),
        });
    }
    if a.data.is_empty() {
        return Err(MetricsError::ZeroArea);
    }
    Ok(())
}

/// Mean squared error over every channel sample.
pub fn mse(a: &Raster, b: &Raster) -> Result<f64, MetricsError> {
    same_dims(a, b)?;
    let sum: u64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.data.len() as f64)
}

/// 10 log10(255^2 / MSE), capped at 100 dB.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64, MetricsError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (PEAK * PEAK / m).log10()).min(PSNR_CAP_DB))
}

/// 8 * bytes / (width * height).
pub fn bpp(bytes: usize, width: usize, height: usize) -> Result<f64, MetricsError> {
    let area = width.checked_mul(height).unwrap_or(0);
    if area == 0 {
        return Err(MetricsError::ZeroArea);
    }
    Ok(8.0 * bytes as f64 / area as f64)
}

/// w (1 - MS-SSIM) + (1 - w) MSE / 255^2. Lower is better.
pub fn hybrid_score(a: &Raster, b: &Raster, w: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(MetricsError::BadWeight(w));
    }
    let m = mse(a, b)? / (PEAK * PEAK);
    let s = ms_ssim(a, b)?;
    Ok(w * (1.0 - s) + (1.0 - w) * m)
}

#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(r: &Raster, c: usize) -> Self {
        Self {
            w: r.width,
            h: r.height,
            v: r.data
                .iter()
                .skip(c)
                .step_by(3)
                .map(|&x| x as f64)
                .collect(),
        }
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// 2x2 mean pooling; an odd trailing row or column is dropped.
    fn pool(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                v.push(
                    (self.v[i] + self.v[i + 1] + self.v[i + self.w] + self.v[i + self.w + 1]) / 4.0,
                );
            }
        }
        Plane { w, h, v }
    }

    /// Separable valid-mode filter.
    fn filter(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let ow = self.w + 1 - n;
        let oh = self.h + 1 - n;
        let mut tmp = vec![0f64; ow * self.h];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut v = vec![0f64; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                v[y * ow + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a * tmp[(y + j) * ow + x])
                    .sum();
            }
        }
        Plane { w: ow, h: oh, v }
    }
}

/// Normalized 1-D Gaussian of `size` taps, sigma 1.5.
fn gaussian_kernel(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM and mean contrast-structure term of one scale.
fn ssim_terms(a: &Plane, b: &Plane) -> (f64, f64) {
    let k = gaussian_kernel(SSIM_WINDOW.min(a.w).min(a.h));
    let mu_a = a.filter(&k);
    let mu_b = b.filter(&k);
    let aa = a.zip(a, |x, y| x * y).filter(&k);
    let bb = b.zip(b, |x, y| x * y).filter(&k);
    let ab = a.zip(b, |x, y| x * y).filter(&k);
    let n = mu_a.v.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.v.len() {
        let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
        let va = aa.v[i] - ma * ma;
        let vb = bb.v[i] - mb * mb;
        let cov = ab.v[i] - ma * mb;
        let c = (2.0 * cov + C2) / (va + vb + C2);
        cs += c;
        ssim += (2.0 * ma * mb + C1) / (ma * ma + mb * mb + C1) * c;
    }
    (ssim / n, cs / n)
}

/// Number of scales used for an image whose short side is `min_side`:
/// 1 + floor(log2(min_side / 11)), clamped to 1..=5.
pub fn ms_ssim_scales(min_side: usize) -> usize {
    let mut n = 1;
    while n < 5 && min_side >= SSIM_WINDOW << n {
        n += 1;
    }
    n
}

/// Multi-scale SSIM, averaged over the three channels. Negative per-scale
/// terms are clamped to 0 before exponentiation.
pub fn ms_ssim(a: &Raster, b: &Raster) -> Result<f64, MetricsError> {
    same_dims(a, b)?;
    let n = ms_ssim_scales(a.width.min(a.height));
    let total: f64 = MS_SSIM_WEIGHTS[..n].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..n].iter().map(|w| w / total).collect();
    let mut score = 0.0;
    for c in 0..3 {
        let (mut pa, mut pb) = (Plane::channel(a, c), Plane::channel(b, c));
        let mut prod = 1.0;
        for (j, &w) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&pa, &pb);
            if j + 1 == n {
                prod *= ssim.max(0.0).powf(w);
            } else {
                prod *= cs.max(0.0).powf(w);
                pa = pa.pool();
                pb = pb.pool();
            }
        }
        score += prod;
    }
    Ok(score / 3.0)
}
