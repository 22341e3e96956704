//! Activation statistics for post-training calibration.
//!
//! The magnitude histogram covers [0, 2^e) with e the smallest exponent
//! above the running absmax. When the range doubles, adjacent bin pairs are
//! merged; a value's bin is then exactly what it would have been had the
//! wider range been used from the start, so accumulation order and merging
//! never change the result.

use std::str::FromStr;

use super::lsq::QP;
use super::QuantError;

pub const HIST_BINS: usize = 2048;
/// Smallest step a calibration may return.
pub const MIN_STEP: f64 = 1e-12;
/// Default activation percentile.
pub const ACTIVATION_PERCENTILE: f64 = 99.99;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationStats {
    count: u64,
    absmax: u64,
    exp: Option<i32>,
    hist: Vec<u64>,
}

impl Default for CalibrationStats {
    fn default() -> Self {
        Self::new()
    }
}

impl CalibrationStats {
    pub fn new() -> Self {
        Self {
            count: 0,
            absmax: 0f64.to_bits(),
            exp: None,
            hist: vec![0; HIST_BINS],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn absmax(&self) -> f64 {
        f64::from_bits(self.absmax)
    }

    pub fn histogram(&self) -> &[u64] {
        &self.hist
    }

    /// Upper end of the histogram range (0 while every value was zero).
    pub fn range(&self) -> f64 {
        self.exp.map_or(0.0, |e| libm::ldexp(1.0, e))
    }

    fn grow_to(&mut self, e: i32) {
        match self.exp {
            None => self.exp = Some(e),
            Some(cur) => {
                for _ in cur..e {
                    for j in 0..HIST_BINS / 2 {
                        self.hist[j] = self.hist[2 * j] + self.hist[2 * j + 1];
                    }
                    self.hist[HIST_BINS / 2..].fill(0);
                }
                self.exp = Some(cur.max(e));
            }
        }
    }

    pub fn observe(&mut self, values: &[f32]) {
        let m = values.iter().fold(0f64, |m, &v| m.max((v as f64).abs()));
        if m > self.absmax() {
            self.absmax = m.to_bits();
            // frexp: m = f * 2^e with f in [0.5, 1), so m < 2^e.
            self.grow_to(libm::frexp(m).1);
        }
        let scale_exp = self.exp.map_or(0, |e| 11 - e);
        for &v in values {
            let a = (v as f64).abs();
            let bin = if a == 0.0 {
                0
            } else {
                libm::ldexp(a, scale_exp) as usize
            };
            self.hist[bin.min(HIST_BINS - 1)] += 1;
        }
        self.count += values.len() as u64;
    }

    /// Exact, order-independent merge.
    pub fn merge(&mut self, other: &CalibrationStats) {
        let mut other = other.clone();
        if let Some(e) = other.exp {
            self.grow_to(e.max(self.exp.unwrap_or(e)));
        }
        if let Some(e) = self.exp {
            other.grow_to(e);
        }
        for (a, b) in self.hist.iter_mut().zip(&other.hist) {
            *a += b;
        }
        self.count += other.count;
        if other.absmax() > self.absmax() {
            self.absmax = other.absmax;
        }
    }

    /// Smallest histogram upper edge covering `p` percent of the values,
    /// capped at the absmax.
    pub fn percentile(&self, p: f64) -> Result<f64, QuantError> {
        if !(p > 0.0 && p <= 100.0) {
            return Err(QuantError::BadPercentile(p));
        }
        if self.count == 0 {
            return Err(QuantError::EmptyStats);
        }
        let Some(e) = self.exp else { return Ok(0.0) };
        let target = ((p / 100.0 * self.count as f64).ceil() as u64).clamp(1, self.count);
        let mut acc = 0u64;
        for (j, &h) in self.hist.iter().enumerate() {
            acc += h;
            if acc >= target {
                return Ok(libm::ldexp((j + 1) as f64, e - 11).min(self.absmax()));
            }
        }
        Ok(self.absmax())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibPolicy {
    Absmax,
    Percentile(f64),
}

impl Default for CalibPolicy {
    fn default() -> Self {
        CalibPolicy::Percentile(ACTIVATION_PERCENTILE)
    }
}

impl FromStr for CalibPolicy {
    type Err = String;

    /// `absmax` or `percentile:<p>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "absmax" {
            return Ok(CalibPolicy::Absmax);
        }
        s.strip_prefix("percentile:")
            .and_then(|p| p.parse().ok())
            .filter(|p: &f64| *p > 0.0 && *p <= 100.0)
            .map(CalibPolicy::Percentile)
            .ok_or_else(|| {
                format!("calibration policy must be 'absmax' or 'percentile:<p>', got {s:?}")
            })
    }
}

/// Step size for 8-bit signed quantization: clip value / 127, at least 1e-12.
pub fn calibrate(stats: &CalibrationStats, policy: CalibPolicy) -> Result<f64, QuantError> {
    if stats.count() == 0 {
        return Err(QuantError::EmptyStats);
    }
    let clip = match policy {
        CalibPolicy::Absmax => stats.absmax(),
        CalibPolicy::Percentile(p) => stats.percentile(p)?,
    };
    Ok((clip / QP).max(MIN_STEP))
}
