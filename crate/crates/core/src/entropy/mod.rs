//! Discretized Gaussian entropy model and the range coder that drives it.

mod bypass;
mod cdf;
mod gaussian;
mod range_coder;

pub use bypass::{bypass_decode, bypass_encode, BypassReader};
pub use cdf::{
    build_cdf_table, escape_index, scale_bins, sigma_to_bin, CdfTable, ScaleTable, A_MAX,
    PRECISION_BITS, SCALE_BINS, SIGMA_MAX, SIGMA_MIN, TOTAL,
};
pub use gaussian::{discretized_gaussian_pmf, normal_cdf, normal_upper_tail};
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder};

use thiserror::Error;

/// Width of each escaped value in the bypass stream.
pub const BYPASS_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("cumulative table is not a valid 16-bit CDF")]
    InvalidTable,
    #[error("symbol {symbol} outside alphabet of {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },
    #[error("stream truncated")]
    Truncated,
    #[error("{0} trailing bytes after the last symbol")]
    TrailingBytes(usize),
    #[error("corrupt stream: {0}")]
    Corrupt(&'static str),
    #[error("value {value} does not fit in {bits} bits")]
    BypassOverflow { value: i64, bits: u32 },
    #[error("bypass width {0} not in 1..=32")]
    BypassWidth(u32),
    #[error("bypass stream has {got} bytes, expected {expected}")]
    BypassLength { expected: usize, got: usize },
}

/// Alphabet indices for a run of integer values plus the escaped outliers,
/// in stream order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolStream {
    pub symbols: Vec<usize>,
    pub escaped: Vec<i32>,
}

/// Map values to table indices: v in [-a_max, a_max] -> v + a_max, anything
/// else -> escape (value kept in `escaped`).
pub fn values_to_symbols(values: &[i32], a_max: u32) -> SymbolStream {
    let a = a_max as i64;
    let mut stream = SymbolStream {
        symbols: Vec::with_capacity(values.len()),
        escaped: Vec::new(),
    };
    for &v in values {
        let v64 = v as i64;
        if (-a..=a).contains(&v64) {
            stream.symbols.push((v64 + a) as usize);
        } else {
            stream.symbols.push(escape_index(a_max));
            stream.escaped.push(v);
        }
    }
    stream
}

/// Inverse of [`values_to_symbols`].
pub fn symbols_to_values(stream: &SymbolStream, a_max: u32) -> Result<Vec<i32>, EntropyError> {
    let mut escaped = stream.escaped.iter();
    stream
        .symbols
        .iter()
        .map(|&s| {
            if s == escape_index(a_max) {
                escaped.next().copied().ok_or(EntropyError::Truncated)
            } else if s < escape_index(a_max) {
                Ok(s as i32 - a_max as i32)
            } else {
                Err(EntropyError::SymbolOutOfRange {
                    symbol: s,
                    alphabet: escape_index(a_max) + 1,
                })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_outliers_in_order() {
        let s = values_to_symbols(&[0, -3, 300, 2, -256, 255], 255);
        assert_eq!(s.symbols, vec![255, 252, 511, 257, 511, 510]);
        assert_eq!(s.escaped, vec![300, -256]);
        assert_eq!(
            symbols_to_values(&s, 255).unwrap(),
            vec![0, -3, 300, 2, -256, 255]
        );
    }
}
