//! Byte-oriented range coder over 16-bit cumulative frequency tables.
//!
//! State is a 64-bit `low` (bit 32 is the pending carry) and a 32-bit
//! `range`. Intervals are split exactly as `floor(range * cum / 2^16)`, so the
//! only coding loss is the 32-bit termination. The encoder flushes the four
//! bytes of `low`; the decoder therefore finishes with `code - low == 0` and
//! every input byte consumed, which it checks to reject corrupted streams.

use super::cdf::{CdfTable, PRECISION_BITS};
use super::EntropyError;

const TOP: u32 = 1 << 24;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, table: &CdfTable, symbol: usize) -> Result<(), EntropyError> {
        if symbol >= table.alphabet_size() {
            return Err(EntropyError::SymbolOutOfRange {
                symbol,
                alphabet: table.alphabet_size(),
            });
        }
        let r = self.range as u64;
        let lo = (r * table.start(symbol) as u64) >> PRECISION_BITS;
        let hi = (r * table.start(symbol + 1) as u64) >> PRECISION_BITS;
        self.low += lo;
        self.range = (hi - lo) as u32;
        if self.low >> 32 != 0 {
            self.propagate_carry();
            self.low &= 0xFFFF_FFFF;
        }
        while self.range < TOP {
            self.out.push((self.low >> 24) as u8);
            self.low = (self.low << 8) & 0xFFFF_FFFF;
            self.range <<= 8;
        }
        Ok(())
    }

    fn propagate_carry(&mut self) {
        for b in self.out.iter_mut().rev() {
            if *b == 0xFF {
                *b = 0;
            } else {
                *b += 1;
                return;
            }
        }
        // Nested intervals never exceed the initial [0, 2^32 - 1).
        unreachable!("range coder carry past the first byte");
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.out.extend_from_slice(&(self.low as u32).to_be_bytes());
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    diff: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self, EntropyError> {
        if data.len() < 4 {
            return Err(EntropyError::Truncated);
        }
        let diff = u32::from_be_bytes([data[0], data[1], data[2], data[3]]);
        Ok(Self {
            data,
            pos: 4,
            diff,
            range: u32::MAX,
        })
    }

    pub fn decode(&mut self, table: &CdfTable) -> Result<usize, EntropyError> {
        let r = self.range as u64;
        let d = self.diff as u64;
        if d >= r {
            return Err(EntropyError::Corrupt(
                "code value outside the current interval",
            ));
        }
        // Largest s with floor(r * cum[s] / 2^16) <= d.
        let target = (((d + 1) << PRECISION_BITS) - 1) / r;
        let s = table.find(target as u32);
        let lo = (r * table.start(s) as u64) >> PRECISION_BITS;
        let hi = (r * table.start(s + 1) as u64) >> PRECISION_BITS;
        self.diff = (d - lo) as u32;
        self.range = (hi - lo) as u32;
        while self.range < TOP {
            let byte = *self.data.get(self.pos).ok_or(EntropyError::Truncated)?;
            self.pos += 1;
            self.diff = (self.diff << 8) | byte as u32;
            self.range <<= 8;
        }
        Ok(s)
    }

    /// Checks the termination: all bytes read and the code sitting exactly
    /// on the encoder's final `low`.
    pub fn finish(self) -> Result<(), EntropyError> {
        if self.pos != self.data.len() {
            return Err(EntropyError::TrailingBytes(self.data.len() - self.pos));
        }
        if self.diff != 0 {
            return Err(EntropyError::Corrupt("termination mismatch"));
        }
        Ok(())
    }
}

/// Codes `symbols[i]` with table `cdf_for(i)`.
pub fn range_encode<'t, F>(symbols: &[usize], cdf_for: F) -> Result<Vec<u8>, EntropyError>
where
    F: Fn(usize) -> &'t CdfTable,
{
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        enc.encode(cdf_for(i), s)?;
    }
    Ok(enc.finish())
}

/// Inverse of [`range_encode`] for exactly `count` symbols.
pub fn range_decode<'t, F>(
    bytes: &[u8],
    cdf_for: F,
    count: usize,
) -> Result<Vec<usize>, EntropyError>
where
    F: Fn(usize) -> &'t CdfTable,
{
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        out.push(dec.decode(cdf_for(i))?);
    }
    dec.finish()?;
    Ok(out)
}
