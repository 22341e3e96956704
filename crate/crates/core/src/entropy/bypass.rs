//! Fixed-width two's complement packing, MSB first, for escaped values.

use super::EntropyError;

fn check_bits(bits: u32) -> Result<(), EntropyError> {
    if (1..=32).contains(&bits) {
        Ok(())
    } else {
        Err(EntropyError::BypassWidth(bits))
    }
}

pub fn bypass_encode(values: &[i32], bits: u32) -> Result<Vec<u8>, EntropyError> {
    check_bits(bits)?;
    let lo = -(1i64 << (bits - 1));
    let hi = (1i64 << (bits - 1)) - 1;
    let mut out = Vec::with_capacity((values.len() * bits as usize).div_ceil(8));
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    for &v in values {
        if !(lo..=hi).contains(&(v as i64)) {
            return Err(EntropyError::BypassOverflow {
                value: v as i64,
                bits,
            });
        }
        let mask = if bits == 32 {
            u32::MAX as u64
        } else {
            (1u64 << bits) - 1
        };
        acc = (acc << bits) | (v as u32 as u64 & mask);
        filled += bits;
        while filled >= 8 {
            filled -= 8;
            out.push((acc >> filled) as u8);
        }
        acc &= (1u64 << filled) - 1;
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
    Ok(out)
}

pub fn bypass_decode(bytes: &[u8], bits: u32, count: usize) -> Result<Vec<i32>, EntropyError> {
    check_bits(bits)?;
    let expected = (count * bits as usize).div_ceil(8);
    if bytes.len() != expected {
        return Err(EntropyError::BypassLength {
            expected,
            got: bytes.len(),
        });
    }
    let mut reader = BypassReader::new(bytes, bits);
    (0..count).map(|_| reader.next_value()).collect()
}

/// Sequential reader over a bypass stream whose value count is not known up
/// front (escapes are discovered while range decoding).
#[derive(Debug, Clone)]
pub struct BypassReader<'a> {
    bytes: &'a [u8],
    bits: u32,
    bit_pos: usize,
}

impl<'a> BypassReader<'a> {
    pub fn new(bytes: &'a [u8], bits: u32) -> Self {
        Self {
            bytes,
            bits,
            bit_pos: 0,
        }
    }

    pub fn next_value(&mut self) -> Result<i32, EntropyError> {
        let end = self.bit_pos + self.bits as usize;
        if end > self.bytes.len() * 8 {
            return Err(EntropyError::Truncated);
        }
        let mut v: u64 = 0;
        for i in self.bit_pos..end {
            let bit = (self.bytes[i / 8] >> (7 - i % 8)) & 1;
            v = (v << 1) | bit as u64;
        }
        self.bit_pos = end;
        // Sign-extend from `bits`.
        let shift = 64 - self.bits;
        Ok(((v << shift) as i64 >> shift) as i32)
    }

    /// Whether the stream was consumed exactly (padding bits only left).
    pub fn is_exhausted(&self) -> bool {
        self.bytes.len() == self.bit_pos.div_ceil(8)
    }
}
