//! Container: fixed 34-byte little-endian header followed by the z, y and
//! bypass streams in that order.

use super::CodecError;

pub const MAGIC: &[u8; 4] = b"LICP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 34;
/// Flag bit: the analysis/synthesis transforms ran on the int8 path.
pub const FLAG_FULL_INT: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub version: u8,
    pub flags: u8,
    pub width: u32,
    pub height: u32,
    pub model_id: u64,
    pub z_stream_len: u32,
    pub y_stream_len: u32,
    pub bypass_len: u32,
}

impl BitstreamHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(MAGIC);
        out[4] = self.version;
        out[5] = self.flags;
        out[6..10].copy_from_slice(&self.width.to_le_bytes());
        out[10..14].copy_from_slice(&self.height.to_le_bytes());
        out[14..22].copy_from_slice(&self.model_id.to_le_bytes());
        out[22..26].copy_from_slice(&self.z_stream_len.to_le_bytes());
        out[26..30].copy_from_slice(&self.y_stream_len.to_le_bytes());
        out[30..34].copy_from_slice(&self.bypass_len.to_le_bytes());
        out
    }

    /// Parses and validates magic and version before anything else.
    pub fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CodecError::BadMagic { expected: "LICP" });
        }
        if bytes.len() < 5 {
            return Err(CodecError::Truncated("bitstream header"));
        }
        if bytes[4] != VERSION {
            return Err(CodecError::UnsupportedVersion(bytes[4]));
        }
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated("bitstream header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        Ok(Self {
            version: bytes[4],
            flags: bytes[5],
            width: u32_at(6),
            height: u32_at(10),
            model_id: u64::from_le_bytes(bytes[14..22].try_into().unwrap()),
            z_stream_len: u32_at(22),
            y_stream_len: u32_at(26),
            bypass_len: u32_at(30),
        })
    }

    pub fn total_len(&self) -> u64 {
        HEADER_LEN as u64
            + self.z_stream_len as u64
            + self.y_stream_len as u64
            + self.bypass_len as u64
    }
}

/// Header plus borrowed views of the three streams.
#[derive(Debug, Clone, Copy)]
pub struct Container<'a> {
    pub header: BitstreamHeader,
    pub z_stream: &'a [u8],
    pub y_stream: &'a [u8],
    pub bypass: &'a [u8],
}

impl<'a> Container<'a> {
    /// Splits a container; the declared lengths must account for every byte.
    pub fn parse(bytes: &'a [u8]) -> Result<Self, CodecError> {
        let header = BitstreamHeader::parse(bytes)?;
        if header.total_len() != bytes.len() as u64 {
            return Err(CodecError::StreamLength {
                declared: header.total_len(),
                actual: bytes.len() as u64,
            });
        }
        let z_end = HEADER_LEN + header.z_stream_len as usize;
        let y_end = z_end + header.y_stream_len as usize;
        Ok(Self {
            header,
            z_stream: &bytes[HEADER_LEN..z_end],
            y_stream: &bytes[z_end..y_end],
            bypass: &bytes[y_end..],
        })
    }
}

pub fn write_container(header: &BitstreamHeader, z: &[u8], y: &[u8], bypass: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + z.len() + y.len() + bypass.len());
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(z);
    out.extend_from_slice(y);
    out.extend_from_slice(bypass);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> BitstreamHeader {
        BitstreamHeader {
            version: VERSION,
            flags: 0,
            width: 1920,
            height: 1080,
            model_id: 0x0102_0304_0506_0708,
            z_stream_len: 3,
            y_stream_len: 2,
            bypass_len: 1,
        }
    }

    #[test]
    fn layout_is_little_endian() {
        let b = header().to_bytes();
        assert_eq!(&b[..4], b"LICP");
        assert_eq!(b[4], 1);
        assert_eq!(&b[6..10], &[0x80, 0x07, 0, 0]);
        assert_eq!(&b[14..22], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(BitstreamHeader::parse(&b).unwrap(), header());
    }

    #[test]
    fn container_lengths_are_exact() {
        let bytes = write_container(&header(), &[1, 2, 3], &[4, 5], &[6]);
        let c = Container::parse(&bytes).unwrap();
        assert_eq!(
            (c.z_stream, c.y_stream, c.bypass),
            (&[1u8, 2, 3][..], &[4u8, 5][..], &[6u8][..])
        );
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            Container::parse(&longer),
            Err(CodecError::StreamLength { .. })
        ));
        assert!(Container::parse(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn magic_and_version_checked_first() {
        let mut b = header().to_bytes().to_vec();
        b[0] = b'X';
        assert!(matches!(
            BitstreamHeader::parse(&b),
            Err(CodecError::BadMagic { .. })
        ));
        assert!(matches!(
            BitstreamHeader::parse(&b"LICP\x02"[..]),
            Err(CodecError::UnsupportedVersion(2))
        ));
        assert!(matches!(
            BitstreamHeader::parse(&b"LICP\x01\x00"[..]),
            Err(CodecError::Truncated(_))
        ));
    }
}
