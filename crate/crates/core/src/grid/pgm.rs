//! Binary (`P5`) PGM codec for masks. Foreground is written as 255; on
//! read, bytes `>= 128` are foreground.

use std::path::Path;

use super::header::{payload_len, HeaderCursor};
use super::{BinaryMask, FormatError, RasterIoError};

pub fn encode_pgm(mask: &BinaryMask) -> Vec<u8> {
    let (height, width) = mask.dims();
    let header = format!("P5\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + width * height);
    out.extend_from_slice(header.as_bytes());
    out.extend(mask.data().iter().map(|&v| if v == 1 { 255u8 } else { 0 }));
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<BinaryMask, FormatError> {
    let mut cursor = HeaderCursor::new(bytes);
    let magic = cursor.magic()?;
    if magic != b"P5" {
        return Err(FormatError::MalformedHeader(format!(
            "unknown magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = cursor.dimension("width")?;
    let height = cursor.dimension("height")?;
    let maxval_token = cursor.token("maxval")?;
    let maxval: u32 = maxval_token
        .parse()
        .map_err(|_| FormatError::MalformedHeader(format!("invalid maxval `{maxval_token}`")))?;
    if maxval != 255 {
        return Err(FormatError::UnsupportedMaxval(maxval));
    }
    let payload = cursor.payload()?;
    let expected = payload_len(width, height, 1)?;
    if payload.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::TrailingBytes(payload.len() - expected));
    }
    let data = payload.iter().map(|&b| u8::from(b >= 128)).collect();
    Ok(BinaryMask::new(height, width, data).expect("validated above"))
}

pub fn write_pgm(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), RasterIoError> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(mask)).map_err(|source| RasterIoError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<BinaryMask, RasterIoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| RasterIoError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_pgm(&bytes).map_err(|source| RasterIoError::Format {
        path: path.to_owned(),
        source,
    })
}
