//! Grayscale Portable FloatMap (`Pf`) codec.
//!
//! Writes are always little-endian (scale `-1.0`); reads accept either
//! byte order. PFM stores rows bottom-to-top.

use std::path::Path;

use super::header::{payload_len, HeaderCursor};
use super::{FormatError, RasterIoError, ScoreMap};

pub fn encode_pfm(map: &ScoreMap) -> Vec<u8> {
    let (height, width) = map.dims();
    let header = format!("Pf\n{width} {height}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + 4 * width * height);
    out.extend_from_slice(header.as_bytes());
    for row in map.data().chunks_exact(width).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ScoreMap, FormatError> {
    let mut cursor = HeaderCursor::new(bytes);
    match cursor.magic()? {
        b"Pf" => {}
        b"PF" => return Err(FormatError::UnsupportedChannelCount),
        other => {
            return Err(FormatError::MalformedHeader(format!(
                "unknown magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    }
    let width = cursor.dimension("width")?;
    let height = cursor.dimension("height")?;
    let scale_token = cursor.token("scale")?;
    let scale: f64 = scale_token
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| FormatError::MalformedHeader(format!("invalid scale `{scale_token}`")))?;
    let little_endian = scale < 0.0;
    let payload = cursor.payload()?;

    let expected = payload_len(width, height, 4)?;
    if payload.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::TrailingBytes(payload.len() - expected));
    }

    let mut data = vec![0f32; width * height];
    for (file_row, chunk) in payload.chunks_exact(4 * width).enumerate() {
        let row = height - 1 - file_row;
        for (col, word) in chunk.chunks_exact(4).enumerate() {
            let word: [u8; 4] = word.try_into().unwrap();
            data[row * width + col] = if little_endian {
                f32::from_le_bytes(word)
            } else {
                f32::from_be_bytes(word)
            };
        }
    }
    for (index, &value) in data.iter().enumerate() {
        if !value.is_finite() {
            return Err(FormatError::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(FormatError::OutOfRange { index, value });
        }
    }
    Ok(ScoreMap::new(height, width, data).expect("validated above"))
}

pub fn write_pfm(map: &ScoreMap, path: impl AsRef<Path>) -> Result<(), RasterIoError> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(map)).map_err(|source| RasterIoError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ScoreMap, RasterIoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| RasterIoError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_pfm(&bytes).map_err(|source| RasterIoError::Format {
        path: path.to_owned(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_payload() {
        let map = ScoreMap::new(1, 1, vec![0.5]).unwrap();
        let bytes = encode_pfm(&map);
        assert_eq!(bytes, b"Pf\n1 1\n-1.0\n\x00\x00\x00\x3f");
    }

    #[test]
    fn rows_are_stored_bottom_up() {
        // Hand-encoded 2x2 file: bottom row [0.75, 1.0] first, then top row
        // [0.0, 0.25], each as little-endian IEEE-754 words.
        let mut file = b"Pf\n2 2\n-1.0\n".to_vec();
        file.extend_from_slice(&[0x00, 0x00, 0x40, 0x3f, 0x00, 0x00, 0x80, 0x3f]);
        file.extend_from_slice(&[0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3e]);
        let map = ScoreMap::new(2, 2, vec![0.0, 0.25, 0.75, 1.0]).unwrap();
        assert_eq!(encode_pfm(&map), file);
        assert_eq!(decode_pfm(&file).unwrap(), map);
    }

    #[test]
    fn big_endian_payload_is_accepted() {
        let mut file = b"Pf\n1 1\n1.0\n".to_vec();
        file.extend_from_slice(&0.25f32.to_be_bytes());
        assert_eq!(decode_pfm(&file).unwrap().data(), &[0.25]);
    }

    #[test]
    fn color_variant_is_rejected() {
        let mut file = b"PF\n1 1\n-1.0\n".to_vec();
        file.extend_from_slice(&[0; 12]);
        assert_eq!(decode_pfm(&file), Err(FormatError::UnsupportedChannelCount));
    }

    #[test]
    fn nan_is_reported_with_index() {
        let mut file = b"Pf\n3 1\n-1.0\n".to_vec();
        for v in [0.0f32, 0.5, f32::NAN] {
            file.extend_from_slice(&v.to_le_bytes());
        }
        let err = decode_pfm(&file).unwrap_err();
        assert_eq!(err, FormatError::NonFinite { index: 2 });
        assert_eq!(err.to_string(), "non-finite value at index 2");
    }

    #[test]
    fn out_of_range_is_rejected() {
        let mut file = b"Pf\n1 1\n-1.0\n".to_vec();
        file.extend_from_slice(&1.5f32.to_le_bytes());
        assert_eq!(
            decode_pfm(&file),
            Err(FormatError::OutOfRange {
                index: 0,
                value: 1.5
            })
        );
    }

    #[test]
    fn malformed_headers() {
        for bad in [
            &b""[..],
            b"P",
            b"Pf",
            b"Pf\n",
            b"Pf\nx 1\n-1.0\n",
            b"Pf\n0 1\n-1.0\n",
            b"Pf\n1 1\nabc\n",
            b"Pf\n1 1\n0\n",
            b"Pf\n1 1\n-1.0",
            b"P5\n1 1\n255\n",
        ] {
            assert!(
                matches!(decode_pfm(bad), Err(FormatError::MalformedHeader(_))),
                "{:?}",
                String::from_utf8_lossy(bad)
            );
        }
    }

    #[test]
    fn truncated_and_trailing() {
        let file = b"Pf\n2 1\n-1.0\n\0\0\0\0";
        assert_eq!(
            decode_pfm(file),
            Err(FormatError::Truncated {
                expected: 8,
                found: 4
            })
        );
        let file = b"Pf\n1 1\n-1.0\n\0\0\0\0\0";
        assert_eq!(decode_pfm(file), Err(FormatError::TrailingBytes(1)));
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        let file = b"Pf\n18446744073709551615 18446744073709551615\n-1.0\n";
        assert!(decode_pfm(file).is_err());
        let file = b"Pf\n100000 100000\n-1.0\n";
        assert!(matches!(
            decode_pfm(file),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn file_errors_carry_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing.pfm");
        let err = read_pfm(&path).unwrap_err();
        assert!(err.to_string().contains("missing.pfm"));
        let bad = dir.path().join("bad.pfm");
        std::fs::write(&bad, b"PF\n1 1\n-1.0\n").unwrap();
        assert!(matches!(
            read_pfm(&bad),
            Err(RasterIoError::Format {
                source: FormatError::UnsupportedChannelCount,
                ..
            })
        ));
    }
}
