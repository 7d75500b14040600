use super::FormatError;

/// Tokenizer for the ASCII headers shared by PFM and PGM.
///
/// Tokens are separated by whitespace; `#` starts a comment that runs to the
/// end of the line. The payload begins after exactly one whitespace byte
/// following the last header token.
pub(super) struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    pub(super) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(super) fn magic(&mut self) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() < 2 {
            return Err(FormatError::MalformedHeader("missing magic number".into()));
        }
        self.pos = 2;
        Ok(&self.bytes[..2])
    }

    fn skip_separators(&mut self) -> Result<(), FormatError> {
        let start = self.pos;
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        if self.pos == start {
            return Err(FormatError::MalformedHeader(format!(
                "expected whitespace at byte {start}"
            )));
        }
        Ok(())
    }

    pub(super) fn token(&mut self, what: &str) -> Result<&'a str, FormatError> {
        self.skip_separators()?;
        let start = self.pos;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || *b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(FormatError::MalformedHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| FormatError::MalformedHeader(format!("{what} is not ASCII")))
    }

    pub(super) fn dimension(&mut self, what: &str) -> Result<usize, FormatError> {
        let token = self.token(what)?;
        match token.parse::<usize>() {
            Ok(v) if v > 0 && token.bytes().all(|b| b.is_ascii_digit()) => Ok(v),
            _ => Err(FormatError::MalformedHeader(format!(
                "invalid {what} `{token}`"
            ))),
        }
    }

    /// Consumes the single whitespace byte that ends the header and returns
    /// the payload.
    pub(super) fn payload(self) -> Result<&'a [u8], FormatError> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos + 1..]),
            _ => Err(FormatError::MalformedHeader(
                "header must end with a single whitespace byte".into(),
            )),
        }
    }
}

/// Byte count of a `width x height x bytes_per_pixel` payload, rejecting
/// sizes that cannot be addressed.
pub(super) fn payload_len(
    width: usize,
    height: usize,
    bytes_per_pixel: usize,
) -> Result<usize, FormatError> {
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bytes_per_pixel))
        .ok_or_else(|| {
            FormatError::MalformedHeader(format!("dimensions {width}x{height} overflow"))
        })
}
