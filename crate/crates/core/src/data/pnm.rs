//! Binary PPM (P6) and PGM (P5) encode/decode, 8-bit only.
//!
//! Keeping raster I/O in-crate makes decoding bit-exact and byte-stable:
//! the same image always encodes to the same bytes, which the determinism
//! guarantees of the pipeline rely on.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("bad magic: expected {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("unexpected end of header")]
    UnexpectedEof,
    #[error("malformed header token")]
    BadToken,
    #[error("unsupported maxval {0}; only 255 is supported")]
    UnsupportedMaxval(u64),
    #[error("pixel payload has {actual} bytes, expected {expected}")]
    PayloadLength { expected: usize, actual: usize },
}

/// 8-bit RGB raster, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        self.to_ppm_with_comments(&[])
    }

    pub fn to_ppm_with_comments(&self, comments: &[String]) -> Vec<u8> {
        encode(b"P6", self.width, self.height, &self.pixels, comments)
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, PnmError> {
        let (width, height, pixels) = decode(bytes, "P6", 3)?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        self.to_pgm_with_comments(&[])
    }

    pub fn to_pgm_with_comments(&self, comments: &[String]) -> Vec<u8> {
        encode(b"P5", self.width, self.height, &self.pixels, comments)
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, PnmError> {
        let (width, height, pixels) = decode(bytes, "P5", 1)?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

fn encode(
    magic: &[u8],
    width: usize,
    height: usize,
    payload: &[u8],
    comments: &[String],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 64);
    out.extend_from_slice(magic);
    out.push(b'\n');
    for comment in comments {
        out.push(b'#');
        out.push(b' ');
        out.extend_from_slice(comment.as_bytes());
        out.push(b'\n');
    }
    out.extend_from_slice(format!("{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(payload);
    out
}

fn decode(
    bytes: &[u8],
    expected_magic: &'static str,
    samples_per_pixel: usize,
) -> Result<(usize, usize, Vec<u8>), PnmError> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.token()?;
    if magic != expected_magic.as_bytes() {
        return Err(PnmError::BadMagic {
            expected: expected_magic,
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let width = cursor.number()? as usize;
    let height = cursor.number()?;
    let maxval = cursor.number()?;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the payload.
    cursor.pos += 1;
    let expected = width * height as usize * samples_per_pixel;
    let payload = &bytes[cursor.pos.min(bytes.len())..];
    if payload.len() != expected {
        return Err(PnmError::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }
    Ok((width, height as usize, payload.to_vec()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skip whitespace and `#` comments (to end of line).
    fn skip_separators(&mut self) -> Result<(), PnmError> {
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
                Some(_) => return Ok(()),
                None => return Err(PnmError::UnexpectedEof),
            }
        }
    }

    fn token(&mut self) -> Result<Vec<u8>, PnmError> {
        self.skip_separators()?;
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PnmError::UnexpectedEof);
        }
        Ok(self.bytes[start..self.pos].to_vec())
    }

    fn number(&mut self) -> Result<u64, PnmError> {
        let tok = self.token()?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PnmError::BadToken)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip_is_identity() {
        let mut img = RgbImage::new(3, 2);
        img.set(0, 0, [1, 2, 3]);
        img.set(2, 1, [250, 128, 0]);
        let bytes = img.to_ppm();
        assert_eq!(RgbImage::from_ppm(&bytes).unwrap(), img);
        assert_eq!(img.to_ppm(), bytes);
    }

    #[test]
    fn pgm_roundtrip_with_comment() {
        let mut img = GrayImage::new(2, 2);
        img.pixels = vec![0, 64, 128, 255];
        let bytes = img.to_pgm_with_comments(&["se_d=-3.25".to_string()]);
        assert_eq!(GrayImage::from_pgm(&bytes).unwrap(), img);
        assert!(bytes.starts_with(b"P5\n# se_d=-3.25\n2 2\n255\n"));
    }

    #[test]
    fn rejects_wrong_magic() {
        let err = RgbImage::from_ppm(b"P5\n1 1\n255\n\0").unwrap_err();
        assert!(matches!(err, PnmError::BadMagic { .. }));
    }

    #[test]
    fn rejects_truncated_payload() {
        let err = RgbImage::from_ppm(b"P6\n2 2\n255\n\0\0\0").unwrap_err();
        assert!(matches!(
            err,
            PnmError::PayloadLength { expected: 12, actual: 3 }
        ));
    }

    #[test]
    fn rejects_unsupported_maxval() {
        let err = GrayImage::from_pgm(b"P5\n1 1\n65535\n\0\0").unwrap_err();
        assert!(matches!(err, PnmError::UnsupportedMaxval(65535)));
    }
}
