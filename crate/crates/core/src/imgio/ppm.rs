//! Binary P6 PPM, maxval 255.
//!
//! Each header token (`P6`, width, height, maxval) is followed by exactly one
//! whitespace byte; the payload follows immediately. [`encode_ppm`] always
//! writes `P6\n<w> <h>\n255\n`, so canonical files round-trip byte for byte.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::Image;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("malformed PPM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u64),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected bytes after payload")]
    TrailingData(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r')
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// Reads a token and consumes the single separating whitespace byte.
    fn token(&mut self, what: &str) -> Result<&'a [u8], PpmError> {
        let start = self.pos;
        while self.pos < self.data.len() && !is_ws(self.data[self.pos]) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(PpmError::MalformedHeader(format!("missing {what}")));
        }
        if self.pos >= self.data.len() {
            return Err(PpmError::MalformedHeader(format!("no whitespace after {what}")));
        }
        let tok = &self.data[start..self.pos];
        self.pos += 1;
        Ok(tok)
    }

    fn number(&mut self, what: &str) -> Result<u64, PpmError> {
        let tok = self.token(what)?;
        std::str::from_utf8(tok)
            .ok()
            .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                PpmError::MalformedHeader(format!(
                    "{what} is not a decimal number: {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

pub fn decode_ppm(data: &[u8]) -> Result<Image, PpmError> {
    let mut cur = Cursor { data, pos: 0 };
    let magic = cur.token("magic")?;
    if magic != b"P6" {
        return Err(PpmError::MalformedHeader(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    if width == 0 || height == 0 {
        return Err(PpmError::MalformedHeader("zero dimension".into()));
    }
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| PpmError::MalformedHeader("dimensions overflow".into()))?;
    let payload = &data[cur.pos..];
    if payload.len() < expected {
        return Err(PpmError::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(PpmError::TrailingData(payload.len() - expected));
    }
    let pixels = payload.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(Image::new(width, height, pixels).expect("payload length checked"))
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.pixels().len() * 3);
    out.extend_from_slice(header.as_bytes());
    for p in image.pixels() {
        out.extend_from_slice(p);
    }
    out
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Image, PpmError> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|source| PpmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_ppm(&data)
}

pub fn save_ppm(image: &Image, path: impl AsRef<Path>) -> Result<(), PpmError> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)).map_err(|source| PpmError::Io {
        path: path.display().to_string(),
        source,
    })
}
