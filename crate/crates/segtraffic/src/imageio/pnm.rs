//! Binary PGM (P5) read/write and binary PPM (P6) read with luma conversion.

use crate::error::{Error, Result};
use crate::imageio::Frame;

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Skips whitespace and `#` comments (comment runs to end of line).
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn read_number(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::Format(format!("missing {what} in header")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse()
            .map_err(|_| Error::Format(format!("{what} out of range")))
    }
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}",
            std::str::from_utf8(magic).unwrap()
        )));
    }
    let mut p = HeaderParser::new(&bytes[2..]);
    let width = p.read_number("width")?;
    let height = p.read_number("height")?;
    let maxval = p.read_number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!(
            "unsupported maxval {maxval} (must be 1..=255)"
        )));
    }
    // exactly one whitespace byte separates the header from the payload
    if p.pos >= bytes.len() - 2 || !bytes[2 + p.pos].is_ascii_whitespace() {
        return Err(Error::Format("missing separator before pixel data".into()));
    }
    Ok((width, height, 2 + p.pos + 1))
}

/// Reads a binary PGM (`P5`) image with maxval <= 255.
pub fn read_pgm(bytes: &[u8]) -> Result<Frame> {
    let (width, height, offset) = parse_header(bytes, b"P5")?;
    let need = width * height;
    let payload = bytes
        .get(offset..offset + need)
        .ok_or_else(|| Error::Format(format!("truncated payload: need {need} pixel bytes")))?;
    Frame::new(width, height, payload.to_vec())
}

/// Reads a binary PPM (`P6`) image and converts it to grayscale with
/// `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn read_ppm_luma(bytes: &[u8]) -> Result<Frame> {
    let (width, height, offset) = parse_header(bytes, b"P6")?;
    let need = width * height * 3;
    let payload = bytes
        .get(offset..offset + need)
        .ok_or_else(|| Error::Format(format!("truncated payload: need {need} pixel bytes")))?;
    let data = payload
        .chunks_exact(3)
        .map(|rgb| {
            let luma = 0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64;
            luma.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Frame::new(width, height, data)
}

/// Reads either supported format, dispatching on the magic bytes.
pub fn read_frame(bytes: &[u8]) -> Result<Frame> {
    match bytes.get(..2) {
        Some(b"P5") => read_pgm(bytes),
        Some(b"P6") => read_ppm_luma(bytes),
        _ => Err(Error::Format(
            "unrecognized image magic (want P5 or P6)".into(),
        )),
    }
}

/// Writes the canonical binary PGM encoding: `P5\n<w> <h>\n255\n` + raw pixels.
pub fn write_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.data());
    out
}
