//! Binary PGM (`P5`) and PFM (`Pf` / `PF`) reading and writing.
//!
//! PFM stores rows bottom-to-top; a negative scale marks little-endian
//! samples and a positive one big-endian. Writers always emit
//! little-endian with scale `-1.0`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, "unexpected end of header"));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| Error::format(start, "header token is not ASCII"))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        self.skip_space_and_comments();
        let at = self.pos;
        self.token()?
            .parse()
            .map_err(|_| Error::format(at, format!("invalid {what}")))
    }

    /// Consumes the single whitespace byte that ends a header.
    fn end_header(&mut self) -> Result<()> {
        match self.data.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::format(self.pos, "missing whitespace after header")),
        }
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.data.len() {
            return Err(Error::format(
                self.data.len(),
                format!("truncated payload: expected {len} bytes from offset {}", self.pos),
            ));
        }
        Ok(&self.data[self.pos..end])
    }
}

/// Decodes a binary PGM; samples keep their integer values.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::format(0, "not a binary PGM (expected P5)"));
    }
    let mut c = Cursor { data: bytes, pos: 2 };
    let width: usize = c.number("width")?;
    let height: usize = c.number("height")?;
    let at = c.pos;
    let maxval: u32 = c.number("maxval")?;
    if maxval != 255 && maxval != 65535 {
        return Err(Error::format(at, format!("unsupported maxval {maxval}")));
    }
    c.end_header()?;
    let bps = if maxval > 255 { 2 } else { 1 };
    let raw = c.payload(width * height * bps)?;
    let data = if bps == 1 {
        raw.iter().map(|&b| b as f64).collect()
    } else {
        raw.chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64)
            .collect()
    };
    Tensor::new(1, height, width, data)
}

/// Encodes channel 0 as a binary PGM. Samples must be integers in
/// `0..=maxval`; `maxval` is 255 or 65535.
pub fn encode_pgm(t: &Tensor, maxval: u32) -> Result<Vec<u8>> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::invalid("pgm", format!("unsupported maxval {maxval}")));
    }
    if t.channels() != 1 {
        return Err(Error::invalid("pgm", format!("expects one channel, got {}", t.shape())));
    }
    let mut out = format!("P5\n{} {}\n{}\n", t.width(), t.height(), maxval).into_bytes();
    for (i, &v) in t.data().iter().enumerate() {
        if v.fract() != 0.0 || v < 0.0 || v > maxval as f64 {
            return Err(Error::invalid(
                "pgm",
                format!("sample {i} = {v} is not an integer in 0..={maxval}"),
            ));
        }
        if maxval == 255 {
            out.push(v as u8);
        } else {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    }
    Ok(out)
}

/// Decodes `Pf` (one channel) or `PF` (three interleaved channels).
pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor> {
    let channels = if bytes.starts_with(b"Pf") {
        1
    } else if bytes.starts_with(b"PF") {
        3
    } else {
        return Err(Error::format(0, "not a PFM (expected Pf or PF)"));
    };
    let mut c = Cursor { data: bytes, pos: 2 };
    let width: usize = c.number("width")?;
    let height: usize = c.number("height")?;
    let at = c.pos;
    let scale: f64 = c.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(at, "scale must be non-zero"));
    }
    c.end_header()?;
    let little = scale < 0.0;
    let raw = c.payload(width * height * channels * 4)?;
    let mut data = vec![0.0; channels * width * height];
    for (i, s) in raw.chunks_exact(4).enumerate() {
        let b = [s[0], s[1], s[2], s[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        if !v.is_finite() {
            return Err(Error::format(c.pos + 4 * i, "non-finite sample"));
        }
        let ch = i % channels;
        let px = i / channels;
        let (row, x) = (px / width, px % width);
        let y = height - 1 - row;
        data[(ch * height + y) * width + x] = v as f64;
    }
    Tensor::new(channels, height, width, data)
}

/// Encodes a one- or three-channel tensor as little-endian PFM. Values are
/// narrowed to 32-bit floats.
pub fn encode_pfm(t: &Tensor) -> Result<Vec<u8>> {
    let tag = match t.channels() {
        1 => "Pf",
        3 => "PF",
        n => return Err(Error::invalid("pfm", format!("cannot store {n} channels"))),
    };
    let (h, w) = (t.height(), t.width());
    let mut out = format!("{tag}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(t.len() * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..t.channels() {
                out.extend_from_slice(&(t.at(c, y, x) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Pfm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(Self::Pgm),
            "pfm" => Some(Self::Pfm),
            _ => None,
        }
    }
}

pub fn read_image(path: &Path, format: ImageFormat) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    match format {
        ImageFormat::Pgm => decode_pgm(&bytes),
        ImageFormat::Pfm => decode_pfm(&bytes),
    }
}

/// Scales channel 0 linearly so `min -> 0` and `max -> 255`, rounding to
/// the nearest level. Constant maps render as all zeros.
pub fn render_preview(t: &Tensor) -> (Tensor, f64, f64) {
    let plane = t.plane(0);
    let min = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let max = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let img = Tensor::from_fn(1, t.height(), t.width(), |_, y, x| {
        if span > 0.0 {
            ((t.at(0, y, x) - min) / span * 255.0).round_ties_even()
        } else {
            0.0
        }
    });
    (img, min, max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Shape;

    #[test]
    fn pgm_decode_direct() {
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[128; 4]);
        let t = decode_pgm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 2, 2));
        assert!(t.data().iter().all(|&v| v == 128.0));
    }

    #[test]
    fn pgm_round_trip_16bit() {
        let t = Tensor::from_fn(1, 3, 4, |_, y, x| (y * 20000 + x * 7) as f64);
        let bytes = encode_pgm(&t, 65535).unwrap();
        assert_eq!(decode_pgm(&bytes).unwrap(), t);
        assert!(encode_pgm(&t, 255).is_err());
        assert!(encode_pgm(&t.map(|v| v + 0.5), 65535).is_err());
    }

    #[test]
    fn pgm_errors_report_offsets() {
        let err = decode_pgm(b"P5\n2 2\n255\n\x01\x02").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 13, .. }), "{err}");
        assert!(matches!(decode_pgm(b"P6\n"), Err(Error::Format { offset: 0, .. })));
        let err = decode_pgm(b"P5\n2 x\n255\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 5, .. }), "{err}");
        assert!(decode_pgm(b"P5\n1 1\n100\n\x00").is_err());
    }

    #[test]
    fn pfm_round_trip_bits() {
        let t = Tensor::seeded_uniform(Shape::new(1, 5, 7), 3, -10.0, 10.0).map(|v| v as f32 as f64);
        let back = decode_pfm(&encode_pfm(&t).unwrap()).unwrap();
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let rgb = Tensor::seeded_uniform(Shape::new(3, 2, 3), 4, 0.0, 1.0).map(|v| v as f32 as f64);
        assert_eq!(decode_pfm(&encode_pfm(&rgb).unwrap()).unwrap(), rgb);
        assert!(encode_pfm(&Tensor::zeros(2, 1, 1)).is_err());
    }

    #[test]
    fn pfm_endianness_fixture() {
        // 2x1 image, bottom row first: values 1.5 then -2.0
        let mut le = b"Pf\n2 1\n-1.0\n".to_vec();
        le.extend_from_slice(&[0x00, 0x00, 0xc0, 0x3f, 0x00, 0x00, 0x00, 0xc0]);
        let mut be = b"Pf\n2 1\n1.0\n".to_vec();
        be.extend_from_slice(&[0x3f, 0xc0, 0x00, 0x00, 0xc0, 0x00, 0x00, 0x00]);
        for bytes in [le, be] {
            assert_eq!(decode_pfm(&bytes).unwrap().data(), &[1.5, -2.0]);
        }
        // rows are stored bottom-up
        let mut two = b"Pf\n1 2\n-1\n".to_vec();
        two.extend_from_slice(&1.0f32.to_le_bytes());
        two.extend_from_slice(&2.0f32.to_le_bytes());
        assert_eq!(decode_pfm(&two).unwrap().data(), &[2.0, 1.0]);
    }

    #[test]
    fn pfm_truncated() {
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        bytes.extend_from_slice(&[0; 12]);
        let err = decode_pfm(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 24, .. }), "{err}");
        assert!(decode_pfm(b"Pf\n2 2\n0\n").is_err());
    }

    #[test]
    fn preview_normalises() {
        let t = Tensor::new(1, 1, 3, vec![-1.0, 0.0, 1.0]).unwrap();
        let (img, lo, hi) = render_preview(&t);
        assert_eq!((lo, hi), (-1.0, 1.0));
        assert_eq!(img.data(), &[0.0, 128.0, 255.0]);
        let (flat, _, _) = render_preview(&Tensor::filled(1, 2, 2, 3.0));
        assert!(flat.data().iter().all(|&v| v == 0.0));
    }
}
