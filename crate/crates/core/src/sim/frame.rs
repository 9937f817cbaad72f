//! Single-channel frames and their on-disk forms.
//!
//! Frames of up to 16 bits per pixel are stored as binary PGM (`P5`); the
//! maxval is `2^pixres - 1` and samples wider than a byte are big-endian.
//! Wider frames use a raw container: the magic `IPOLFRM1`, width and height
//! as little-endian `u32`, then one little-endian `u64` per sample.

use std::fmt;

pub const PGM_MAX_PIXRES: u32 = 16;
pub const MAX_PIXRES: u32 = 64;
const RAW_MAGIC: &[u8; 8] = b"IPOLFRM1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("malformed frame: {0}")]
    Format(String),
    #[error("frame dimensions: {0}")]
    Dimension(String),
}

#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub pixres: u32,
    /// Row-major samples, each at most `max_value(pixres)`.
    pub pixels: Vec<u64>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Frame({}x{}, {} bit", self.width, self.height, self.pixres)?;
        if self.pixels.len() <= 64 {
            write!(f, ", {:?}", self.pixels)?;
        }
        write!(f, ")")
    }
}

pub fn max_value(pixres: u32) -> u64 {
    if pixres >= 64 {
        u64::MAX
    } else {
        (1u64 << pixres) - 1
    }
}

impl Frame {
    pub fn filled(width: u32, height: u32, pixres: u32, value: u64) -> Frame {
        Frame {
            width,
            height,
            pixres,
            pixels: vec![value.min(max_value(pixres)); width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, pixres: u32, mut f: impl FnMut(u32, u32) -> u64) -> Frame {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).min(max_value(pixres)));
            }
        }
        Frame {
            width,
            height,
            pixres,
            pixels,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u64 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Sample at `(x, y)` with coordinates clamped into the frame.
    pub fn get_clamped(&self, x: i64, y: i64) -> u64 {
        let x = x.clamp(0, self.width as i64 - 1) as u32;
        let y = y.clamp(0, self.height as i64 - 1) as u32;
        self.get(x, y)
    }

    pub fn check(&self) -> Result<(), FrameError> {
        if self.width == 0 || self.height == 0 {
            return Err(FrameError::Dimension("frame must be at least 1x1".into()));
        }
        if !(1..=MAX_PIXRES).contains(&self.pixres) {
            return Err(FrameError::Dimension(format!("pixres {} outside 1..=64", self.pixres)));
        }
        if self.pixels.len() != self.width as usize * self.height as usize {
            return Err(FrameError::Dimension(format!(
                "{} samples for a {}x{} frame",
                self.pixels.len(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    /// PGM for `pixres <= 16`, the raw container otherwise.
    pub fn encode(&self) -> Vec<u8> {
        if self.pixres <= PGM_MAX_PIXRES {
            self.to_pgm()
        } else {
            self.to_raw()
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        assert!(self.pixres <= PGM_MAX_PIXRES, "PGM holds at most 16 bits per sample");
        let maxval = max_value(self.pixres);
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, maxval).into_bytes();
        for &p in &self.pixels {
            if maxval > 255 {
                out.extend_from_slice(&(p as u16).to_be_bytes());
            } else {
                out.push(p as u8);
            }
        }
        out
    }

    pub fn to_raw(&self) -> Vec<u8> {
        let mut out = RAW_MAGIC.to_vec();
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for &p in &self.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Reads either form. The raw container does not record `pixres`, so it
    /// must be supplied; for PGM it is derived from the maxval.
    pub fn decode(bytes: &[u8], raw_pixres: Option<u32>) -> Result<Frame, FrameError> {
        if bytes.starts_with(RAW_MAGIC) {
            let pixres = raw_pixres.ok_or_else(|| FrameError::Format("raw frame needs an explicit pixres".into()))?;
            Frame::from_raw(bytes, pixres)
        } else {
            Frame::from_pgm(bytes)
        }
    }

    pub fn from_raw(bytes: &[u8], pixres: u32) -> Result<Frame, FrameError> {
        let body = bytes
            .strip_prefix(RAW_MAGIC)
            .ok_or_else(|| FrameError::Format("missing raw frame magic".into()))?;
        if body.len() < 8 {
            return Err(FrameError::Format("truncated raw frame header".into()));
        }
        let width = u32::from_le_bytes(body[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(body[4..8].try_into().unwrap());
        let data = &body[8..];
        let expected = width as usize * height as usize * 8;
        if data.len() != expected {
            return Err(FrameError::Format(format!(
                "raw frame carries {} data bytes, expected {expected}",
                data.len()
            )));
        }
        let pixels: Vec<u64> = data.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(p) = pixels.iter().find(|&&p| p > max_value(pixres)) {
            return Err(FrameError::Format(format!("sample {p} exceeds {pixres}-bit range")));
        }
        let frame = Frame {
            width,
            height,
            pixres,
            pixels,
        };
        frame.check()?;
        Ok(frame)
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Frame, FrameError> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        if magic != "P5" {
            return Err(FrameError::Format(format!("expected binary PGM (P5), found `{magic}`")));
        }
        let width = header_number(bytes, &mut pos, "width")?;
        let height = header_number(bytes, &mut pos, "height")?;
        let maxval = header_number(bytes, &mut pos, "maxval")?;
        if !(1..=65535).contains(&maxval) {
            return Err(FrameError::Format(format!("maxval {maxval} outside 1..=65535")));
        }
        // exactly one whitespace byte separates the header from the samples
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err(FrameError::Format("missing whitespace after maxval".into())),
        }
        let wide = maxval > 255;
        let count = width as usize * height as usize;
        let data = &bytes[pos..];
        let sample_bytes = if wide { 2 } else { 1 };
        if data.len() < count * sample_bytes {
            return Err(FrameError::Format(format!(
                "expected {} bytes of samples, found {}",
                count * sample_bytes,
                data.len()
            )));
        }
        let pixels: Vec<u64> = if wide {
            data.chunks_exact(2).take(count).map(|c| u16::from_be_bytes([c[0], c[1]]) as u64).collect()
        } else {
            data[..count].iter().map(|&b| b as u64).collect()
        };
        if let Some(p) = pixels.iter().find(|&&p| p > maxval) {
            return Err(FrameError::Format(format!("sample {p} exceeds maxval {maxval}")));
        }
        let pixres = 64 - maxval.leading_zeros();
        let frame = Frame {
            width: width as u32,
            height: height as u32,
            pixres,
            pixels,
        };
        frame.check()?;
        Ok(frame)
    }
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, FrameError> {
    loop {
        while bytes.get(*pos).is_some_and(u8::is_ascii_whitespace) {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    if start == *pos {
        return Err(FrameError::Format("truncated PGM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| FrameError::Format("non-ASCII PGM header".into()))
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u64, FrameError> {
    let token = header_token(bytes, pos)?;
    let value: u64 = token
        .parse()
        .map_err(|_| FrameError::Format(format!("bad PGM {what} `{token}`")))?;
    if what != "maxval" && !(1..=u32::MAX as u64).contains(&value) {
        return Err(FrameError::Format(format!("bad PGM {what} {value}")));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_header_layout() {
        let f = Frame::from_fn(2, 1, 12, |x, _| x as u64 * 4095);
        assert_eq!(f.to_pgm(), b"P5\n2 1\n4095\n\x00\x00\x0f\xff".to_vec());
        let g = Frame::from_fn(3, 1, 8, |x, _| x as u64);
        assert_eq!(g.to_pgm(), b"P5\n3 1\n255\n\x00\x01\x02".to_vec());
    }

    #[test]
    fn pgm_comments_and_errors() {
        let f = Frame::from_pgm(b"P5 # comment\n2 # w\n1\n15\n\x03\x0f").unwrap();
        assert_eq!(f.pixres, 4);
        assert_eq!(f.pixels, [3, 15]);
        assert!(Frame::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(Frame::from_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(Frame::from_pgm(b"P5\n1 1\n15\n\xff").is_err());
        assert!(Frame::from_pgm(b"P5\n0 1\n255\n").is_err());
    }

    #[test]
    fn raw_needs_pixres() {
        let f = Frame::filled(2, 2, 40, 1 << 39);
        let bytes = f.encode();
        assert!(bytes.starts_with(RAW_MAGIC));
        assert!(Frame::decode(&bytes, None).is_err());
        assert_eq!(Frame::decode(&bytes, Some(40)).unwrap(), f);
        assert!(Frame::decode(&bytes, Some(20)).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(w in 1u32..6, h in 1u32..6, pixres in 1u32..=64, seed in any::<u64>()) {
            let f = Frame::from_fn(w, h, pixres, |x, y| seed.rotate_left(x * 7 + y * 13) & max_value(pixres));
            let back = Frame::decode(&f.encode(), Some(pixres)).unwrap();
            prop_assert_eq!(back.pixels, f.pixels);
            if pixres > PGM_MAX_PIXRES {
                prop_assert_eq!(back.pixres, pixres);
            }
        }
    }
}
