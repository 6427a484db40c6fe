//! Binary PPM (P6) images with 8-bit samples, mapped to 3×H×W in [0, 1].

use std::path::Path;

use crate::error::{format_err, shape_err, Result};
use crate::tensor::Tensor;

/// Largest pixel count accepted by the decoder.
pub const MAX_PIXELS: usize = 1 << 24;

struct Header<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.buf.get(self.pos) {
            if b == b'#' {
                while self.buf.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.buf.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos || self.pos - start > 9 {
            return Err(format_err!("bad number in PPM header at byte {start}"));
        }
        Ok(std::str::from_utf8(&self.buf[start..self.pos])
            .expect("ascii digits")
            .parse()
            .expect("at most nine digits"))
    }
}

pub fn decode_ppm(buf: &[u8]) -> Result<Tensor<f32>> {
    if !buf.starts_with(b"P6") {
        return Err(format_err!("not a binary PPM"));
    }
    let mut h = Header { buf, pos: 2 };
    let width = h.number()?;
    let height = h.number()?;
    let maxval = h.number()?;
    if width == 0 || height == 0 || width.saturating_mul(height) > MAX_PIXELS {
        return Err(format_err!("unsupported PPM size {width}×{height}"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(format_err!("unsupported PPM maxval {maxval}"));
    }
    if !buf.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err!("PPM header not terminated"));
    }
    let data = &buf[h.pos + 1..];
    let n = width * height;
    if data.len() != 3 * n {
        return Err(format_err!("PPM payload has {} bytes, expected {}", data.len(), 3 * n));
    }
    let mut out = vec![0.0f32; 3 * n];
    for (p, px) in data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            if px[c] as usize > maxval {
                return Err(format_err!("sample exceeds maxval"));
            }
            out[c * n + p] = px[c] as f32 / maxval as f32;
        }
    }
    Tensor::new(vec![3, height, width], out)
}

/// Encodes a 3×H×W image, rounding each value to the nearest 8-bit level.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [3, height, width] = *image.shape() else {
        return Err(shape_err!("PPM needs a 3×H×W image, got {:?}", image.shape()));
    };
    let n = width * height;
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.reserve(3 * n);
    let d = image.data();
    for p in 0..n {
        for c in 0..3 {
            buf.push((d[c * n + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(buf)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_8bit_values() {
        let img = Tensor::from_fn(&[3, 5, 7], |i| (i % 256) as f32 / 255.0);
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn header_comments_and_maxval() {
        let mut buf = b"P6 # comment\n2 1\n# another\n15\n".to_vec();
        buf.extend_from_slice(&[15, 0, 0, 0, 15, 0]);
        let img = decode_ppm(&buf).unwrap();
        assert_eq!(img.shape(), &[3, 1, 2]);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n255\n\0\0").is_err());
        assert!(decode_ppm(b"P6\n0 1\n255\n").is_err());
        assert!(decode_ppm(b"P6\n1 1\n256\n\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n10\n\x0b\0\0").is_err());
        assert!(decode_ppm(b"P6\n99999999 99999999\n255\n").is_err());
        assert!(encode_ppm(&Tensor::zeros(&[1, 2, 2])).is_err());
    }
}
