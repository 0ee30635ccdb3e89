//! Minimal image containers and binary PPM/PGM (P6/P5) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Single-channel image with intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Image(format!(
                "{width}x{height} gray image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with edge replication for out-of-range coordinates.
    pub fn at_clamped(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample at a real-valued position, edge-replicated.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.at_clamped(xi, yi);
        let b = self.at_clamped(xi + 1, yi);
        let c = self.at_clamped(xi, yi + 1);
        let d = self.at_clamped(xi + 1, yi + 1);
        (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Image(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb
                .iter()
                .copied()
                .cycle()
                .take(width * height * 3)
                .collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Luma `0.299R + 0.587G + 0.114B`, scaled to `[0, 1]`.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Bilinear resize using pixel-centre alignment. Same-size input is
    /// returned unchanged.
    pub fn resize(&self, width: usize, height: usize) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(width * height * 3);
        let clamp_x = |x: isize| x.clamp(0, self.width as isize - 1) as usize;
        let clamp_y = |y: isize| y.clamp(0, self.height as isize - 1) as usize;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
            let y0 = fy.floor();
            let wy = fy - y0;
            let (ya, yb) = (clamp_y(y0 as isize), clamp_y(y0 as isize + 1));
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
                let x0 = fx.floor();
                let wx = fx - x0;
                let (xa, xb) = (clamp_x(x0 as isize), clamp_x(x0 as isize + 1));
                for c in 0..3 {
                    let p = |xx: usize, yy: usize| self.data[(yy * self.width + xx) * 3 + c] as f64;
                    let v = (1.0 - wy) * ((1.0 - wx) * p(xa, ya) + wx * p(xb, ya))
                        + wy * ((1.0 - wx) * p(xa, yb) + wx * p(xb, yb));
                    data.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    /// `H×W×3` tensor with channels scaled to `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let scale = T::from_f64_lossy(1.0 / 255.0);
        Tensor::new(
            &[self.height, self.width, 3],
            self.data
                .iter()
                .map(|&v| T::from_u8(v).unwrap() * scale)
                .collect(),
        )
        .expect("buffer length matches dimensions")
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        encode_pnm(b"P6", self.width, self.height, &self.data)
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self> {
        let (w, h, data) = decode_pnm(bytes, b"P6", 3)?;
        RgbImage::new(w, h, data)
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_ppm(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

/// 8-bit single-channel raster written as binary PGM (P5).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayMap {
    pub fn encode_pgm(&self) -> Vec<u8> {
        encode_pnm(b"P5", self.width, self.height, &self.data)
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let (width, height, data) = decode_pnm(bytes, b"P5", 1)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }
}

fn encode_pnm(magic: &[u8], width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(pixels.len() + 20);
    out.extend_from_slice(magic);
    out.extend_from_slice(format!("\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(pixels);
    out
}

fn decode_pnm(bytes: &[u8], magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Image(format!(
            "expected {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("malformed header".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Image(format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Image("zero image dimension".into()));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image("malformed header".into()));
    }
    pos += 1;
    let need = width * height * channels;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(Error::Image(format!(
            "truncated pixel data: need {need} bytes, got {}",
            body.len()
        )));
    }
    Ok((width, height, body[..need].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let img = RgbImage::new(3, 2, (0..18).map(|v| v as u8 * 13).collect()).unwrap();
        let bytes = img.encode_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(RgbImage::decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_header_comments_and_errors() {
        let mut bytes = b"P6 # comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = RgbImage::decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(1, 0), [4, 5, 6]);
        assert!(RgbImage::decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(RgbImage::decode_ppm(b"P6\n2 2\n255\n\0\0").is_err());
        assert!(RgbImage::decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn pgm_roundtrip() {
        let m = GrayMap {
            width: 2,
            height: 2,
            data: vec![0, 64, 128, 255],
        };
        assert_eq!(GrayMap::decode_pgm(&m.encode_pgm()).unwrap(), m);
    }

    #[test]
    fn luma_weights() {
        let img = RgbImage::new(1, 1, vec![255, 0, 0]).unwrap();
        assert!((img.to_gray().data[0] - 0.299).abs() < 1e-12);
        let white = RgbImage::filled(2, 2, [255, 255, 255]);
        assert!(white
            .to_gray()
            .data
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn resize_constant_and_identity() {
        let img = RgbImage::filled(7, 5, [10, 20, 30]);
        let r = img.resize(16, 16);
        assert!(r.data.chunks(3).all(|p| p == [10, 20, 30]));
        let src = RgbImage::new(2, 1, vec![0, 0, 0, 255, 255, 255]).unwrap();
        assert_eq!(src.resize(2, 1), src);
    }

    #[test]
    fn bilinear_sample_interpolates() {
        let g = GrayImage::from_fn(2, 2, |x, y| (x + 2 * y) as f64);
        assert!((g.sample(0.5, 0.5) - 1.5).abs() < 1e-12);
        assert_eq!(g.sample(5.0, -3.0), 1.0);
    }
}
