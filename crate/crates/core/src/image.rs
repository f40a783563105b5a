//! Dense float images and the binary Netpbm formats used for dumps.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&color);
        }
        Self {
            height,
            width,
            channels: 3,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(
                height * width * channels,
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[p * c..(p + 1) * c]
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        Ok(())
    }

    pub fn mean_channel(&self, c: usize) -> f64 {
        let n = self.n_pixels();
        (0..n).map(|p| self.data[p * self.channels + c]).sum::<f64>() / n as f64
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot downsample {}x{} by {factor}",
                self.height, self.width
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (h, w, ch) = (self.height / factor, self.width / factor, self.channels);
        let mut out = Image::zeros(h, w, ch);
        let scale = 1.0 / (factor * factor) as f64;
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.index(y, x, 0);
                let dst = out.index(y / factor, x / factor, 0);
                for c in 0..ch {
                    out.data[dst + c] += self.data[src + c] * scale;
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`Image::downsample`]: spreads each gradient value evenly over its block.
    pub fn downsample_adjoint(&self, factor: usize) -> Image {
        if factor == 1 {
            return self.clone();
        }
        let (h, w, ch) = (self.height * factor, self.width * factor, self.channels);
        let mut out = Image::zeros(h, w, ch);
        let scale = 1.0 / (factor * factor) as f64;
        for y in 0..h {
            for x in 0..w {
                let src = self.index(y / factor, x / factor, 0);
                let dst = out.index(y, x, 0);
                for c in 0..ch {
                    out.data[dst + c] = self.data[src + c] * scale;
                }
            }
        }
        out
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// Binary PPM (P6, maxval 255). Requires three channels.
    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::shape("3 channels", self.channels));
        }
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.to_u8())?;
        Ok(())
    }

    /// Binary PGM (P5, maxval 255). Requires one channel.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::shape("1 channel", self.channels));
        }
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.to_u8())?;
        Ok(())
    }

    pub fn read_ppm<R: BufRead>(mut input: R) -> Result<Image> {
        let mut header = Vec::new();
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            header.clear();
            if input.read_until(b'\n', &mut header)? == 0 {
                return Err(Error::invalid("truncated PPM header"));
            }
            let line = String::from_utf8_lossy(&header);
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P6" || tokens[3] != "255" {
            return Err(Error::invalid("only P6 with maxval 255 is supported"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad PPM dimension {s:?}")))
        };
        let (width, height) = (parse(&tokens[1])?, parse(&tokens[2])?);
        let mut bytes = vec![0u8; width * height * 3];
        input.read_exact(&mut bytes)?;
        let data = bytes.into_iter().map(|b| b as f64 / 255.0).collect();
        Image::from_vec(height, width, 3, data)
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_adjoint_identity() {
        let img = Image::from_vec(4, 4, 1, (0..16).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let g = Image::from_vec(2, 2, 1, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let lhs = img.downsample(2).unwrap().dot(&g);
        let rhs = img.dot(&g.downsample_adjoint(2));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = Image::from_vec(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(img.downsample(2).unwrap().data, vec![0.5]);
        assert!(img.downsample(3).is_err());
    }

    #[test]
    fn ppm_round_trip_is_exact_on_8bit_values() {
        let data: Vec<f64> = (0..2 * 3 * 3).map(|v| (v * 13 % 256) as f64 / 255.0).collect();
        let img = Image::from_vec(2, 3, 3, data).unwrap();
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n3 2\n255\n"));
        let back = Image::read_ppm(&buf[..]).unwrap();
        assert_eq!(back, img);
    }
}
