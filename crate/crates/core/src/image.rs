//! Planar (CHW) f64 images with values in `[0, 1]`, plus 8-bit PNG IO.

use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// channel-major, then row-major
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "image data has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    pub fn clip_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Channel-wise concatenation.
    pub fn stack(a: &Image, b: &Image) -> Result<Image> {
        if (a.height, a.width) != (b.height, b.width) {
            return Err(Error::invalid("cannot stack images of different sizes"));
        }
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Image {
            channels: a.channels + b.channels,
            height: a.height,
            width: a.width,
            data,
        })
    }

    /// Rounds every value to the nearest multiple of 1/255.
    pub fn quantize_u8(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }

    /// Box-filtered resize (area averaging with fractional coverage).
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let mut out = Image::new(self.channels, height, width);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for c in 0..self.channels {
            for y in 0..height {
                let (y0, y1) = (y as f64 * sy, (y + 1) as f64 * sy);
                for x in 0..width {
                    let (x0, x1) = (x as f64 * sx, (x + 1) as f64 * sx);
                    let mut acc = 0.0;
                    let mut wsum = 0.0;
                    let mut yy = y0.floor() as usize;
                    while (yy as f64) < y1 && yy < self.height {
                        let wy = (y1.min(yy as f64 + 1.0) - y0.max(yy as f64)).max(0.0);
                        let mut xx = x0.floor() as usize;
                        while (xx as f64) < x1 && xx < self.width {
                            let wx = (x1.min(xx as f64 + 1.0) - x0.max(xx as f64)).max(0.0);
                            acc += wy * wx * self.at(c, yy, xx);
                            wsum += wy * wx;
                            xx += 1;
                        }
                        yy += 1;
                    }
                    *out.at_mut(c, y, x) = acc / wsum;
                }
            }
        }
        out
    }

    /// Writes an 8-bit PNG (gray for 1 channel, RGB for 3).
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::invalid(format!("cannot write {c}-channel PNG"))),
        };
        let n = self.plane_len();
        let mut bytes = Vec::with_capacity(n * self.channels);
        for i in 0..n {
            for c in 0..self.channels {
                bytes.push((self.data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_image_data(&bytes)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        Ok(())
    }

    /// Reads an 8- or 16-bit gray/RGB(A) PNG into `channels` channels
    /// (gray is replicated, alpha dropped).
    pub fn read_png(path: &Path, channels: usize) -> Result<Image> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dec = png::Decoder::new(std::io::BufReader::new(file));
        dec.set_transformations(png::Transformations::EXPAND);
        let mut reader = dec
            .read_info()
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let src_ch = info.color_type.samples();
        let wide = info.bit_depth == png::BitDepth::Sixteen;
        let sample = |i: usize| -> f64 {
            if wide {
                u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / 65535.0
            } else {
                buf[i] as f64 / 255.0
            }
        };
        let mut img = Image::new(channels, h, w);
        let n = w * h;
        for p in 0..n {
            for c in 0..channels {
                let sc = match src_ch {
                    1 | 2 => 0,
                    _ => c.min(2),
                };
                img.data[c * n + p] = sample(p * src_ch + sc);
            }
        }
        Ok(img)
    }
}
