//! Deterministic visual corruptions and time-indexed noise schedules.
//!
//! All corruptions act on frames already normalised to `[0, 1]` and clip
//! their output back into that range. Pixel-scale parameters are quoted for
//! a 64-pixel-wide frame and scale linearly with width. Per-severity tables
//! (index = severity − 1):
//!
//! | noise          | parameter                                   | 1    | 2    | 3    | 4    | 5    |
//! |----------------|---------------------------------------------|------|------|------|------|------|
//! | multiplicative | per-pixel gain ~ U[1−a, 1+a], a             | 0.15 | 0.25 | 0.35 | 0.50 | 0.65 |
//! | blur           | Gaussian σ (px)                             | 0.5  | 0.8  | 1.2  | 1.8  | 2.6  |
//! | rain           | streaks per 1000 px                         | 3    | 5    | 8    | 12   | 16   |
//! |                | streak length (px)                          | 4    | 5    | 6    | 8    | 10   |
//! |                | global dimming factor                       | 0.95 | 0.90 | 0.85 | 0.80 | 0.75 |
//! | snow           | flakes per 1000 px                          | 10   | 20   | 35   | 50   | 70   |
//! |                | whitening weight towards 0.9                | 0.05 | 0.10 | 0.15 | 0.20 | 0.30 |
//! | shadow         | darkening factor inside polygon             | 0.80 | 0.70 | 0.60 | 0.50 | 0.40 |
//! |                | polygons                                    | 1    | 1    | 2    | 2    | 3    |
//! | brightness     | additive offset δ                           | 0.1  | 0.2  | 0.3  | 0.4  | 0.5  |
//! | contrast       | gain c about the image mean                 | 0.4  | 0.3  | 0.2  | 0.1  | 0.05 |
//!
//! Stochastic noises (multiplicative, rain, snow, shadow) draw from a ChaCha
//! stream keyed by `(seed, frame index)`, so a frame's corruption does not
//! depend on the order frames are processed in.

mod schedule;

pub use schedule::{apply_schedule, apply_schedule_with, Episode, NoiseSchedule};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Noise types; `Clean` is always index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseId {
    Clean = 0,
    Multiplicative = 1,
    Blur = 2,
    Rain = 3,
    Snow = 4,
    Shadow = 5,
    Brightness = 6,
    Contrast = 7,
}

impl NoiseId {
    pub const ALL: [NoiseId; 8] = [
        NoiseId::Clean,
        NoiseId::Multiplicative,
        NoiseId::Blur,
        NoiseId::Rain,
        NoiseId::Snow,
        NoiseId::Shadow,
        NoiseId::Brightness,
        NoiseId::Contrast,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<NoiseId> {
        NoiseId::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown noise id {i}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseId::Clean => "clean",
            NoiseId::Multiplicative => "multiplicative",
            NoiseId::Blur => "blur",
            NoiseId::Rain => "rain",
            NoiseId::Snow => "snow",
            NoiseId::Shadow => "shadow",
            NoiseId::Brightness => "brightness",
            NoiseId::Contrast => "contrast",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            NoiseId::Multiplicative | NoiseId::Rain | NoiseId::Snow | NoiseId::Shadow
        )
    }
}

impl fmt::Display for NoiseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        NoiseId::ALL
            .iter()
            .copied()
            .find(|n| n.name() == s || (s.len() >= 4 && n.name().starts_with(&s)))
            .ok_or_else(|| Error::invalid(format!("unknown noise {s:?}")))
    }
}

pub const MULTIPLICATIVE_SPREAD: [f64; 5] = [0.15, 0.25, 0.35, 0.5, 0.65];
pub const BLUR_SIGMA: [f64; 5] = [0.5, 0.8, 1.2, 1.8, 2.6];
pub const RAIN_DENSITY: [f64; 5] = [3.0, 5.0, 8.0, 12.0, 16.0];
pub const RAIN_LENGTH: [f64; 5] = [4.0, 5.0, 6.0, 8.0, 10.0];
pub const RAIN_DIM: [f64; 5] = [0.95, 0.9, 0.85, 0.8, 0.75];
pub const SNOW_DENSITY: [f64; 5] = [10.0, 20.0, 35.0, 50.0, 70.0];
pub const SNOW_WHITEN: [f64; 5] = [0.05, 0.1, 0.15, 0.2, 0.3];
pub const SHADOW_FACTOR: [f64; 5] = [0.8, 0.7, 0.6, 0.5, 0.4];
pub const SHADOW_POLYGONS: [usize; 5] = [1, 1, 2, 2, 3];
pub const BRIGHTNESS_OFFSET: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const CONTRAST_GAIN: [f64; 5] = [0.4, 0.3, 0.2, 0.1, 0.05];

pub const DEFAULT_SEVERITY: u8 = 3;

fn check_severity(severity: u8) -> Result<usize> {
    if !(1..=5).contains(&severity) {
        return Err(Error::invalid(format!("severity {severity} outside 1..=5")));
    }
    Ok(severity as usize - 1)
}

/// RNG stream for one frame.
pub fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    rng
}

/// Corrupts a single image. `seed` keys the stochastic noises.
pub fn corrupt(img: &Image, noise: NoiseId, severity: u8, seed: u64) -> Result<Image> {
    corrupt_frame(img, noise, severity, seed, 0)
}

/// Corrupts frame `frame` of a sequence, keyed by `(seed, frame)`.
pub fn corrupt_frame(img: &Image, noise: NoiseId, severity: u8, seed: u64, frame: u64) -> Result<Image> {
    let s = check_severity(severity)?;
    if noise == NoiseId::Clean {
        return Ok(img.clone());
    }
    let scale = img.width as f64 / 64.0;
    let mut rng = frame_rng(seed, frame);
    let mut out = img.clone();
    match noise {
        NoiseId::Clean => unreachable!(),
        NoiseId::Multiplicative => {
            let a = MULTIPLICATIVE_SPREAD[s];
            let n = img.plane_len();
            for p in 0..n {
                let g = 1.0 + rng.random_range(-a..=a);
                for c in 0..img.channels {
                    out.data[c * n + p] *= g;
                }
            }
        }
        NoiseId::Blur => out = gaussian_blur(img, BLUR_SIGMA[s] * scale),
        NoiseId::Rain => rain(&mut out, s, scale, &mut rng),
        NoiseId::Snow => snow(&mut out, s, scale, &mut rng),
        NoiseId::Shadow => shadow(&mut out, s, &mut rng),
        NoiseId::Brightness => {
            let d = BRIGHTNESS_OFFSET[s];
            out.data.iter_mut().for_each(|v| *v += d);
        }
        NoiseId::Contrast => {
            let c = CONTRAST_GAIN[s];
            let m = img.mean();
            out.data.iter_mut().for_each(|v| *v = (*v - m) * c + m);
        }
    }
    out.clip_unit();
    Ok(out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w) = (img.height as i64, img.width as i64);
    let mirror = |i: i64, n: i64| -> usize {
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = img.clone();
    let mut out = img.clone();
    for c in 0..img.channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    acc += kv * img.at(c, y as usize, mirror(x + j as i64 - r, w));
                }
                *tmp.at_mut(c, y as usize, x as usize) = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    acc += kv * tmp.at(c, mirror(y + j as i64 - r, h), x as usize);
                }
                *out.at_mut(c, y as usize, x as usize) = acc;
            }
        }
    }
    out
}

fn count_for(density_per_1000: f64, img: &Image) -> usize {
    (density_per_1000 * img.plane_len() as f64 / 1000.0).round() as usize
}

fn rain(img: &mut Image, s: usize, scale: f64, rng: &mut ChaCha8Rng) {
    let dim = RAIN_DIM[s];
    img.data.iter_mut().for_each(|v| *v *= dim);
    let n = count_for(RAIN_DENSITY[s], img);
    let len = RAIN_LENGTH[s] * scale;
    let slant = 0.25;
    for _ in 0..n {
        let x0 = rng.random_range(0.0..img.width as f64);
        let y0 = rng.random_range(-len..img.height as f64);
        let steps = (len * 2.0).ceil() as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64 * len;
            let (x, y) = (x0 + slant * t, y0 + t);
            if x < 0.0 || y < 0.0 {
                continue;
            }
            let (xi, yi) = (x as usize, y as usize);
            if xi >= img.width || yi >= img.height {
                continue;
            }
            for c in 0..img.channels {
                let v = img.at_mut(c, yi, xi);
                *v = 0.6 * *v + 0.4 * 0.85;
            }
        }
    }
}

fn snow(img: &mut Image, s: usize, scale: f64, rng: &mut ChaCha8Rng) {
    let wgt = SNOW_WHITEN[s];
    img.data.iter_mut().for_each(|v| *v = *v * (1.0 - wgt) + 0.9 * wgt);
    let n = count_for(SNOW_DENSITY[s], img);
    for _ in 0..n {
        let cx = rng.random_range(0.0..img.width as f64);
        let cy = rng.random_range(0.0..img.height as f64);
        let rad = rng.random_range(0.5..1.5) * scale;
        let (x0, x1) = ((cx - rad).floor().max(0.0) as usize, ((cx + rad).ceil() as usize).min(img.width));
        let (y0, y1) = ((cy - rad).floor().max(0.0) as usize, ((cy + rad).ceil() as usize).min(img.height));
        for y in y0..y1 {
            for x in x0..x1 {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                if d2 <= rad * rad {
                    for c in 0..img.channels {
                        *img.at_mut(c, y, x) = 0.97;
                    }
                }
            }
        }
    }
}

fn shadow(img: &mut Image, s: usize, rng: &mut ChaCha8Rng) {
    let factor = SHADOW_FACTOR[s];
    let (w, h) = (img.width as f64, img.height as f64);
    for _ in 0..SHADOW_POLYGONS[s] {
        // convex quad spanning a random horizontal band
        let y_top = rng.random_range(0.2 * h..0.7 * h);
        let y_bot = (y_top + rng.random_range(0.2 * h..0.5 * h)).min(h);
        let xs: [f64; 4] = [
            rng.random_range(0.0..0.5 * w),
            rng.random_range(0.5 * w..w),
            rng.random_range(0.5 * w..w),
            rng.random_range(0.0..0.5 * w),
        ];
        for y in 0..img.height {
            let yc = y as f64 + 0.5;
            if yc < y_top || yc > y_bot {
                continue;
            }
            let t = (yc - y_top) / (y_bot - y_top).max(1e-9);
            let left = xs[0] + (xs[3] - xs[0]) * t;
            let right = xs[1] + (xs[2] - xs[1]) * t;
            for x in 0..img.width {
                let xc = x as f64 + 0.5;
                if xc >= left && xc <= right {
                    for c in 0..img.channels {
                        *img.at_mut(c, y, x) *= factor;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image() -> Image {
        let mut img = Image::new(3, 32, 48);
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..48 {
                    let v = 0.5 + 0.3 * ((x as f64 * 0.7 + c as f64).sin() * (y as f64 * 0.4).cos());
                    *img.at_mut(c, y, x) = v;
                }
            }
        }
        img
    }

    #[test]
    fn clean_is_identity() {
        let img = test_image();
        for s in 1..=5 {
            let out = corrupt(&img, NoiseId::Clean, s, 99).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn brightness_on_constant_image() {
        let img = Image::filled(3, 16, 16, 0.5);
        for s in 1..=5u8 {
            let out = corrupt(&img, NoiseId::Brightness, s, 0).unwrap();
            let expect = (0.5 + BRIGHTNESS_OFFSET[s as usize - 1]).clamp(0.0, 1.0);
            assert!(out.data.iter().all(|v| *v == expect), "severity {s}");
        }
    }

    #[test]
    fn stochastic_noises_are_deterministic_per_seed() {
        let img = test_image();
        for n in [NoiseId::Multiplicative, NoiseId::Rain, NoiseId::Snow, NoiseId::Shadow] {
            let a = corrupt(&img, n, 3, 5).unwrap();
            let b = corrupt(&img, n, 3, 5).unwrap();
            let c = corrupt(&img, n, 3, 6).unwrap();
            assert_eq!(a, b, "{n}");
            assert_ne!(a, c, "{n}");
        }
    }

    #[test]
    fn shape_and_range_preserved() {
        let img = test_image();
        for n in NoiseId::ALL {
            for s in 1..=5 {
                let out = corrupt(&img, n, s, 1).unwrap();
                assert_eq!(out.shape(), img.shape());
                assert!(out.is_normalized(), "{n} {s}");
            }
        }
    }

    #[test]
    fn severity_monotone_for_deterministic_noises() {
        let img = test_image();
        for n in [NoiseId::Blur, NoiseId::Brightness, NoiseId::Contrast] {
            let devs: Vec<f64> = (1..=5)
                .map(|s| corrupt(&img, n, s, 0).unwrap().mean_abs_diff(&img))
                .collect();
            assert!(devs.windows(2).all(|w| w[1] >= w[0]), "{n}: {devs:?}");
        }
    }

    #[test]
    fn invalid_arguments() {
        let img = test_image();
        assert!(corrupt(&img, NoiseId::Blur, 0, 0).is_err());
        assert!(corrupt(&img, NoiseId::Blur, 6, 0).is_err());
        assert!(NoiseId::from_index(8).is_err());
        assert!("fog".parse::<NoiseId>().is_err());
        assert_eq!("Bright".parse::<NoiseId>().unwrap(), NoiseId::Brightness);
        assert_eq!("cont".parse::<NoiseId>().unwrap(), NoiseId::Contrast);
        assert_eq!(NoiseId::Clean.index(), 0);
    }

    #[test]
    fn blur_kernel_normalised() {
        for s in BLUR_SIGMA {
            let k = gaussian_kernel(s);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let flat = Image::filled(1, 20, 20, 0.3);
        let b = gaussian_blur(&flat, 2.0);
        assert!(b.data.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
}
