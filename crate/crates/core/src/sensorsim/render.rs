//! Projective renderer: a forward-looking camera pitched towards a
//! procedurally textured ground plane, with a distant landmark band above
//! the horizon.
//!
//! Body frame is x forward, y left, z up. The camera sits `CAMERA_HEIGHT`
//! above the body origin, pitched down by `CAMERA_PITCH`. Frames are 2×2
//! supersampled and quantized to 8 bits, so PNG persistence is lossless.

use nalgebra::Vector3;

use super::SceneConfig;
use crate::exec::Exec;
use crate::geometry::{Pose, Trajectory};
use crate::image::Image;

pub const CAMERA_HEIGHT: f64 = 1.7;
pub const CAMERA_PITCH: f64 = 0.45; // rad, ≈26°
pub const HORIZONTAL_FOV: f64 = 1.3; // rad, ≈74°
/// Ground beyond this range fades to a flat haze colour.
const FOG_START: f64 = 18.0;
const FOG_END: f64 = 30.0;
const HAZE: [f64; 3] = [0.55, 0.55, 0.6];

fn hash(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = hash(seed ^ hash((ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Smooth value noise in `[-1, 1]` with unit lattice spacing.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (x - fx, y - fy);
    let q = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let (sx, sy) = (q(tx), q(ty));
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

/// Deterministic ground and skyline appearance for one scene seed.
#[derive(Debug, Clone)]
pub struct SceneTexture {
    seed: u64,
    /// lattice cells per meter
    freq: f64,
}

impl SceneTexture {
    pub fn new(cfg: &SceneConfig) -> Self {
        SceneTexture {
            seed: hash(cfg.seed ^ 0x7e57_u64),
            freq: cfg.texture_density.sqrt(),
        }
    }

    pub fn ground(&self, x: f64, y: f64) -> [f64; 3] {
        let f = self.freq;
        let n1 = value_noise(self.seed, x * f, y * f);
        let n2 = value_noise(self.seed ^ 1, x * f * 2.1, y * f * 2.1);
        let n3 = value_noise(self.seed ^ 2, x * f * 0.45, y * f * 0.45);
        let n4 = value_noise(self.seed ^ 3, x * f * 1.3, y * f * 1.3);
        let lum = 0.5 + 0.22 * n1 + 0.12 * n2 + 0.08 * n3;
        [
            lum + 0.06 * n4,
            lum + 0.03 * n3,
            lum - 0.05 * n4 - 0.03 * n3,
        ]
    }

    /// Landmark band as a function of world azimuth and elevation.
    pub fn skyline(&self, azimuth: f64, elevation: f64) -> [f64; 3] {
        let a = azimuth;
        let ridge = 0.08
            + 0.05 * value_noise(self.seed ^ 10, a * 3.0, 0.0)
            + 0.02 * value_noise(self.seed ^ 11, a * 11.0, 0.0);
        if elevation < ridge {
            let stripe = value_noise(self.seed ^ 12, a * 25.0, elevation * 30.0);
            let v = 0.3 + 0.12 * stripe;
            [v, v + 0.03, v - 0.02]
        } else {
            let v = 0.75 + 0.1 * elevation;
            [v - 0.05, v, v + 0.08]
        }
    }
}

/// Pinhole camera rigidly mounted on the body.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
}

impl Camera {
    pub fn new(height: usize, width: usize) -> Self {
        Camera {
            width,
            height,
            focal: (width as f64 / 2.0) / (HORIZONTAL_FOV / 2.0).tan(),
        }
    }

    /// Unit-free ray direction in the body frame for pixel coordinates
    /// `(u, v)` (u right, v down, continuous, pixel centres at +0.5).
    pub fn ray_body(&self, u: f64, v: f64) -> Vector3<f64> {
        let x = (u - self.width as f64 / 2.0) / self.focal;
        let y = (v - self.height as f64 / 2.0) / self.focal;
        let (sp, cp) = CAMERA_PITCH.sin_cos();
        let right = Vector3::new(0.0, -1.0, 0.0);
        let down = Vector3::new(-sp, 0.0, -cp);
        let fwd = Vector3::new(cp, 0.0, -sp);
        right * x + down * y + fwd
    }
}

fn shade(tex: &SceneTexture, pose: &Pose, ray_b: &Vector3<f64>) -> [f64; 3] {
    let origin = pose.t + pose.r * Vector3::new(0.0, 0.0, CAMERA_HEIGHT);
    let d = pose.r * ray_b;
    if d.z < 0.0 {
        let s = -origin.z / d.z;
        let hit = origin + d * s;
        let range = (hit - origin).norm();
        let g = tex.ground(hit.x, hit.y);
        if range <= FOG_START {
            return g;
        }
        let w = ((range - FOG_START) / (FOG_END - FOG_START)).min(1.0);
        return [
            g[0] + (HAZE[0] - g[0]) * w,
            g[1] + (HAZE[1] - g[1]) * w,
            g[2] + (HAZE[2] - g[2]) * w,
        ];
    }
    let az = d.y.atan2(d.x);
    let el = d.z.atan2((d.x * d.x + d.y * d.y).sqrt());
    tex.skyline(az, el)
}

/// Renders one 3-channel frame as seen from `pose`.
pub fn render_frame(tex: &SceneTexture, cam: &Camera, pose: &Pose) -> Image {
    let mut img = Image::new(3, cam.height, cam.width);
    let n = img.plane_len();
    const SUB: [f64; 2] = [0.25, 0.75];
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut acc = [0.0; 3];
            for sy in SUB {
                for sx in SUB {
                    let ray = cam.ray_body(x as f64 + sx, y as f64 + sy);
                    let c = shade(tex, pose, &ray);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for (k, a) in acc.iter().enumerate() {
                img.data[k * n + y * cam.width + x] = a / 4.0;
            }
        }
    }
    img.quantize_u8();
    img
}

pub fn render_frames(traj: &Trajectory, cfg: &SceneConfig) -> Vec<Image> {
    render_frames_with(traj, cfg, Exec::default())
}

pub fn render_frames_with(traj: &Trajectory, cfg: &SceneConfig, exec: Exec) -> Vec<Image> {
    let tex = SceneTexture::new(cfg);
    let cam = Camera::new(cfg.height, cfg.width);
    let poses = traj.poses();
    exec.map(poses.len(), |i| render_frame(&tex, &cam, &poses[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_noise_is_bounded_and_continuous() {
        for i in 0..500 {
            let x = i as f64 * 0.137 - 30.0;
            let y = i as f64 * 0.071 + 2.0;
            let v = value_noise(9, x, y);
            assert!((-1.0..=1.0).contains(&v));
            assert!((value_noise(9, x + 1e-7, y) - v).abs() < 1e-5);
        }
    }

    #[test]
    fn centre_ray_points_down_and_forward() {
        let cam = Camera::new(64, 64);
        let r = cam.ray_body(32.0, 32.0);
        assert!(r.x > 0.0 && r.z < 0.0 && r.y.abs() < 1e-12);
    }
}
