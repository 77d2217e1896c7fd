//! Continuous-time ground-vehicle motion used to synthesize sequences.
//!
//! Forward speed and yaw rate are uniform cubic B-splines (C²) over random
//! control points. Because a B-spline stays inside the convex hull of its
//! control points, the speed and yaw-rate bounds hold for every instant, not
//! just at the knots. Position is the integral of speed along the heading,
//! plus a small vertical ride vibration whose acceleration amplitude is
//! proportional to speed.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SceneConfig;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Trajectory};

/// Knot spacing of the speed / yaw-rate splines (seconds).
pub const KNOT_SPACING: f64 = 1.5;
/// Speed control points are drawn from this fraction of the max speed.
pub const SPEED_FRACTION: (f64, f64) = (0.25, 0.95);
/// RK4 substeps per frame period.
const SUBSTEPS: usize = 40;

pub(crate) const STREAM_TRAJECTORY: u64 = 1;

#[derive(Debug, Clone)]
struct UniformBSpline {
    ctrl: Vec<f64>,
    spacing: f64,
}

impl UniformBSpline {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let u = (t / self.spacing).max(0.0);
        let i = (u.floor() as usize).min(self.ctrl.len() - 4);
        let s = u - i as f64;
        let c = &self.ctrl[i..i + 4];
        let (s2, s3) = (s * s, s * s * s);
        let b = [
            (1.0 - s).powi(3) / 6.0,
            (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0,
            (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0,
            s3 / 6.0,
        ];
        let db = [
            -(1.0 - s).powi(2) / 2.0,
            (3.0 * s2 - 4.0 * s) / 2.0,
            (-3.0 * s2 + 2.0 * s + 1.0) / 2.0,
            s2 / 2.0,
        ];
        let ddb = [1.0 - s, 3.0 * s - 2.0, -3.0 * s + 1.0, s];
        let dot = |w: &[f64; 4]| w.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        let h = self.spacing;
        (dot(&b), dot(&db) / h, dot(&ddb) / (h * h))
    }
}

/// Closed-form motion model behind a synthetic sequence.
#[derive(Debug, Clone)]
pub struct MotionModel {
    speed: UniformBSpline,
    yaw_rate: UniformBSpline,
    vib_gain: f64,
    vib_omega: f64,
    vib_phase: f64,
}

/// Instantaneous kinematic state.
#[derive(Debug, Clone, Copy)]
pub struct Kinematics {
    pub speed: f64,
    pub speed_dot: f64,
    pub yaw_rate: f64,
    /// vertical ride displacement (m)
    pub z: f64,
    /// vertical ride acceleration (m/s²)
    pub z_ddot: f64,
}

impl MotionModel {
    pub fn new(cfg: &SceneConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.max_speed == 0.0 && cfg.max_yaw_rate == 0.0 {
            return Err(Error::invalid(
                "degenerate motion bounds: max speed and max yaw rate are both zero",
            ));
        }
        let duration = cfg.frames as f64 * cfg.frame_period;
        let n = (duration / KNOT_SPACING).ceil() as usize + 4;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(STREAM_TRAJECTORY);
        let (lo, hi) = SPEED_FRACTION;
        let speed = (0..n)
            .map(|_| cfg.max_speed * rng.random_range(lo..=hi))
            .collect();
        let yaw_rate = (0..n)
            .map(|_| cfg.max_yaw_rate * rng.random_range(-1.0..=1.0))
            .collect();
        Ok(MotionModel {
            speed: UniformBSpline {
                ctrl: speed,
                spacing: KNOT_SPACING,
            },
            yaw_rate: UniformBSpline {
                ctrl: yaw_rate,
                spacing: KNOT_SPACING,
            },
            vib_gain: cfg.vibration_gain,
            vib_omega: 2.0 * std::f64::consts::PI * cfg.vibration_hz,
            vib_phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
    }

    /// Constant speed and yaw rate with no ride vibration.
    pub fn constant(speed: f64, yaw_rate: f64) -> Self {
        let flat = |v: f64| UniformBSpline {
            ctrl: vec![v; 4],
            spacing: KNOT_SPACING,
        };
        MotionModel {
            speed: flat(speed),
            yaw_rate: flat(yaw_rate),
            vib_gain: 0.0,
            vib_omega: 0.0,
            vib_phase: 0.0,
        }
    }

    pub fn kinematics(&self, t: f64) -> Kinematics {
        let (s, sd, sdd) = self.speed.eval(t);
        let (w, _, _) = self.yaw_rate.eval(t);
        // z = -c·s(t)·sin(Ωt+φ) with c = gain/Ω², so |z̈| ≈ gain·s
        let om = self.vib_omega;
        let (sn, cs) = (om * t + self.vib_phase).sin_cos();
        let c = if om > 0.0 { self.vib_gain / (om * om) } else { 0.0 };
        let z = -c * s * sn;
        let z_ddot = -c * (sdd * sn + 2.0 * om * sd * cs - s * om * om * sn);
        Kinematics {
            speed: s,
            speed_dot: sd,
            yaw_rate: w,
            z,
            z_ddot,
        }
    }

    /// Integrates heading and planar position with RK4 and samples the pose
    /// at every frame.
    pub fn sample(&self, frames: usize, dt: f64) -> Result<Trajectory> {
        let h = dt / SUBSTEPS as f64;
        // state: heading, x, y
        let deriv = |t: f64, st: [f64; 3]| {
            let k = self.kinematics(t);
            [k.yaw_rate, k.speed * st[0].cos(), k.speed * st[0].sin()]
        };
        let mut st = [0.0f64; 3];
        let mut poses = Vec::with_capacity(frames);
        for f in 0..frames {
            let t0 = f as f64 * dt;
            let k = self.kinematics(t0);
            poses.push(Pose::from_parts_unchecked(
                yaw_matrix(st[0]),
                Vector3::new(st[1], st[2], k.z),
            ));
            if f + 1 == frames {
                break;
            }
            for j in 0..SUBSTEPS {
                let t = t0 + j as f64 * h;
                let k1 = deriv(t, st);
                let k2 = deriv(t + h / 2.0, add(st, k1, h / 2.0));
                let k3 = deriv(t + h / 2.0, add(st, k2, h / 2.0));
                let k4 = deriv(t + h, add(st, k3, h));
                for i in 0..3 {
                    st[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        Trajectory::with_period(poses, dt)
    }
}

fn add(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

pub(crate) fn yaw_matrix(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Smooth synthetic trajectory with `cfg.frames` poses, starting at the
/// identity.
pub fn generate_trajectory(cfg: &SceneConfig) -> Result<Trajectory> {
    MotionModel::new(cfg)?.sample(cfg.frames, cfg.frame_period)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bspline_derivatives_match_differences() {
        let sp = UniformBSpline {
            ctrl: vec![0.0, 1.0, 3.0, 2.0, -1.0, 0.5, 2.0],
            spacing: 1.5,
        };
        let h = 1e-5;
        for t in [0.1, 0.9, 1.7, 2.2, 3.9] {
            let (_, d, dd) = sp.eval(t);
            let (fp, dp, _) = sp.eval(t + h);
            let (fm, dm, _) = sp.eval(t - h);
            assert!(((fp - fm) / (2.0 * h) - d).abs() < 1e-7);
            assert!(((dp - dm) / (2.0 * h) - dd).abs() < 1e-6);
        }
    }

    #[test]
    fn vibration_acceleration_matches_differences() {
        let cfg = SceneConfig::default();
        let m = MotionModel::new(&cfg).unwrap();
        let h = 1e-4;
        for t in [0.3, 1.1, 4.05] {
            let zp = m.kinematics(t + h).z;
            let zm = m.kinematics(t - h).z;
            let z0 = m.kinematics(t).z;
            let fd = (zp - 2.0 * z0 + zm) / (h * h);
            assert!((fd - m.kinematics(t).z_ddot).abs() < 1e-3, "{fd}");
        }
    }
}
