//! Body-frame IMU synthesis from the continuous motion model.
//!
//! Channels are `[gx, gy, gz, ax, ay, az]`: angular rate (rad/s) then
//! specific force (m/s²). Each transition gets `imu_samples` samples spread
//! evenly over the frame period with both endpoints included, so adjacent
//! windows share their boundary instant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::trajectory::MotionModel;
use super::SceneConfig;
use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;
pub(crate) const STREAM_IMU: u64 = 2;

pub type ImuSample = [f64; 6];

/// Noise-free specific force and angular rate at time `t`.
pub fn ideal_sample(model: &MotionModel, t: f64, gravity: bool) -> ImuSample {
    let k = model.kinematics(t);
    let g = if gravity { GRAVITY } else { 0.0 };
    // planar yaw-only attitude: body z stays vertical, so the centripetal
    // term is s·ω along body y and the ride vibration lands on body z
    [
        0.0,
        0.0,
        k.yaw_rate,
        k.speed_dot,
        k.speed * k.yaw_rate,
        k.z_ddot + g,
    ]
}

pub fn sample_times(cfg: &SceneConfig, transition: usize) -> Vec<f64> {
    let r = cfg.imu_samples;
    let t0 = transition as f64 * cfg.frame_period;
    (0..r)
        .map(|j| t0 + cfg.frame_period * j as f64 / (r - 1) as f64)
        .collect()
}

/// IMU windows for every transition of a synthetic sequence: ideal samples
/// plus a per-run constant bias and white per-sample noise.
pub fn synthesize_imu(cfg: &SceneConfig) -> Result<Vec<Vec<ImuSample>>> {
    if cfg.frames < 2 {
        return Err(Error::invalid("IMU synthesis needs at least two frames"));
    }
    let model = MotionModel::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_IMU);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let std = [
        cfg.gyro_noise_std,
        cfg.gyro_noise_std,
        cfg.gyro_noise_std,
        cfg.accel_noise_std,
        cfg.accel_noise_std,
        cfg.accel_noise_std,
    ];
    let bias_std = [
        cfg.gyro_bias_std,
        cfg.gyro_bias_std,
        cfg.gyro_bias_std,
        cfg.accel_bias_std,
        cfg.accel_bias_std,
        cfg.accel_bias_std,
    ];
    let bias: Vec<f64> = bias_std.iter().map(|s| s * unit.sample(&mut rng)).collect();
    let mut out = Vec::with_capacity(cfg.frames - 1);
    for tr in 0..cfg.frames - 1 {
        let w = sample_times(cfg, tr)
            .into_iter()
            .map(|t| {
                let mut s = ideal_sample(&model, t, cfg.gravity);
                for c in 0..6 {
                    s[c] += bias[c] + std[c] * unit.sample(&mut rng);
                }
                s
            })
            .collect();
        out.push(w);
    }
    Ok(out)
}
