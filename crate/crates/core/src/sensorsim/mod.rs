//! Synthetic sensor sequences (trajectory, rendered frames, oversampled IMU),
//! KITTI-format ingestion and per-transition windows.

pub mod imu;
pub mod io;
pub mod render;
pub mod trajectory;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{PoseDelta, Trajectory};
use crate::image::Image;

pub use imu::{synthesize_imu, ImuSample};
pub use io::{load_dataset, load_kitti_sequence, save_dataset};
pub use render::{render_frames, render_frames_with};
pub use trajectory::generate_trajectory;

fn default_frame_period() -> f64 {
    0.1
}
fn default_imu_samples() -> usize {
    11
}
fn default_vibration_gain() -> f64 {
    0.5
}
fn default_vibration_hz() -> f64 {
    17.0
}

/// Synthetic scene and sensor parameters. Everything generated from it is a
/// pure function of the whole config (including `seed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    /// number of frames T
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// texture features per square meter of ground
    pub texture_density: f64,
    /// m/s
    pub max_speed: f64,
    /// rad/s
    pub max_yaw_rate: f64,
    pub accel_bias_std: f64,
    pub gyro_bias_std: f64,
    pub accel_noise_std: f64,
    pub gyro_noise_std: f64,
    pub gravity: bool,
    #[serde(default = "default_frame_period")]
    pub frame_period: f64,
    /// IMU samples per transition (r_imu), endpoints inclusive
    #[serde(default = "default_imu_samples")]
    pub imu_samples: usize,
    /// ride-vibration acceleration amplitude per unit speed (1/s)
    #[serde(default = "default_vibration_gain")]
    pub vibration_gain: f64,
    #[serde(default = "default_vibration_hz")]
    pub vibration_hz: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            frames: 200,
            height: 64,
            width: 64,
            texture_density: 1.0,
            max_speed: 6.0,
            max_yaw_rate: 0.3,
            accel_bias_std: 0.05,
            gyro_bias_std: 0.002,
            accel_noise_std: 0.3,
            gyro_noise_std: 0.01,
            gravity: true,
            frame_period: default_frame_period(),
            imu_samples: default_imu_samples(),
            vibration_gain: default_vibration_gain(),
            vibration_hz: default_vibration_hz(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid("scene needs at least 2 frames"));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::invalid("image size must be at least 16x16"));
        }
        if self.imu_samples < 2 {
            return Err(Error::invalid("need at least 2 IMU samples per transition"));
        }
        let nonneg = [
            self.accel_bias_std,
            self.gyro_bias_std,
            self.accel_noise_std,
            self.gyro_noise_std,
            self.max_speed,
            self.max_yaw_rate,
            self.vibration_gain,
            self.vibration_hz,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("noise and motion parameters must be finite and >= 0"));
        }
        if !(self.frame_period > 0.0) || !(self.texture_density > 0.0) {
            return Err(Error::invalid("frame period and texture density must be positive"));
        }
        Ok(())
    }
}

/// Stream-level metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub frame_period: f64,
    pub imu_samples: usize,
    pub source: String,
}

/// Aligned frames, IMU windows and ground truth for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    frames: Vec<Image>,
    imu_windows: Vec<Vec<ImuSample>>,
    gt: Trajectory,
    meta: StreamMeta,
}

impl SensorStream {
    pub fn new(
        frames: Vec<Image>,
        imu_windows: Vec<Vec<ImuSample>>,
        gt: Trajectory,
        meta: StreamMeta,
    ) -> Result<Self> {
        let t = frames.len();
        if t < 2 {
            return Err(Error::Structural("stream needs at least two frames".into()));
        }
        if gt.len() != t {
            return Err(Error::Structural(format!(
                "{t} frames but {} ground-truth poses",
                gt.len()
            )));
        }
        if imu_windows.len() != t - 1 {
            return Err(Error::Structural(format!(
                "{t} frames need {} IMU windows, got {}",
                t - 1,
                imu_windows.len()
            )));
        }
        let shape = frames[0].shape();
        if let Some(i) = frames.iter().position(|f| f.shape() != shape) {
            return Err(Error::Structural(format!("frame {i} has a different shape")));
        }
        if let Some(i) = frames.iter().position(|f| !f.is_normalized()) {
            return Err(Error::invalid(format!("frame {i} has values outside [0, 1]")));
        }
        for (i, w) in imu_windows.iter().enumerate() {
            if w.len() != meta.imu_samples {
                return Err(Error::Structural(format!(
                    "IMU window {i} has {} samples, expected {}",
                    w.len(),
                    meta.imu_samples
                )));
            }
            if w.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("IMU window {i} is not finite")));
            }
        }
        Ok(SensorStream {
            frames,
            imu_windows,
            gt,
            meta,
        })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn imu_windows(&self) -> &[Vec<ImuSample>] {
        &self.imu_windows
    }

    pub fn gt(&self) -> &Trajectory {
        &self.gt
    }

    pub fn meta(&self) -> &StreamMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn transitions(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn frame_shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }

    /// Ground-truth deltas, one per transition.
    pub fn gt_deltas(&self) -> Vec<PoseDelta> {
        self.gt.deltas()
    }

    /// Same IMU and ground truth with replaced frames.
    pub fn with_frames(&self, frames: Vec<Image>) -> Result<SensorStream> {
        if frames.len() != self.frames.len() {
            return Err(Error::Structural("frame count changed".into()));
        }
        SensorStream::new(frames, self.imu_windows.clone(), self.gt.clone(), self.meta.clone())
    }

    /// Per-transition input: frames `t` and `t+1` stacked channel-wise plus
    /// IMU window `t`.
    pub fn window(&self, t: usize) -> Result<SensorWindow> {
        if t + 1 >= self.frames.len() {
            return Err(Error::Index {
                index: t,
                len: self.transitions(),
            });
        }
        Ok(SensorWindow {
            image_pair: Image::stack(&self.frames[t], &self.frames[t + 1])?,
            imu: self.imu_windows[t].clone(),
            index: t,
        })
    }

    pub fn windows(&self) -> Vec<SensorWindow> {
        (0..self.transitions()).map(|t| self.window(t).expect("in range")).collect()
    }
}

/// Network input for one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorWindow {
    /// 2c×h×w
    pub image_pair: Image,
    /// r_imu×6
    pub imu: Vec<ImuSample>,
    pub index: usize,
}

/// Full synthetic sequence for `cfg`.
pub fn generate_stream(cfg: &SceneConfig) -> Result<SensorStream> {
    generate_stream_with(cfg, Exec::default())
}

pub fn generate_stream_with(cfg: &SceneConfig, exec: Exec) -> Result<SensorStream> {
    let gt = generate_trajectory(cfg)?;
    let frames = render_frames_with(&gt, cfg, exec);
    let imu = synthesize_imu(cfg)?;
    SensorStream::new(
        frames,
        imu,
        gt,
        StreamMeta {
            frame_period: cfg.frame_period,
            imu_samples: cfg.imu_samples,
            source: format!("synthetic:seed={}", cfg.seed),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig {
            frames: 6,
            height: 16,
            width: 16,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SceneConfig { frames: 1, ..small() }.validate().is_err());
        assert!(SceneConfig { width: 8, ..small() }.validate().is_err());
        assert!(SceneConfig { accel_noise_std: -1.0, ..small() }.validate().is_err());
        small().validate().unwrap();
    }

    #[test]
    fn window_shapes_and_range() {
        let s = generate_stream(&SceneConfig { frames: 2, ..small() }).unwrap();
        let w = s.window(0).unwrap();
        assert_eq!(w.image_pair.channels, 6);
        assert_eq!(w.imu.len(), 11);
        assert!(matches!(s.window(1), Err(Error::Index { .. })));
    }

    #[test]
    fn stream_rejects_count_mismatch() {
        let s = generate_stream(&small()).unwrap();
        let mut frames = s.frames().to_vec();
        frames.pop();
        assert!(matches!(
            SensorStream::new(frames, s.imu_windows().to_vec(), s.gt().clone(), s.meta().clone()),
            Err(Error::Structural(_))
        ));
    }
}
