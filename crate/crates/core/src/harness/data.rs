use super::config::{DataConfig, KittiSequence};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::sensorsim::{generate_stream_with, load_kitti_sequence, SceneConfig, SensorStream};
use crate::vionet::NetworkConfig;

fn kitti(s: &KittiSequence, net: &NetworkConfig, period: f64) -> Result<SensorStream> {
    load_kitti_sequence(
        &s.images,
        &s.poses,
        &s.imu,
        net.imu_samples,
        (net.input_channels / 2, net.height, net.width),
        period,
    )
}

/// Scene config of one synthetic sequence.
pub fn scene_for(base: &SceneConfig, seed: u64, frames: usize) -> SceneConfig {
    SceneConfig {
        seed,
        frames,
        ..base.clone()
    }
}

impl DataConfig {
    /// Scene configs of the training set (synthetic only).
    pub fn train_scenes(&self) -> Vec<SceneConfig> {
        match self {
            DataConfig::Synthetic(s) => (0..s.train_sequences)
                .map(|i| scene_for(&s.scene, s.scene.seed + i as u64, s.train_frames))
                .collect(),
            DataConfig::Kitti(_) => Vec::new(),
        }
    }

    pub fn test_scene(&self, seed: u64) -> Option<SceneConfig> {
        match self {
            DataConfig::Synthetic(s) => Some(scene_for(&s.scene, s.test_seed + seed, s.test_frames)),
            DataConfig::Kitti(_) => None,
        }
    }

    pub fn calib_scene(&self) -> Option<SceneConfig> {
        match self {
            DataConfig::Synthetic(s) => Some(scene_for(&s.scene, s.calib_seed, s.calib_frames)),
            DataConfig::Kitti(_) => None,
        }
    }

    pub fn train_streams(&self, net: &NetworkConfig, exec: Exec) -> Result<Vec<SensorStream>> {
        match self {
            DataConfig::Synthetic(_) => self
                .train_scenes()
                .iter()
                .map(|c| generate_stream_with(c, exec))
                .collect(),
            DataConfig::Kitti(k) => k.train.iter().map(|s| kitti(s, net, k.frame_period)).collect(),
        }
    }

    pub fn test_stream(&self, net: &NetworkConfig, seed: u64, exec: Exec) -> Result<SensorStream> {
        match self {
            DataConfig::Synthetic(_) => generate_stream_with(&self.test_scene(seed).expect("synthetic"), exec),
            DataConfig::Kitti(k) => {
                if k.test.is_empty() {
                    return Err(Error::invalid("no test sequences"));
                }
                kitti(&k.test[(seed % k.test.len() as u64) as usize], net, k.frame_period)
            }
        }
    }

    pub fn calib_stream(&self, net: &NetworkConfig, exec: Exec) -> Result<SensorStream> {
        match self {
            DataConfig::Synthetic(_) => generate_stream_with(&self.calib_scene().expect("synthetic"), exec),
            DataConfig::Kitti(k) => {
                let s = k.calib.as_ref().or(k.train.first()).ok_or_else(|| Error::invalid("no calibration sequence"))?;
                kitti(s, net, k.frame_period)
            }
        }
    }
}
