use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptConfig;
use crate::corruption::{NoiseId, DEFAULT_SEVERITY};
use crate::error::{Error, Result};
use crate::sensorsim::SceneConfig;
use crate::training::TrainConfig;
use crate::vionet::{NetworkConfig, Profile};

fn d_profile() -> Profile {
    Profile::Desk
}
fn d_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn d_stage2() -> TrainConfig {
    TrainConfig::stage2()
}

/// Everything an experiment needs, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_profile")]
    pub profile: Profile,
    /// explicit architecture; required for the custom profile, otherwise
    /// overrides the profile preset
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    /// protocol seeds (test sequence and corruption draws)
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "d_stage2")]
    pub train_stage2: TrainConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            profile: Profile::Desk,
            network: None,
            seeds: d_seeds(),
            out_dir: None,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            train_stage2: TrainConfig::stage2(),
            adapt: AdaptConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataConfig {
    Synthetic(SyntheticData),
    Kitti(KittiData),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticData::default())
    }
}

fn d_train_seqs() -> usize {
    6
}
fn d_train_frames() -> usize {
    250
}
fn d_test_frames() -> usize {
    360
}
fn d_calib_frames() -> usize {
    120
}
fn d_test_seed() -> u64 {
    10_000
}
fn d_calib_seed() -> u64 {
    20_000
}

/// Procedurally generated sequences. Sequence `i` of the training set uses
/// scene seed `scene.seed + i`; the protocol sequence of seed `s` uses
/// `test_seed + s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default = "d_train_seqs")]
    pub train_sequences: usize,
    #[serde(default = "d_train_frames")]
    pub train_frames: usize,
    #[serde(default = "d_test_frames")]
    pub test_frames: usize,
    #[serde(default = "d_calib_frames")]
    pub calib_frames: usize,
    #[serde(default = "d_test_seed")]
    pub test_seed: u64,
    #[serde(default = "d_calib_seed")]
    pub calib_seed: u64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        SyntheticData {
            scene: SceneConfig::default(),
            train_sequences: d_train_seqs(),
            train_frames: d_train_frames(),
            test_frames: d_test_frames(),
            calib_frames: d_calib_frames(),
            test_seed: d_test_seed(),
            calib_seed: d_calib_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KittiSequence {
    pub images: PathBuf,
    pub poses: PathBuf,
    pub imu: PathBuf,
}

fn d_period() -> f64 {
    0.1
}

/// Sequences on disk in KITTI layout. Protocol seed `s` runs on test
/// sequence `s mod len`; proxies come from `calib` (default: the first
/// training sequence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KittiData {
    pub train: Vec<KittiSequence>,
    pub test: Vec<KittiSequence>,
    #[serde(default)]
    pub calib: Option<KittiSequence>,
    #[serde(default = "d_period")]
    pub frame_period: f64,
}

fn d_noises() -> Vec<NoiseId> {
    vec![NoiseId::Blur, NoiseId::Snow, NoiseId::Contrast]
}
fn d_severity() -> u8 {
    DEFAULT_SEVERITY
}
fn d_cycles() -> usize {
    2
}
fn d_shift_noise() -> NoiseId {
    NoiseId::Blur
}
fn d_shift_start() -> f64 {
    1.0 / 3.0
}
fn d_shift_end() -> f64 {
    2.0 / 3.0
}
fn d_stat_epochs() -> usize {
    5
}
fn d_ft_epochs() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// domains of the proxy bank / BN dictionary, in entry order (1..=K)
    #[serde(default = "d_noises")]
    pub noises: Vec<NoiseId>,
    #[serde(default = "d_severity")]
    pub severity: u8,
    /// continual schedule: `noises` in equal segments, repeated
    #[serde(default = "d_cycles")]
    pub cycles: usize,
    #[serde(default = "d_shift_noise")]
    pub shift_noise: NoiseId,
    /// single shift episode as fractions of the sequence
    #[serde(default = "d_shift_start")]
    pub shift_start: f64,
    #[serde(default = "d_shift_end")]
    pub shift_end: f64,
    /// stationary protocol noises; empty means `noises`
    #[serde(default)]
    pub stationary_noises: Vec<NoiseId>,
    #[serde(default = "d_stat_epochs")]
    pub stationary_epochs: usize,
    /// fine-tuned baseline budget (all weights, corrupted training data)
    #[serde(default = "d_ft_epochs")]
    pub finetune_epochs: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            noises: d_noises(),
            severity: d_severity(),
            cycles: d_cycles(),
            shift_noise: d_shift_noise(),
            shift_start: d_shift_start(),
            shift_end: d_shift_end(),
            stationary_noises: Vec::new(),
            stationary_epochs: d_stat_epochs(),
            finetune_epochs: d_ft_epochs(),
        }
    }
}

impl ProtocolConfig {
    pub fn stationary_list(&self) -> &[NoiseId] {
        if self.stationary_noises.is_empty() {
            &self.noises
        } else {
            &self.stationary_noises
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let c: ExperimentConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Preset for `profile`, sized for the given input (paper/desk presets
    /// carry their own image size).
    pub fn network_config(&self) -> Result<NetworkConfig> {
        let cfg = match (&self.network, self.profile) {
            (Some(n), _) => n.clone(),
            (None, Profile::Custom) => {
                return Err(Error::invalid("profile \"custom\" needs a [network] table"));
            }
            (None, p) => NetworkConfig::for_profile(p),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must not be empty"));
        }
        let net = self.network_config()?;
        self.train.validate()?;
        self.train_stage2.validate()?;
        self.adapt.validate()?;
        let p = &self.protocol;
        if p.noises.is_empty() || p.noises.contains(&NoiseId::Clean) {
            return Err(Error::invalid("protocol.noises must list at least one non-clean noise"));
        }
        for (i, n) in p.noises.iter().enumerate() {
            if p.noises[..i].contains(n) {
                return Err(Error::invalid(format!("noise {n} listed twice")));
            }
        }
        if !p.noises.contains(&p.shift_noise) {
            return Err(Error::invalid("shift_noise must be one of protocol.noises"));
        }
        if let Some(n) = p.stationary_list().iter().find(|n| !p.noises.contains(n)) {
            return Err(Error::invalid(format!("stationary noise {n} has no dictionary entry")));
        }
        if !(1..=5).contains(&p.severity) || p.cycles == 0 {
            return Err(Error::invalid("severity must be 1..=5 and cycles >= 1"));
        }
        if !(0.0 < p.shift_start && p.shift_start < p.shift_end && p.shift_end < 1.0) {
            return Err(Error::invalid("need 0 < shift_start < shift_end < 1"));
        }
        match &self.data {
            DataConfig::Synthetic(s) => {
                s.scene.validate()?;
                if (s.scene.height, s.scene.width) != (net.height, net.width) || s.scene.imu_samples != net.imu_samples {
                    return Err(Error::invalid(format!(
                        "scene produces {}x{} frames with {} IMU samples, network expects {}x{} with {}",
                        s.scene.height, s.scene.width, s.scene.imu_samples, net.height, net.width, net.imu_samples
                    )));
                }
                if s.train_sequences == 0 || s.train_frames < 2 || s.calib_frames < 2 {
                    return Err(Error::invalid("need training sequences and at least 2 frames per sequence"));
                }
                if s.test_frames < 2 * p.noises.len() * p.cycles + 1 {
                    return Err(Error::invalid("test_frames too short for the continual schedule"));
                }
            }
            DataConfig::Kitti(k) => {
                if k.train.is_empty() || k.test.is_empty() {
                    return Err(Error::invalid("kitti data needs train and test sequences"));
                }
                for s in k.train.iter().chain(&k.test).chain(&k.calib) {
                    for path in [&s.images, &s.poses, &s.imu] {
                        if !path.exists() {
                            return Err(Error::invalid(format!("{} does not exist", path.display())));
                        }
                    }
                }
                if !(k.frame_period > 0.0) {
                    return Err(Error::invalid("frame_period must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Output root: explicit override, then the config, then `./out`.
    pub fn resolve_out(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
