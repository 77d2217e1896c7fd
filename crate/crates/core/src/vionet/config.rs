use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            channels,
            kernel,
            stride,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
    Custom,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            "custom" => Ok(Profile::Custom),
            _ => Err(Error::invalid(format!("unknown profile {s:?} (desk, paper, custom)"))),
        }
    }
}

/// Normalization statistics used by adapt-mode forwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptNorm {
    /// frozen running statistics (gradient flows through γ, β only)
    #[default]
    Running,
    /// per-input spatial statistics
    Instance,
}

fn default_momentum() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub profile: Profile,
    /// channels of the stacked frame pair (2 × frame channels)
    pub input_channels: usize,
    pub height: usize,
    pub width: usize,
    pub visual: Vec<ConvSpec>,
    pub inertial: Vec<ConvSpec>,
    /// IMU samples per window (r_imu)
    pub imu_samples: usize,
    pub fused_hidden: Vec<usize>,
    pub inertial_hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
    #[serde(default)]
    pub adapt_norm: AdaptNorm,
}

impl NetworkConfig {
    /// 6×64×64 input, four stride-2 convs, 192→128→6 and 64→64→6 heads.
    pub fn desk() -> Self {
        NetworkConfig {
            profile: Profile::Desk,
            input_channels: 6,
            height: 64,
            width: 64,
            visual: vec![
                ConvSpec::new(16, 3, 2),
                ConvSpec::new(32, 3, 2),
                ConvSpec::new(64, 3, 2),
                ConvSpec::new(128, 3, 2),
            ],
            inertial: vec![ConvSpec::new(32, 3, 1), ConvSpec::new(64, 3, 1)],
            imu_samples: 11,
            fused_hidden: vec![128],
            inertial_hidden: vec![64],
            leaky_slope: 0.1,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            adapt_norm: AdaptNorm::Running,
        }
    }

    /// KITTI-sized input with a compressed FlowNet-style encoder. Only the
    /// parameter layout matters at desk scale; nothing trains on it.
    pub fn paper() -> Self {
        NetworkConfig {
            profile: Profile::Paper,
            input_channels: 6,
            height: 256,
            width: 512,
            visual: vec![
                ConvSpec::new(16, 7, 2),
                ConvSpec::new(32, 5, 2),
                ConvSpec::new(64, 5, 2),
                ConvSpec::new(64, 3, 1),
                ConvSpec::new(128, 3, 2),
                ConvSpec::new(128, 3, 1),
                ConvSpec::new(128, 3, 2),
                ConvSpec::new(128, 3, 1),
                ConvSpec::new(192, 3, 2),
            ],
            inertial: vec![ConvSpec::new(32, 3, 1), ConvSpec::new(64, 3, 1), ConvSpec::new(64, 3, 1)],
            imu_samples: 11,
            fused_hidden: vec![128],
            inertial_hidden: vec![256, 128],
            leaky_slope: 0.1,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            adapt_norm: AdaptNorm::Running,
        }
    }

    /// Small enough for finite-difference checks.
    pub fn tiny() -> Self {
        NetworkConfig {
            profile: Profile::Custom,
            input_channels: 6,
            height: 16,
            width: 16,
            visual: vec![ConvSpec::new(4, 3, 2), ConvSpec::new(6, 3, 2)],
            inertial: vec![ConvSpec::new(5, 3, 1)],
            imu_samples: 5,
            fused_hidden: vec![8],
            inertial_hidden: vec![7],
            leaky_slope: 0.1,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            adapt_norm: AdaptNorm::Running,
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
            Profile::Custom => Self::tiny(),
        }
    }

    pub fn visual_feature_dim(&self) -> usize {
        self.visual.last().map_or(0, |c| c.channels)
    }

    pub fn inertial_feature_dim(&self) -> usize {
        self.inertial.last().map_or(0, |c| c.channels)
    }

    /// C₁, channels of the first visual convolution.
    pub fn first_channels(&self) -> usize {
        self.visual.first().map_or(0, |c| c.channels)
    }

    pub fn ddf_len(&self) -> usize {
        4 * self.first_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("network config: {m}")));
        if self.visual.is_empty() {
            return bad("need at least one visual conv (the ddf reads the first one)");
        }
        if self.inertial.is_empty() {
            return bad("need at least one inertial conv");
        }
        if self.input_channels == 0 || self.height == 0 || self.width == 0 || self.imu_samples == 0 {
            return bad("input sizes must be positive");
        }
        for c in self.visual.iter().chain(&self.inertial) {
            if c.channels == 0 || c.stride == 0 || c.kernel == 0 || c.kernel % 2 == 0 {
                return bad("convs need positive channels/stride and an odd kernel");
            }
        }
        if self.fused_hidden.contains(&0) || self.inertial_hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.bn_eps > 0.0) || !self.leaky_slope.is_finite() || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps > 0, finite slope and momentum in [0, 1] required");
        }
        Ok(())
    }
}
