//! The compressed VIO network.
//!
//! Parameters live in two places. Θ_f (convolution weights, inertial
//! encoder, both decoders) is a flat list of tensors in a canonical order
//! described by [`Layout`]. Θ_a (γ, β of every visual BatchNorm) lives in
//! the BN dictionary; entry 0 is the source domain and forwards pick an
//! entry explicitly.

mod backward;
pub mod config;
mod forward;
pub mod gradcheck;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use backward::Gradients;
pub use config::{AdaptNorm, ConvSpec, NetworkConfig, Profile};
pub use forward::{Ddf, ForwardPass, Mode, Output};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{Conv1dGeom, Conv2dGeom};
use crate::sensorsim::ImuSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    VisualConv,
    BnAffine,
    InertialEnc,
    FusedDec,
    InertialDec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: Group,
}

impl TensorSpec {
    fn new(name: String, shape: Vec<usize>, group: Group) -> Self {
        TensorSpec { name, shape, group }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which parameters a backward pass should produce gradients for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamSubset {
    pub visual_conv: bool,
    pub bn_affine: bool,
    pub inertial_enc: bool,
    pub fused_dec: bool,
    pub inertial_dec: bool,
}

impl ParamSubset {
    /// Θ_a only (test-time adaptation).
    pub const BN_AFFINE: ParamSubset = ParamSubset {
        visual_conv: false,
        bn_affine: true,
        inertial_enc: false,
        fused_dec: false,
        inertial_dec: false,
    };
    /// Stage 1: everything except D_inertial.
    pub const STAGE1: ParamSubset = ParamSubset {
        visual_conv: true,
        bn_affine: true,
        inertial_enc: true,
        fused_dec: true,
        inertial_dec: false,
    };
    /// Stage 2: D_inertial only.
    pub const INERTIAL_DEC: ParamSubset = ParamSubset {
        visual_conv: false,
        bn_affine: false,
        inertial_enc: false,
        fused_dec: false,
        inertial_dec: true,
    };
    pub const ALL: ParamSubset = ParamSubset {
        visual_conv: true,
        bn_affine: true,
        inertial_enc: true,
        fused_dec: true,
        inertial_dec: true,
    };

    pub fn contains(&self, g: Group) -> bool {
        match g {
            Group::VisualConv => self.visual_conv,
            Group::BnAffine => self.bn_affine,
            Group::InertialEnc => self.inertial_enc,
            Group::FusedDec => self.fused_dec,
            Group::InertialDec => self.inertial_dec,
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == ParamSubset::default()
    }
}

/// Tensor order and conv geometry derived from a [`NetworkConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// Θ_f in canonical order
    pub frozen: Vec<TensorSpec>,
    /// one Θ_a entry: γ₀, β₀, γ₁, β₁, ...
    pub affine: Vec<TensorSpec>,
    pub visual: Vec<usize>,
    /// (weight, bias) indices into `frozen`
    pub inertial: Vec<(usize, usize)>,
    pub fused: Vec<(usize, usize)>,
    pub head: Vec<(usize, usize)>,
    pub geoms: Vec<Conv2dGeom>,
    pub igeoms: Vec<Conv1dGeom>,
}

impl Layout {
    pub fn new(cfg: &NetworkConfig) -> Result<Layout> {
        cfg.validate()?;
        let mut frozen = Vec::new();
        let mut affine = Vec::new();
        let mut geoms = Vec::new();
        let mut visual = Vec::new();
        let (mut c, mut h, mut w) = (cfg.input_channels, cfg.height, cfg.width);
        for (l, s) in cfg.visual.iter().enumerate() {
            let g = Conv2dGeom::new(c, s.channels, s.kernel, s.stride, h, w);
            if g.h_out == 0 || g.w_out == 0 || h + 2 * g.pad < s.kernel || w + 2 * g.pad < s.kernel {
                return Err(Error::invalid(format!("visual conv {l} shrinks the feature map to nothing")));
            }
            visual.push(frozen.len());
            frozen.push(TensorSpec::new(
                format!("visual.conv{l}.weight"),
                vec![s.channels, c, s.kernel, s.kernel],
                Group::VisualConv,
            ));
            affine.push(TensorSpec::new(format!("visual.bn{l}.gamma"), vec![s.channels], Group::BnAffine));
            affine.push(TensorSpec::new(format!("visual.bn{l}.beta"), vec![s.channels], Group::BnAffine));
            (c, h, w) = (s.channels, g.h_out, g.w_out);
            geoms.push(g);
        }
        let mut igeoms = Vec::new();
        let mut inertial = Vec::new();
        let (mut ci, mut len) = (6, cfg.imu_samples);
        for (j, s) in cfg.inertial.iter().enumerate() {
            let g = Conv1dGeom::new(ci, s.channels, s.kernel, s.stride, len);
            if g.len_out == 0 || len + 2 * (s.kernel / 2) < s.kernel {
                return Err(Error::invalid(format!("inertial conv {j} shrinks the window to nothing")));
            }
            inertial.push((frozen.len(), frozen.len() + 1));
            frozen.push(TensorSpec::new(
                format!("inertial.conv{j}.weight"),
                vec![s.channels, ci, s.kernel],
                Group::InertialEnc,
            ));
            frozen.push(TensorSpec::new(format!("inertial.conv{j}.bias"), vec![s.channels], Group::InertialEnc));
            (ci, len) = (s.channels, g.len_out);
            igeoms.push(g);
        }
        let dense = |prefix: &str, n_in: usize, hidden: &[usize], group: Group, frozen: &mut Vec<TensorSpec>| {
            let mut idx = Vec::new();
            let mut a = n_in;
            for (i, &b) in hidden.iter().chain(std::iter::once(&6)).enumerate() {
                idx.push((frozen.len(), frozen.len() + 1));
                frozen.push(TensorSpec::new(format!("{prefix}.fc{i}.weight"), vec![b, a], group));
                frozen.push(TensorSpec::new(format!("{prefix}.fc{i}.bias"), vec![b], group));
                a = b;
            }
            idx
        };
        let xv = cfg.visual_feature_dim();
        let xi = cfg.inertial_feature_dim();
        let fused = dense("fused", xv + xi, &cfg.fused_hidden, Group::FusedDec, &mut frozen);
        let head = dense("inertial_head", xi, &cfg.inertial_hidden, Group::InertialDec, &mut frozen);
        Ok(Layout {
            frozen,
            affine,
            visual,
            inertial,
            fused,
            head,
            geoms,
            igeoms,
        })
    }

    pub fn frozen_index(&self, name: &str) -> Option<usize> {
        self.frozen.iter().position(|s| s.name == name)
    }
}

/// One Θ_a snapshot: per visual BN layer, γ and β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnEntry {
    /// γ₀, β₀, γ₁, β₁, ...
    pub tensors: Vec<Vec<f64>>,
}

impl BnEntry {
    fn identity(layout: &Layout) -> BnEntry {
        BnEntry {
            tensors: layout
                .affine
                .iter()
                .enumerate()
                .map(|(i, s)| vec![if i % 2 == 0 { 1.0 } else { 0.0 }; s.len()])
                .collect(),
        }
    }

    pub fn gamma(&self, layer: usize) -> &[f64] {
        &self.tensors[2 * layer]
    }

    pub fn beta(&self, layer: usize) -> &[f64] {
        &self.tensors[2 * layer + 1]
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn congruent(&self, layout: &Layout) -> bool {
        self.tensors.len() == layout.affine.len()
            && self.tensors.iter().zip(&layout.affine).all(|(t, s)| t.len() == s.len())
    }
}

/// Per visual BN layer, channel means and variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

/// Per-axis standardization applied to raw IMU windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuNorm {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl Default for ImuNorm {
    fn default() -> Self {
        ImuNorm {
            mean: [0.0; 6],
            std: [1.0; 6],
        }
    }
}

impl ImuNorm {
    /// Statistics over every sample of every window; axes with zero spread
    /// keep unit scale.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a [ImuSample]>) -> Result<ImuNorm> {
        let mut n = 0usize;
        let mut sum = [0.0; 6];
        let mut sq = [0.0; 6];
        for w in windows {
            for s in w {
                for a in 0..6 {
                    sum[a] += s[a];
                    sq[a] += s[a] * s[a];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::invalid("no IMU samples to fit normalization"));
        }
        let mut out = ImuNorm::default();
        for a in 0..6 {
            let m = sum[a] / n as f64;
            let v = (sq[a] / n as f64 - m * m).max(0.0);
            out.mean[a] = m;
            out.std[a] = if v > 1e-18 { v.sqrt() } else { 1.0 };
        }
        Ok(out)
    }
}

/// Learnable-scalar counts per module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// convolutions plus one BN affine entry
    pub e_visual: usize,
    pub e_inertial: usize,
    pub d_fused: usize,
    pub d_inertial: usize,
    pub total: usize,
    /// |Θ_a| = Σ 2·channels over visual BN layers
    pub bn_affine: usize,
    /// |Θ_f|
    pub frozen: usize,
}

impl ParamCount {
    pub fn bn_entry_fraction(&self) -> f64 {
        self.bn_affine as f64 / self.total as f64
    }

    pub fn d_inertial_fraction(&self) -> f64 {
        self.d_inertial as f64 / self.total as f64
    }

    /// Total excluding the inertial decoder.
    pub fn total_without_inertial_head(&self) -> usize {
        self.total - self.d_inertial
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VioNetwork {
    cfg: NetworkConfig,
    layout: Layout,
    theta_f: Vec<Vec<f64>>,
    dictionary: Vec<BnEntry>,
    active: usize,
    running: Option<RunningStats>,
    imu_norm: ImuNorm,
    seed: u64,
    exec: Exec,
}

/// He-normal weights, zero biases, γ=1 and β=0. The final layer of each
/// decoder starts at zero so a fresh network predicts the zero delta.
pub fn init_network(cfg: &NetworkConfig, seed: u64) -> Result<VioNetwork> {
    let layout = Layout::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last_fused = layout.fused.last().map(|p| p.0);
    let last_head = layout.head.last().map(|p| p.0);
    let mut theta_f = Vec::with_capacity(layout.frozen.len());
    for (i, s) in layout.frozen.iter().enumerate() {
        let is_weight = s.shape.len() > 1;
        if !is_weight || Some(i) == last_fused || Some(i) == last_head {
            theta_f.push(vec![0.0; s.len()]);
            continue;
        }
        let fan_in: usize = s.shape[1..].iter().product();
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        theta_f.push((0..s.len()).map(|_| normal.sample(&mut rng)).collect());
    }
    let entry0 = BnEntry::identity(&layout);
    Ok(VioNetwork {
        cfg: cfg.clone(),
        layout,
        theta_f,
        dictionary: vec![entry0],
        active: 0,
        running: None,
        imu_norm: ImuNorm::default(),
        seed,
        exec: Exec::default(),
    })
}

impl VioNetwork {
    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn init_seed(&self) -> u64 {
        self.seed
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    /// Θ_f tensors in [`Layout::frozen`] order.
    pub fn frozen_params(&self) -> &[Vec<f64>] {
        &self.theta_f
    }

    pub(crate) fn frozen_params_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.theta_f
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.frozen_index(name).map(|i| self.theta_f[i].as_slice())
    }

    /// Replaces Θ_f wholesale (checkpoint loading).
    pub fn set_frozen_params(&mut self, tensors: Vec<Vec<f64>>) -> Result<()> {
        if tensors.len() != self.layout.frozen.len()
            || tensors.iter().zip(&self.layout.frozen).any(|(t, s)| t.len() != s.len())
        {
            return Err(Error::invalid("frozen parameter shapes do not match the layout"));
        }
        self.theta_f = tensors;
        Ok(())
    }

    pub fn param_count(&self) -> ParamCount {
        let mut c = ParamCount {
            e_visual: 0,
            e_inertial: 0,
            d_fused: 0,
            d_inertial: 0,
            total: 0,
            bn_affine: 0,
            frozen: 0,
        };
        for s in self.layout.frozen.iter().chain(&self.layout.affine) {
            let n = s.len();
            match s.group {
                Group::VisualConv => c.e_visual += n,
                Group::BnAffine => {
                    c.e_visual += n;
                    c.bn_affine += n;
                }
                Group::InertialEnc => c.e_inertial += n,
                Group::FusedDec => c.d_fused += n,
                Group::InertialDec => c.d_inertial += n,
            }
            if s.group != Group::BnAffine {
                c.frozen += n;
            }
            c.total += n;
        }
        c
    }

    // ---- BN dictionary ----

    /// Entries in the dictionary (K + 1).
    pub fn num_entries(&self) -> usize {
        self.dictionary.len()
    }

    pub fn active_entry(&self) -> usize {
        self.active
    }

    fn check_entry(&self, k: usize) -> Result<()> {
        if k >= self.dictionary.len() {
            return Err(Error::Index {
                index: k,
                len: self.dictionary.len(),
            });
        }
        Ok(())
    }

    /// Resizes the dictionary to `1 + noises` entries, each new or existing
    /// non-source entry reset to a copy of entry 0.
    pub fn reset_dictionary(&mut self, noises: usize) {
        let e0 = self.dictionary[0].clone();
        self.dictionary.truncate(1);
        self.dictionary.extend(std::iter::repeat_n(e0, noises));
        self.active = 0;
    }

    pub fn get_bn_entry(&self, k: usize) -> Result<BnEntry> {
        self.check_entry(k)?;
        Ok(self.dictionary[k].clone())
    }

    pub fn bn_entry(&self, k: usize) -> Result<&BnEntry> {
        self.check_entry(k)?;
        Ok(&self.dictionary[k])
    }

    pub fn set_bn_entry(&mut self, k: usize, values: BnEntry) -> Result<()> {
        self.check_entry(k)?;
        if !values.congruent(&self.layout) {
            return Err(Error::invalid("BN entry shapes do not match the network"));
        }
        self.dictionary[k] = values;
        Ok(())
    }

    /// Makes entry `k` the active one. Θ_f and the entries are untouched.
    pub fn load_bn_entry(&mut self, k: usize) -> Result<()> {
        self.check_entry(k)?;
        self.active = k;
        Ok(())
    }

    pub fn get_active(&self) -> BnEntry {
        self.dictionary[self.active].clone()
    }

    /// Mutable view of the active entry; edits land in that entry only.
    pub fn active_bn_mut(&mut self) -> &mut BnEntry {
        &mut self.dictionary[self.active]
    }

    pub(crate) fn bn_entry_mut(&mut self, k: usize) -> Result<&mut BnEntry> {
        self.check_entry(k)?;
        Ok(&mut self.dictionary[k])
    }

    pub fn dictionary(&self) -> &[BnEntry] {
        &self.dictionary
    }

    pub fn set_dictionary(&mut self, entries: Vec<BnEntry>, active: usize) -> Result<()> {
        if entries.is_empty() || active >= entries.len() {
            return Err(Error::invalid("dictionary needs entry 0 and a valid active index"));
        }
        if entries.iter().any(|e| !e.congruent(&self.layout)) {
            return Err(Error::invalid("BN entry shapes do not match the network"));
        }
        self.dictionary = entries;
        self.active = active;
        Ok(())
    }

    // ---- statistics ----

    pub fn running_stats(&self) -> Option<&RunningStats> {
        self.running.as_ref()
    }

    pub fn set_running_stats(&mut self, stats: Option<RunningStats>) -> Result<()> {
        if let Some(s) = &stats {
            let ok = s.mean.len() == self.cfg.visual.len()
                && s.var.len() == self.cfg.visual.len()
                && self
                    .cfg
                    .visual
                    .iter()
                    .enumerate()
                    .all(|(l, c)| s.mean[l].len() == c.channels && s.var[l].len() == c.channels);
            if !ok {
                return Err(Error::invalid("running statistics do not match the network"));
            }
        }
        self.running = stats;
        Ok(())
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics (momentum update; the first call copies them).
    pub fn update_running_stats(&mut self, pass: &ForwardPass) -> Result<()> {
        let (mean, var) = pass
            .batch_stats
            .as_ref()
            .ok_or_else(|| Error::state("forward pass carries no batch statistics (not train mode)"))?;
        let m = self.cfg.bn_momentum;
        match &mut self.running {
            None => {
                self.running = Some(RunningStats {
                    mean: mean.clone(),
                    var: var.clone(),
                })
            }
            Some(r) => {
                for l in 0..mean.len() {
                    for c in 0..mean[l].len() {
                        r.mean[l][c] = (1.0 - m) * r.mean[l][c] + m * mean[l][c];
                        r.var[l][c] = (1.0 - m) * r.var[l][c] + m * var[l][c];
                    }
                }
            }
        }
        Ok(())
    }

    pub fn imu_norm(&self) -> &ImuNorm {
        &self.imu_norm
    }

    pub fn set_imu_norm(&mut self, n: ImuNorm) -> Result<()> {
        if n.mean.iter().chain(&n.std).any(|v| !v.is_finite()) || n.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("IMU normalization must be finite with positive std"));
        }
        self.imu_norm = n;
        Ok(())
    }
}
