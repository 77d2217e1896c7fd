//! Supervised source-domain training.
//!
//! Stage 1 fits {E_visual, E_inertial, D_fused} on the fused output; stage 2
//! fits D_inertial alone on cached inertial features.

mod optim;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{Adam, Sgd};

use crate::error::{Error, Result};
use crate::geometry::{pose_rmse, PoseDelta};
use crate::sensorsim::{SensorStream, SensorWindow};
use crate::vionet::{Gradients, ImuNorm, Mode, ParamSubset, VioNetwork};

fn d_batch() -> usize {
    16
}
fn d_epochs() -> usize {
    100
}
fn d_lr() -> f64 {
    1e-4
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_wd() -> f64 {
    5e-6
}
fn d_alpha() -> f64 {
    100.0
}
fn d_val() -> f64 {
    0.1
}
fn d_patience() -> usize {
    10
}
fn d_clip() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub adam_eps: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    /// rotation weight α
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_val")]
    pub val_fraction: f64,
    /// epochs without validation improvement before stopping
    #[serde(default = "d_patience")]
    pub patience: usize,
    /// global gradient-norm clip; 0 disables
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: d_batch(),
            epochs: d_epochs(),
            lr: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            adam_eps: d_eps(),
            weight_decay: d_wd(),
            alpha: d_alpha(),
            seed: 0,
            val_fraction: d_val(),
            patience: d_patience(),
            clip_norm: d_clip(),
        }
    }
}

impl TrainConfig {
    /// Stage-2 defaults: batch 64, otherwise as stage 1.
    pub fn stage2() -> Self {
        TrainConfig {
            batch_size: 64,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("alpha must be > 0"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("lr must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::invalid("val_fraction must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::invalid("weight_decay, clip_norm >= 0 and adam_eps > 0 required"));
        }
        Ok(())
    }
}

/// (1/B)·Σ (‖v − v̂‖² + α‖φ − φ̂‖²).
pub fn train_loss(pred: &[PoseDelta], gt: &[PoseDelta], alpha: f64) -> Result<f64> {
    check_batch(pred, gt)?;
    let b = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p.v - g.v).norm_squared() + alpha * (p.phi - g.phi).norm_squared())
        .sum::<f64>()
        / b)
}

/// d loss / d pred in `[φ, v]` layout.
pub fn train_loss_grad(pred: &[PoseDelta], gt: &[PoseDelta], alpha: f64) -> Result<Vec<[f64; 6]>> {
    check_batch(pred, gt)?;
    let k = 2.0 / pred.len() as f64;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let (a, b) = (p.to_array(), g.to_array());
            std::array::from_fn(|i| k * (a[i] - b[i]) * if i < 3 { alpha } else { 1.0 })
        })
        .collect())
}

fn check_batch(pred: &[PoseDelta], gt: &[PoseDelta]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "prediction batch has {} poses, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

/// Transitions drawn from one or more streams, built lazily.
#[derive(Debug, Clone)]
pub struct Dataset<'a> {
    streams: &'a [SensorStream],
    items: Vec<(usize, usize)>,
    targets: Vec<PoseDelta>,
}

impl<'a> Dataset<'a> {
    pub fn new(streams: &'a [SensorStream]) -> Self {
        let mut items = Vec::new();
        let mut targets = Vec::new();
        for (s, st) in streams.iter().enumerate() {
            let d = st.gt_deltas();
            for (t, delta) in d.into_iter().enumerate() {
                items.push((s, t));
                targets.push(delta);
            }
        }
        Dataset {
            streams,
            items,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn window(&self, i: usize) -> SensorWindow {
        let (s, t) = self.items[i];
        self.streams[s].window(t).expect("index built from stream lengths")
    }

    pub fn target(&self, i: usize) -> PoseDelta {
        self.targets[i]
    }

    /// Fixed-seed shuffle, the first `ceil(frac·n)` items become validation.
    pub fn split(&self, seed: u64, frac: f64) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let n_val = if frac > 0.0 && self.len() > 1 {
            ((frac * self.len() as f64).ceil() as usize).clamp(1, self.len() - 1)
        } else {
            0
        };
        let val = idx[..n_val].to_vec();
        let mut train = idx[n_val..].to_vec();
        train.sort_unstable();
        (train, val)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: String,
    pub curve: Vec<CurvePoint>,
    pub initial_val: f64,
    pub best_val: f64,
    /// 0 when no epoch beat the initial model
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,split,loss\n");
        for p in &self.curve {
            s.push_str(&format!("{},{},{:?}\n", p.epoch, p.split, p.loss));
        }
        s
    }

    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.loss_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Which output a loss or error is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Fused,
    Inertial,
}

fn epoch_order(train: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = train.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    order
}

fn diverged(stage: &str, epoch: usize, batch: usize, loss: f64, last: f64, net: &VioNetwork) -> Error {
    let norms: Vec<String> = net
        .layout()
        .frozen
        .iter()
        .zip(net.frozen_params())
        .map(|(s, t)| format!("{}={:.3e}", s.name, t.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    Error::Diverged(format!(
        "{stage}: loss {loss} at epoch {epoch} batch {batch} (last finite batch loss {last:.6e}); parameter norms: {}",
        norms.join(" ")
    ))
}

/// Infer-mode pose loss (|Δv|² + α|Δφ|², averaged) of one branch over `idx`.
pub fn eval_loss(net: &VioNetwork, data: &Dataset, idx: &[usize], branch: Branch, alpha: f64) -> Result<f64> {
    let (pred, gt) = predictions(net, data, idx, branch)?;
    train_loss(&pred, &gt, alpha)
}

fn predictions(net: &VioNetwork, data: &Dataset, idx: &[usize], branch: Branch) -> Result<(Vec<PoseDelta>, Vec<PoseDelta>)> {
    let pred = net.exec().try_map(idx.len(), |j| {
        let w = data.window(idx[j]);
        Ok::<_, Error>(match branch {
            Branch::Fused => net.forward(&w, 0, Mode::Infer)?.fused,
            Branch::Inertial => net.head_predict(&net.inertial_feature(&w)?),
        })
    })?;
    Ok((pred, idx.iter().map(|&i| data.target(i)).collect()))
}

/// Pose-wise t_rmse of a branch over `idx` (entry 0, infer mode).
pub fn branch_t_rmse(net: &VioNetwork, data: &Dataset, idx: &[usize], branch: Branch) -> Result<f64> {
    let (pred, gt) = predictions(net, data, idx, branch)?;
    Ok(pose_rmse(&pred, &gt)?.t_rmse)
}

fn clip(g: &mut Gradients, max_norm: f64) {
    if max_norm > 0.0 {
        let n = g.global_norm();
        if n > max_norm {
            g.scale(max_norm / n);
        }
    }
}

/// Stage 1: Adam on the pose loss of the fused output over every parameter except
/// D_inertial. Also fits the IMU standardization on the training split.
/// The network ends at its best-validation state.
pub fn train_vio(net: &mut VioNetwork, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    train_stage1(net, data, cfg, "stage1", true)
}

/// Stage 1 loop on arbitrary data; used directly for fine-tuned baselines
/// (which keep the existing IMU normalization).
pub fn train_stage1(net: &mut VioNetwork, data: &Dataset, cfg: &TrainConfig, stage: &str, fit_imu: bool) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("no training windows"));
    }
    let (train, val) = data.split(cfg.seed, cfg.val_fraction);
    let val = if val.is_empty() { train.clone() } else { val };
    if fit_imu {
        let ws: Vec<SensorWindow> = train.iter().map(|&i| data.window(i)).collect();
        net.set_imu_norm(ImuNorm::fit(ws.iter().map(|w| w.imu.as_slice()))?)?;
    }
    if net.running_stats().is_none() {
        // seed running statistics from a few train-mode batches
        for chunk in train.chunks(cfg.batch_size).take(4) {
            let ws: Vec<SensorWindow> = chunk.iter().map(|&i| data.window(i)).collect();
            let refs: Vec<&SensorWindow> = ws.iter().collect();
            let pass = net.forward_batch(&refs, 0, Mode::Train, false)?;
            net.update_running_stats(&pass)?;
        }
    }
    let initial_val = eval_loss(net, data, &val, Branch::Fused, cfg.alpha)?;
    let mut report = TrainReport {
        stage: stage.to_string(),
        curve: vec![CurvePoint {
            epoch: 0,
            split: "val".into(),
            loss: initial_val,
        }],
        initial_val,
        best_val: initial_val,
        best_epoch: 0,
        epochs_run: 0,
        stopped_early: false,
    };
    let mut best = net.clone();
    let mut opt = Adam::new(cfg);
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(&train, cfg.seed, epoch);
        let (mut sum, mut last) = (0.0, f64::NAN);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let ws: Vec<SensorWindow> = chunk.iter().map(|&i| data.window(i)).collect();
            let refs: Vec<&SensorWindow> = ws.iter().collect();
            let gt: Vec<PoseDelta> = chunk.iter().map(|&i| data.target(i)).collect();
            let pass = net.forward_batch(&refs, 0, Mode::Train, true)?;
            let pred: Vec<PoseDelta> = pass.outputs.iter().map(|o| o.fused).collect();
            let loss = train_loss(&pred, &gt, cfg.alpha)?;
            if !loss.is_finite() {
                return Err(diverged(stage, epoch, bi, loss, last, net));
            }
            let dl = train_loss_grad(&pred, &gt, cfg.alpha)?;
            let mut g = net.gradients(&pass, &dl, &vec![[0.0; 6]; chunk.len()], ParamSubset::STAGE1)?;
            if !g.is_finite() {
                return Err(diverged(stage, epoch, bi, f64::NAN, loss, net));
            }
            clip(&mut g, cfg.clip_norm);
            opt.step(net, &g)?;
            net.update_running_stats(&pass)?;
            sum += loss * chunk.len() as f64;
            last = loss;
        }
        let val_loss = eval_loss(net, data, &val, Branch::Fused, cfg.alpha)?;
        if !val_loss.is_finite() {
            return Err(diverged(stage, epoch, usize::MAX, val_loss, last, net));
        }
        report.curve.push(CurvePoint {
            epoch,
            split: "train".into(),
            loss: sum / train.len() as f64,
        });
        report.curve.push(CurvePoint {
            epoch,
            split: "val".into(),
            loss: val_loss,
        });
        report.epochs_run = epoch;
        if val_loss < report.best_val {
            report.best_val = val_loss;
            report.best_epoch = epoch;
            best = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    *net = best;
    Ok(report)
}

/// Stage 2: pose loss on ŷ_i, updating D_inertial only. Inertial features are
/// computed once since everything upstream is frozen.
pub fn train_inertial_decoder(net: &mut VioNetwork, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("no training windows"));
    }
    let feats: Vec<Vec<f64>> = net.exec().try_map(data.len(), |i| net.inertial_feature(&data.window(i)))?;
    let (train, val) = data.split(cfg.seed, cfg.val_fraction);
    let val = if val.is_empty() { train.clone() } else { val };
    let val_loss_of = |net: &VioNetwork| {
        let pred: Vec<PoseDelta> = val.iter().map(|&i| net.head_predict(&feats[i])).collect();
        let gt: Vec<PoseDelta> = val.iter().map(|&i| data.target(i)).collect();
        train_loss(&pred, &gt, cfg.alpha)
    };
    let initial_val = val_loss_of(net)?;
    let mut report = TrainReport {
        stage: "stage2".into(),
        curve: vec![CurvePoint {
            epoch: 0,
            split: "val".into(),
            loss: initial_val,
        }],
        initial_val,
        best_val: initial_val,
        best_epoch: 0,
        epochs_run: 0,
        stopped_early: false,
    };
    let head_idx: Vec<usize> = net.layout().head.iter().flat_map(|&(w, b)| [w, b]).collect();
    let snapshot = |net: &VioNetwork| -> Vec<Vec<f64>> { head_idx.iter().map(|&i| net.frozen_params()[i].clone()).collect() };
    let mut best = snapshot(net);
    let mut opt = Adam::new(cfg);
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(&train, cfg.seed, epoch);
        let (mut sum, mut last) = (0.0, f64::NAN);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut frozen: Vec<Vec<f64>> = net
                .layout()
                .frozen
                .iter()
                .enumerate()
                .map(|(i, s)| if head_idx.contains(&i) { vec![0.0; s.len()] } else { Vec::new() })
                .collect();
            let outs: Vec<_> = chunk.iter().map(|&i| net.head_forward(&feats[i])).collect();
            let pred: Vec<PoseDelta> = outs.iter().map(|o| o.0).collect();
            let gt: Vec<PoseDelta> = chunk.iter().map(|&i| data.target(i)).collect();
            let loss = train_loss(&pred, &gt, cfg.alpha)?;
            if !loss.is_finite() {
                return Err(diverged("stage2", epoch, bi, loss, last, net));
            }
            let dl = train_loss_grad(&pred, &gt, cfg.alpha)?;
            for ((_, tape), d) in outs.iter().zip(&dl) {
                net.head_backward(tape, d, &mut frozen);
            }
            let mut g = Gradients {
                subset: ParamSubset::INERTIAL_DEC,
                frozen,
                affine: Vec::new(),
                entry: 0,
            };
            clip(&mut g, cfg.clip_norm);
            opt.step(net, &g)?;
            sum += loss * chunk.len() as f64;
            last = loss;
        }
        let val_loss = val_loss_of(net)?;
        report.curve.push(CurvePoint {
            epoch,
            split: "train".into(),
            loss: sum / train.len() as f64,
        });
        report.curve.push(CurvePoint {
            epoch,
            split: "val".into(),
            loss: val_loss,
        });
        report.epochs_run = epoch;
        if val_loss < report.best_val {
            report.best_val = val_loss;
            report.best_epoch = epoch;
            best = snapshot(net);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    let params = net.frozen_params_mut();
    for (&i, t) in head_idx.iter().zip(best) {
        params[i] = t;
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
