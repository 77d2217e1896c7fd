//! Online test-time adaptation.
//!
//! A [`ProxyBank`] holds one reference ddf per domain (entry 0 is clean).
//! Each transition is matched to its nearest proxy; transitions matched to a
//! noise domain take a gradient step on that domain's BN-affine entry with
//! the inertial prediction as the pseudo label. Entry 0 and Θ_f are never
//! touched.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corruption::{apply_schedule, NoiseId, NoiseSchedule};
use crate::error::{Error, Result};
use crate::geometry::PoseDelta;
use crate::sensorsim::{SensorStream, SensorWindow};
use crate::training::{Adam, Sgd};
use crate::vionet::{Mode, ParamSubset, VioNetwork};

#[cfg(test)]
mod tests;

/// Reference ddf per domain plus the noise each entry stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyBank {
    proxies: Vec<Vec<f64>>,
    labels: Vec<NoiseId>,
}

impl ProxyBank {
    pub fn new(proxies: Vec<Vec<f64>>, labels: Vec<NoiseId>) -> Result<ProxyBank> {
        let b = ProxyBank { proxies, labels };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.proxies.is_empty() || self.proxies.len() != self.labels.len() {
            return Err(Error::invalid("proxy bank needs one label per proxy and at least entry 0"));
        }
        if self.labels[0] != NoiseId::Clean {
            return Err(Error::invalid("proxy 0 must be labeled clean"));
        }
        for (i, l) in self.labels.iter().enumerate() {
            if self.labels[..i].contains(l) {
                return Err(Error::invalid(format!("noise {l} appears twice in the proxy bank")));
            }
        }
        let n = self.proxies[0].len();
        if n == 0 || self.proxies.iter().any(|p| p.len() != n || p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("proxies must be finite, non-empty and of equal length"));
        }
        Ok(())
    }

    /// K + 1
    pub fn len(&self) -> usize {
        self.proxies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxies.is_empty()
    }

    pub fn proxies(&self) -> &[Vec<f64>] {
        &self.proxies
    }

    pub fn labels(&self) -> &[NoiseId] {
        &self.labels
    }

    pub fn label(&self, k: usize) -> Result<NoiseId> {
        self.labels.get(k).copied().ok_or(Error::Index {
            index: k,
            len: self.labels.len(),
        })
    }

    pub fn index_of(&self, noise: NoiseId) -> Option<usize> {
        self.labels.iter().position(|&l| l == noise)
    }

    /// Nearest proxy in Euclidean distance, ties toward the smaller index.
    pub fn nearest(&self, ddf: &[f64]) -> Result<usize> {
        if ddf.len() != self.proxies[0].len() {
            return Err(Error::invalid(format!(
                "ddf has {} values, proxies have {}",
                ddf.len(),
                self.proxies[0].len()
            )));
        }
        let mut best = (0, f64::INFINITY);
        for (k, p) in self.proxies.iter().enumerate() {
            let d: f64 = p.iter().zip(ddf).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        Ok(best.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TtaOptimizer {
    /// θ ← θ − η∇L
    #[default]
    Sgd,
    Adam,
}

fn d_eta() -> f64 {
    1e-4
}
fn d_alpha() -> f64 {
    100.0
}
fn d_m() -> usize {
    8
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub optimizer: TtaOptimizer,
    /// windows per domain used to build a proxy
    #[serde(default = "d_m")]
    pub proxy_samples: usize,
    /// when off, every transition adapts entry 1 regardless of the match
    #[serde(default = "d_true")]
    pub gating: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            eta: d_eta(),
            alpha: d_alpha(),
            optimizer: TtaOptimizer::Sgd,
            proxy_samples: d_m(),
            gating: true,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta must be finite and >= 0"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("alpha must be > 0"));
        }
        if self.proxy_samples == 0 {
            return Err(Error::invalid("proxy_samples must be >= 1"));
        }
        Ok(())
    }
}

/// ‖v̂_i − v̂_f‖² + α‖φ̂_i − φ̂_f‖²
pub fn consistency_loss(fused: &PoseDelta, inertial: &PoseDelta, alpha: f64) -> f64 {
    (inertial.v - fused.v).norm_squared() + alpha * (inertial.phi - fused.phi).norm_squared()
}

/// Gradient wrt ŷ_f, `[φ, v]` layout; ŷ_i is a constant.
pub fn consistency_grad(fused: &PoseDelta, inertial: &PoseDelta, alpha: f64) -> [f64; 6] {
    let (f, i) = (fused.to_array(), inertial.to_array());
    std::array::from_fn(|j| 2.0 * (f[j] - i[j]) * if j < 3 { alpha } else { 1.0 })
}

/// Mean ddf per domain. `domains[0]` must be the clean set.
pub fn init_proxies(net: &VioNetwork, domains: &[(NoiseId, Vec<SensorWindow>)]) -> Result<ProxyBank> {
    let mut proxies = Vec::with_capacity(domains.len());
    let mut labels = Vec::with_capacity(domains.len());
    for (noise, ws) in domains {
        if ws.is_empty() {
            return Err(Error::invalid(format!("no sample windows for domain {noise}")));
        }
        let ddfs = net.exec().try_map(ws.len(), |i| net.ddf(&ws[i]))?;
        let mut mean = vec![0.0; ddfs[0].len()];
        for d in &ddfs {
            mean.iter_mut().zip(d.values()).for_each(|(m, v)| *m += v);
        }
        let n = ddfs.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        proxies.push(mean);
        labels.push(*noise);
    }
    ProxyBank::new(proxies, labels)
}

/// Proxy sample sets drawn from `stream`: `m` evenly spaced transitions,
/// clean and under each noise in `noises` at `severity`.
pub fn proxy_domains(
    stream: &SensorStream,
    m: usize,
    noises: &[NoiseId],
    severity: u8,
    seed: u64,
) -> Result<Vec<(NoiseId, Vec<SensorWindow>)>> {
    let n = stream.transitions();
    if m == 0 || n == 0 {
        return Err(Error::invalid("need at least one proxy sample and one transition"));
    }
    let picks: Vec<usize> = (0..m.min(n)).map(|i| i * n / m.min(n)).collect();
    let take = |s: &SensorStream| picks.iter().map(|&t| s.window(t)).collect::<Result<Vec<_>>>();
    let mut out = vec![(NoiseId::Clean, take(stream)?)];
    for &noise in noises {
        if noise == NoiseId::Clean {
            return Err(Error::invalid("clean is implicit as domain 0"));
        }
        let sched = NoiseSchedule::single_shift(stream.len(), 0, stream.len(), noise, severity)?;
        let (corrupted, _) = apply_schedule(stream, &sched, seed)?;
        out.push((noise, take(&corrupted)?));
    }
    Ok(out)
}

/// Sizes the dictionary to the bank with fresh copies of entry 0.
pub fn prepare_dictionary(net: &mut VioNetwork, bank: &ProxyBank) {
    net.reset_dictionary(bank.len() - 1);
}

/// Optimizer state carried across TTA steps.
#[derive(Debug, Clone)]
pub struct TtaState {
    adam: Option<Adam>,
}

impl TtaState {
    pub fn new(cfg: &AdaptConfig) -> Self {
        TtaState {
            adam: (cfg.optimizer == TtaOptimizer::Adam).then(|| Adam::with_params(cfg.eta, 0.9, 0.999, 1e-8, 0.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// pre-update L_TTA
    pub loss: f64,
    pub fused: PoseDelta,
    pub inertial: PoseDelta,
}

/// One gradient step on entry `k` from a single adapt-mode forward.
pub fn tta_step(net: &mut VioNetwork, w: &SensorWindow, k: usize, cfg: &AdaptConfig, state: &mut TtaState) -> Result<StepOutcome> {
    if k == 0 {
        return Err(Error::Contract("the source BN entry (k = 0) is never adapted".into()));
    }
    net.bn_entry(k)?;
    let pass = net.forward_batch(&[w], k, Mode::Adapt, true)?;
    let o = &pass.outputs[0];
    let loss = consistency_loss(&o.fused, &o.inertial, cfg.alpha);
    let d = consistency_grad(&o.fused, &o.inertial, cfg.alpha);
    let g = net.gradients(&pass, &[d], &[[0.0; 6]], ParamSubset::BN_AFFINE)?;
    if !g.is_finite() {
        return Err(Error::Diverged(format!("non-finite TTA gradient on entry {k} (loss {loss})")));
    }
    match &mut state.adam {
        Some(adam) => adam.step(net, &g)?,
        None => Sgd { lr: cfg.eta }.step(net, &g)?,
    }
    Ok(StepOutcome {
        loss,
        fused: o.fused,
        inertial: o.inertial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    /// matched domain
    pub k: usize,
    /// entry used for the prediction (equals k unless gating is off)
    pub entry: usize,
    /// pre-update consistency loss when a step was taken
    pub loss: Option<f64>,
    pub fused: PoseDelta,
    pub inertial: PoseDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptTrace {
    pub labels: Vec<NoiseId>,
    pub records: Vec<TraceRecord>,
}

impl AdaptTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ks(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.k).collect()
    }

    pub fn predictions(&self) -> Vec<PoseDelta> {
        self.records.iter().map(|r| r.fused).collect()
    }

    /// Bank label of each matched k.
    pub fn matched_labels(&self) -> Vec<NoiseId> {
        self.records.iter().map(|r| self.labels[r.k]).collect()
    }

    /// Columns `t,k,label,L_TTA,t_err,r_err`; errors are against `gt`,
    /// L_TTA is empty on steps without adaptation.
    pub fn to_csv(&self, gt: &[PoseDelta]) -> Result<String> {
        if gt.len() != self.records.len() {
            return Err(Error::invalid("ground truth and trace lengths differ"));
        }
        let mut s = String::from("t,k,label,L_TTA,t_err,r_err\n");
        for (r, g) in self.records.iter().zip(gt) {
            let loss = r.loss.map(|l| format!("{l:?}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{:?},{:?}\n",
                r.t,
                r.k,
                self.labels[r.k],
                loss,
                (r.fused.v - g.v).norm(),
                (r.fused.phi - g.phi).norm()
            ));
        }
        Ok(s)
    }

    pub fn write_csv(&self, path: &Path, gt: &[PoseDelta]) -> Result<()> {
        std::fs::write(path, self.to_csv(gt)?).map_err(|e| Error::io(path, e))
    }
}

fn check_ready(net: &VioNetwork, bank: &ProxyBank, cfg: &AdaptConfig) -> Result<()> {
    cfg.validate()?;
    bank.validate()?;
    if net.num_entries() != bank.len() {
        return Err(Error::state(format!(
            "dictionary has {} entries but the proxy bank {}",
            net.num_entries(),
            bank.len()
        )));
    }
    if net.running_stats().is_none() {
        return Err(Error::state("network is untrained (no running statistics)"));
    }
    if !cfg.gating && bank.len() < 2 {
        return Err(Error::invalid("ungated adaptation needs a dictionary entry besides 0"));
    }
    Ok(())
}

/// The online loop. Per transition: match the domain from the entry-0 ddf,
/// load the matched entry, record the infer-mode prediction, then adapt the
/// entry when it is not the source one.
pub fn run_online(net: &mut VioNetwork, stream: &SensorStream, bank: &ProxyBank, cfg: &AdaptConfig) -> Result<(Vec<PoseDelta>, AdaptTrace)> {
    check_ready(net, bank, cfg)?;
    let mut state = TtaState::new(cfg);
    let mut trace = AdaptTrace {
        labels: bank.labels().to_vec(),
        records: Vec::with_capacity(stream.transitions()),
    };
    for t in 0..stream.transitions() {
        let w = stream.window(t)?;
        let k = bank.nearest(net.ddf(&w)?.values())?;
        let entry = if cfg.gating { k } else { 1 };
        net.load_bn_entry(entry)?;
        let out = net.forward(&w, entry, Mode::Infer)?;
        let loss = if entry != 0 {
            Some(tta_step(net, &w, entry, cfg, &mut state)?.loss)
        } else {
            None
        };
        trace.records.push(TraceRecord {
            t,
            k,
            entry,
            loss,
            fused: out.fused,
            inertial: out.inertial,
        });
    }
    net.load_bn_entry(0)?;
    Ok((trace.predictions(), trace))
}

/// Frozen baseline: entry 0, infer mode, no matching.
pub fn frozen_predictions(net: &VioNetwork, stream: &SensorStream) -> Result<Vec<PoseDelta>> {
    let ws = stream.windows();
    let refs: Vec<&SensorWindow> = ws.iter().collect();
    Ok(net.infer_all(&refs, 0)?.into_iter().map(|o| o.fused).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryResult {
    /// predictions with the adapted entries after the last pass
    pub predictions: Vec<PoseDelta>,
    pub ks: Vec<usize>,
    /// mean pre-update loss of each pass over adapted transitions
    pub epoch_loss: Vec<f64>,
}

/// Repeats the stream `epochs` times adapting every transition matched to a
/// noise domain, then evaluates with the matched entries.
pub fn run_stationary_tta(
    net: &mut VioNetwork,
    stream: &SensorStream,
    bank: &ProxyBank,
    cfg: &AdaptConfig,
    epochs: usize,
) -> Result<StationaryResult> {
    check_ready(net, bank, cfg)?;
    let ws = stream.windows();
    let ks = net.exec().try_map(ws.len(), |t| -> Result<usize> {
        let k = bank.nearest(net.ddf(&ws[t])?.values())?;
        Ok(if cfg.gating { k } else { 1 })
    })?;
    let mut state = TtaState::new(cfg);
    let mut epoch_loss = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (mut sum, mut n) = (0.0, 0usize);
        for (w, &k) in ws.iter().zip(&ks) {
            if k != 0 {
                sum += tta_step(net, w, k, cfg, &mut state)?.loss;
                n += 1;
            }
        }
        epoch_loss.push(if n > 0 { sum / n as f64 } else { 0.0 });
    }
    let predictions = net
        .exec()
        .try_map(ws.len(), |t| net.forward(&ws[t], ks[t], Mode::Infer).map(|o| o.fused))?;
    Ok(StationaryResult {
        predictions,
        ks,
        epoch_loss,
    })
}

/// Per-transition label: the noise of the later frame of each pair.
pub fn transition_labels(frame_labels: &[NoiseId]) -> Vec<NoiseId> {
    frame_labels.iter().skip(1).copied().collect()
}

/// Percentage of transitions whose matched domain carries the true label.
pub fn ddf_accuracy(trace: &AdaptTrace, labels: &[NoiseId]) -> Result<f64> {
    if trace.len() != labels.len() {
        return Err(Error::invalid(format!(
            "trace has {} transitions, labels {}",
            trace.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("empty trace"));
    }
    let hits = trace.matched_labels().iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// Pearson correlation coefficient; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("pearson needs two equal-length series of at least 2 values"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some(sab / (saa * sbb).sqrt()))
}

/// Per-pose ‖v̂_f − v_gt‖ and ‖v̂_f − v̂_i‖ of the frozen model.
pub fn pseudo_label_errors(net: &VioNetwork, stream: &SensorStream) -> Result<(Vec<f64>, Vec<f64>)> {
    let ws = stream.windows();
    let refs: Vec<&SensorWindow> = ws.iter().collect();
    let outs = net.infer_all(&refs, 0)?;
    let gt = stream.gt_deltas();
    Ok(outs
        .iter()
        .zip(&gt)
        .map(|(o, g)| ((o.fused.v - g.v).norm(), (o.fused.v - o.inertial.v).norm()))
        .unzip())
}
