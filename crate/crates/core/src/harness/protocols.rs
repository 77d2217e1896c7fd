use std::collections::BTreeMap;
use std::path::Path;

use super::config::{DataConfig, ExperimentConfig};
use super::report::{Method, MetricsReport, Protocol, SequenceInput, SequenceReport};
use crate::adaptation::{frozen_predictions, run_online, run_stationary_tta, transition_labels, ProxyBank};
use crate::checkpoint::Checkpoint;
use crate::corruption::{apply_schedule_with, Episode, NoiseId, NoiseSchedule};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{compose, kitti, transform_to_delta, PoseDelta};
use crate::sensorsim::SensorStream;
use crate::training::{train_stage1, Dataset, TrainConfig, TrainReport};
use crate::vionet::VioNetwork;

/// A trained network with its proxy bank, ready for the protocols.
#[derive(Debug, Clone)]
pub struct Deployed {
    pub net: VioNetwork,
    pub bank: ProxyBank,
}

impl Deployed {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Deployed> {
        let bank = ck
            .proxies
            .clone()
            .ok_or_else(|| Error::state("checkpoint has no proxies; run init-proxies first"))?;
        Ok(Deployed {
            net: ck.to_network()?,
            bank,
        })
    }

    pub fn load(path: &Path) -> Result<Deployed> {
        if !path.exists() {
            return Err(Error::state(format!("no checkpoint at {}; run train first", path.display())));
        }
        Deployed::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Equal-length segments of `noises` cycled `cycles` times over `frames`
/// frames; the last segment absorbs the remainder.
pub fn continual_schedule(frames: usize, noises: &[NoiseId], cycles: usize, severity: u8) -> Result<NoiseSchedule> {
    let n = noises.len() * cycles;
    if n == 0 || frames < n {
        return Err(Error::invalid(format!("{frames} frames cannot hold {n} noise segments")));
    }
    let seg = frames / n;
    let episodes = (0..n)
        .map(|i| Episode {
            start: i * seg,
            end: if i + 1 == n { frames } else { (i + 1) * seg },
            noise: noises[i % noises.len()],
            severity,
        })
        .collect();
    NoiseSchedule::new(frames, episodes)
}

/// Episode frames `[t0, t1)` for the configured fractions.
pub fn shift_bounds(frames: usize, start: f64, end: f64) -> (usize, usize) {
    let t0 = ((frames as f64 * start).round() as usize).max(1);
    let t1 = ((frames as f64 * end).round() as usize).clamp(t0 + 1, frames);
    (t0, t1)
}

fn frame_period(cfg: &ExperimentConfig) -> f64 {
    match &cfg.data {
        DataConfig::Synthetic(s) => s.scene.frame_period,
        DataConfig::Kitti(k) => k.frame_period,
    }
}

/// Corruption seed of protocol seed `seed`; baseline and TTA share it.
pub fn corruption_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9).wrapping_add(17)
}

struct SeedRun<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    gt: Vec<PoseDelta>,
    labels: Vec<NoiseId>,
    noise: Option<NoiseId>,
    episode: Option<(usize, usize)>,
}

impl SeedRun<'_> {
    fn report(&self, method: Method, pred: &[PoseDelta], ks: &[usize], loss: &[Option<f64>], bank: Option<&ProxyBank>) -> Result<SequenceReport> {
        SequenceReport::compute(SequenceInput {
            seed: self.seed,
            method,
            noise: self.noise,
            pred,
            gt: &self.gt,
            labels: &self.labels,
            ks,
            loss,
            bank: bank.map(|b| b.labels()),
            episode: self.episode,
            frame_period: frame_period(self.cfg),
        })
    }
}

/// Frozen baseline and online TTA on one scheduled stream.
fn online_pair(cfg: &ExperimentConfig, model: &Deployed, seed: u64, sched: &NoiseSchedule, episode: Option<(usize, usize)>, stream: &SensorStream) -> Result<Vec<SequenceReport>> {
    let (cs, frame_labels) = apply_schedule_with(stream, sched, corruption_seed(seed), Exec::Sequential)?;
    let run = SeedRun {
        cfg,
        seed,
        gt: cs.gt_deltas(),
        labels: transition_labels(&frame_labels),
        noise: None,
        episode,
    };
    let frozen = frozen_predictions(&model.net, &cs)?;
    let mut net = model.net.clone();
    let (pred, trace) = run_online(&mut net, &cs, &model.bank, &cfg.adapt)?;
    let loss: Vec<Option<f64>> = trace.records.iter().map(|r| r.loss).collect();
    Ok(vec![
        run.report(Method::Frozen, &frozen, &[], &[], None)?,
        run.report(Method::Tta, &pred, &trace.ks(), &loss, Some(&model.bank))?,
    ])
}

/// Loads the protocol stream of every seed, then runs `f` per seed with
/// the network pinned to sequential execution inside.
fn per_seed<F>(cfg: &ExperimentConfig, model: &Deployed, f: F) -> Result<Vec<SequenceReport>>
where
    F: Fn(u64, &SensorStream, &Deployed) -> Result<Vec<SequenceReport>> + Sync + Send,
{
    let exec = model.net.exec();
    let net_cfg = model.net.config().clone();
    let mut inner = model.clone();
    inner.net.set_exec(Exec::Sequential);
    let runs = exec.try_map(cfg.seeds.len(), |i| {
        let seed = cfg.seeds[i];
        let stream = cfg.data.test_stream(&net_cfg, seed, Exec::Sequential)?;
        f(seed, &stream, &inner)
    })?;
    Ok(runs.into_iter().flatten().collect())
}

pub fn run_continual(cfg: &ExperimentConfig, model: &Deployed) -> Result<MetricsReport> {
    let p = &cfg.protocol;
    let seqs = per_seed(cfg, model, |seed, stream, m| {
        let sched = continual_schedule(stream.len(), &p.noises, p.cycles, p.severity)?;
        online_pair(cfg, m, seed, &sched, None, stream)
    })?;
    let schedule = cfg
        .data
        .test_scene(cfg.seeds[0])
        .map(|c| continual_schedule(c.frames, &p.noises, p.cycles, p.severity).map(|s| s.to_string()));
    Ok(MetricsReport::new(Protocol::Continual, Some(cfg.clone()), schedule.transpose()?, seqs))
}

pub fn run_single_shift(cfg: &ExperimentConfig, model: &Deployed) -> Result<MetricsReport> {
    let p = &cfg.protocol;
    let seqs = per_seed(cfg, model, |seed, stream, m| {
        let (t0, t1) = shift_bounds(stream.len(), p.shift_start, p.shift_end);
        let sched = NoiseSchedule::single_shift(stream.len(), t0, t1, p.shift_noise, p.severity)?;
        online_pair(cfg, m, seed, &sched, Some((t0, t1)), stream)
    })?;
    let schedule = cfg.data.test_scene(cfg.seeds[0]).map(|c| {
        let (t0, t1) = shift_bounds(c.frames, p.shift_start, p.shift_end);
        NoiseSchedule::single_shift(c.frames, t0, t1, p.shift_noise, p.severity).map(|s| s.to_string())
    });
    Ok(MetricsReport::new(Protocol::SingleShift, Some(cfg.clone()), schedule.transpose()?, seqs))
}

/// Online TTA over a caller-supplied schedule (an empty schedule gives a
/// plain evaluation of the frozen and adaptive paths on clean data).
pub fn run_scheduled(cfg: &ExperimentConfig, model: &Deployed, sched_for: &(dyn Fn(usize) -> Result<NoiseSchedule> + Sync)) -> Result<MetricsReport> {
    let seqs = per_seed(cfg, model, |seed, stream, m| {
        let sched = sched_for(stream.len())?;
        online_pair(cfg, m, seed, &sched, None, stream)
    })?;
    let schedule = cfg.data.test_scene(cfg.seeds[0]).map(|c| sched_for(c.frames).map(|s| s.to_string()));
    Ok(MetricsReport::new(Protocol::Continual, Some(cfg.clone()), schedule.transpose()?, seqs))
}

/// Stationary protocol: each noise corrupts the whole stream; frozen,
/// repeated-pass TTA and (when given) fine-tuned networks are scored on the
/// same corrupted bytes.
pub fn run_stationary(cfg: &ExperimentConfig, model: &Deployed, finetuned: &BTreeMap<NoiseId, VioNetwork>) -> Result<MetricsReport> {
    let p = &cfg.protocol;
    let seqs = per_seed(cfg, model, |seed, stream, m| {
        let mut out = Vec::new();
        for &noise in p.stationary_list() {
            let sched = NoiseSchedule::single_shift(stream.len(), 0, stream.len(), noise, p.severity)?;
            let (cs, frame_labels) = apply_schedule_with(stream, &sched, corruption_seed(seed), Exec::Sequential)?;
            let run = SeedRun {
                cfg,
                seed,
                gt: cs.gt_deltas(),
                labels: transition_labels(&frame_labels),
                noise: Some(noise),
                episode: None,
            };
            out.push(run.report(Method::Frozen, &frozen_predictions(&m.net, &cs)?, &[], &[], None)?);
            let mut net = m.net.clone();
            let r = run_stationary_tta(&mut net, &cs, &m.bank, &cfg.adapt, p.stationary_epochs)?;
            out.push(run.report(Method::Tta, &r.predictions, &r.ks, &[], Some(&m.bank))?);
            if let Some(ft) = finetuned.get(&noise) {
                let mut ft = ft.clone();
                ft.set_exec(Exec::Sequential);
                out.push(run.report(Method::Finetune, &frozen_predictions(&ft, &cs)?, &[], &[], None)?);
            }
        }
        Ok(out)
    })?;
    Ok(MetricsReport::new(Protocol::Stationary, Some(cfg.clone()), None, seqs))
}

/// Fine-tuned baseline for one noise: every weight trained further on the
/// training streams corrupted throughout by `noise`.
pub fn finetune_baseline(cfg: &ExperimentConfig, base: &VioNetwork, noise: NoiseId, exec: Exec) -> Result<(VioNetwork, TrainReport)> {
    let streams = cfg.data.train_streams(base.config(), exec)?;
    let corrupted = streams
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sched = NoiseSchedule::single_shift(s.len(), 0, s.len(), noise, cfg.protocol.severity)?;
            Ok(apply_schedule_with(s, &sched, corruption_seed(1000 + i as u64), exec)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new(&corrupted);
    let tc = TrainConfig {
        epochs: cfg.train.epochs.min(cfg.protocol.finetune_epochs),
        ..cfg.train.clone()
    };
    let mut net = base.clone();
    net.reset_dictionary(0);
    let rep = train_stage1(&mut net, &data, &tc, "finetune", false)?;
    Ok((net, rep))
}

/// Scores KITTI-format predicted poses against ground truth.
pub fn run_eval(pred: &Path, gt: &Path, frame_period: f64) -> Result<MetricsReport> {
    let deltas = |path: &Path| -> Result<Vec<PoseDelta>> {
        let poses = kitti::read_poses(path)?;
        Ok(poses
            .windows(2)
            .map(|w| transform_to_delta(&compose(&w[0].inverse(), &w[1])))
            .collect())
    };
    let p = deltas(pred)?;
    let g = deltas(gt)?;
    if p.len() != g.len() {
        return Err(Error::invalid(format!(
            "{} has {} poses, {} has {}",
            pred.display(),
            p.len() + 1,
            gt.display(),
            g.len() + 1
        )));
    }
    let labels = vec![NoiseId::Clean; g.len()];
    let seq = SequenceReport::compute(SequenceInput {
        seed: 0,
        method: Method::Given,
        noise: None,
        pred: &p,
        gt: &g,
        labels: &labels,
        ks: &[],
        loss: &[],
        bank: None,
        episode: None,
        frame_period,
    })?;
    Ok(MetricsReport::new(Protocol::Eval, None, None, vec![seq]))
}
