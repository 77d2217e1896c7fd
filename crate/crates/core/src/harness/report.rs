use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::corruption::NoiseId;
use crate::error::{Error, Result};
use crate::geometry::{integrate, pose_rmse, posewise_rotation_errors, posewise_translation_errors, relative_errors, Pose, PoseDelta};

pub const SCHEMA: &str = "litevio-report";
pub const SCHEMA_VERSION: u32 = 1;

/// Per-transition fields dropped by [`MetricsReport::summary`].
pub const SERIES: [&str; 7] = ["labels", "ks", "loss", "t_err", "r_err", "pred", "gt"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Continual,
    SingleShift,
    Stationary,
    Eval,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Continual => "continual",
            Protocol::SingleShift => "single-shift",
            Protocol::Stationary => "stationary",
            Protocol::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Frozen,
    Tta,
    Finetune,
    /// externally supplied predictions
    Given,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Frozen => "frozen",
            Method::Tta => "tta",
            Method::Finetune => "finetune",
            Method::Given => "given",
        }
    }
}

/// Pose-wise RMSE over a subset of transitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowError {
    pub start: usize,
    pub end: usize,
    pub t_rmse: Option<f64>,
}

/// Episode markers of a single-shift run. Transition `t` belongs to the
/// episode when frame `t + 1` is corrupted. Empty windows have no RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftWindows {
    pub t0: usize,
    pub t1: usize,
    pub pre: WindowError,
    pub during: WindowError,
    pub post: WindowError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseError {
    pub noise: NoiseId,
    pub transitions: usize,
    pub t_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub seed: u64,
    pub method: Method,
    /// stationary protocol noise
    pub noise: Option<NoiseId>,
    pub t_rmse: f64,
    pub r_rmse: f64,
    /// percent; absent when the sequence is shorter than 100 m
    pub t_rel: Option<f64>,
    /// degrees per 100 m
    pub r_rel: Option<f64>,
    pub ddf_accuracy: Option<f64>,
    pub per_noise: Vec<NoiseError>,
    pub windows: Option<ShiftWindows>,
    /// per transition
    pub labels: Vec<NoiseId>,
    /// matched domain per transition (adaptive methods only)
    pub ks: Vec<usize>,
    /// pre-update TTA loss per transition, absent where nothing adapted
    #[serde(default)]
    pub loss: Vec<Option<f64>>,
    pub t_err: Vec<f64>,
    pub r_err: Vec<f64>,
    /// `[φ, v]` rows
    pub pred: Vec<[f64; 6]>,
    pub gt: Vec<[f64; 6]>,
}

pub struct SequenceInput<'a> {
    pub seed: u64,
    pub method: Method,
    pub noise: Option<NoiseId>,
    pub pred: &'a [PoseDelta],
    pub gt: &'a [PoseDelta],
    pub labels: &'a [NoiseId],
    pub ks: &'a [usize],
    pub loss: &'a [Option<f64>],
    /// bank label per dictionary entry, for ddf accuracy
    pub bank: Option<&'a [NoiseId]>,
    /// frames `[t0, t1)` of a single-shift episode
    pub episode: Option<(usize, usize)>,
    pub frame_period: f64,
}

fn subset_rmse(t_err: &[f64], idx: impl Iterator<Item = usize>) -> (usize, Option<f64>) {
    let (mut n, mut s) = (0usize, 0.0);
    for i in idx {
        s += t_err[i] * t_err[i];
        n += 1;
    }
    (n, (n > 0).then(|| (s / n as f64).sqrt()))
}

impl SequenceReport {
    pub fn compute(inp: SequenceInput) -> Result<SequenceReport> {
        let n = inp.gt.len();
        let covers = |m: usize| m == 0 || m == n;
        if inp.labels.len() != n || !covers(inp.ks.len()) || !covers(inp.loss.len()) {
            return Err(Error::invalid("labels and matched domains must cover every transition"));
        }
        let rm = pose_rmse(inp.pred, inp.gt)?;
        let t_err = posewise_translation_errors(inp.pred, inp.gt)?;
        let r_err = posewise_rotation_errors(inp.pred, inp.gt)?;
        let rel = relative_errors(
            &integrate(&Pose::identity(), inp.pred, inp.frame_period)?,
            &integrate(&Pose::identity(), inp.gt, inp.frame_period)?,
        )?;
        let ddf_accuracy = match (inp.bank, inp.ks.is_empty()) {
            (Some(bank), false) => {
                let hits = inp.ks.iter().zip(inp.labels).filter(|(&k, &l)| bank.get(k) == Some(&l)).count();
                Some(100.0 * hits as f64 / n as f64)
            }
            _ => None,
        };
        let mut noises: Vec<NoiseId> = inp.labels.to_vec();
        noises.sort();
        noises.dedup();
        let per_noise = noises
            .into_iter()
            .map(|noise| {
                let (c, r) = subset_rmse(&t_err, (0..n).filter(|&i| inp.labels[i] == noise));
                NoiseError {
                    noise,
                    transitions: c,
                    t_rmse: r.expect("label present"),
                }
            })
            .collect();
        let windows = inp.episode.map(|(t0, t1)| {
            // transition t pairs frames t and t+1
            let a = t0.saturating_sub(1).min(n);
            let b = t1.saturating_sub(1).min(n);
            let w = |s: usize, e: usize| WindowError {
                start: s,
                end: e,
                t_rmse: subset_rmse(&t_err, s..e).1,
            };
            ShiftWindows {
                t0,
                t1,
                pre: w(0, a),
                during: w(a, b),
                post: w((b + 1).min(n), n),
            }
        });
        Ok(SequenceReport {
            seed: inp.seed,
            method: inp.method,
            noise: inp.noise,
            t_rmse: rm.t_rmse,
            r_rmse: rm.r_rmse,
            t_rel: rel.map(|r| r.t_rel),
            r_rel: rel.map(|r| r.r_rel),
            ddf_accuracy,
            per_noise,
            windows,
            labels: inp.labels.to_vec(),
            ks: inp.ks.to_vec(),
            loss: inp.loss.to_vec(),
            t_err,
            r_err,
            pred: inp.pred.iter().map(PoseDelta::to_array).collect(),
            gt: inp.gt.iter().map(PoseDelta::to_array).collect(),
        })
    }

    pub fn pred_deltas(&self) -> Vec<PoseDelta> {
        self.pred.iter().map(|a| PoseDelta::from_array(*a)).collect()
    }

    pub fn gt_deltas(&self) -> Vec<PoseDelta> {
        self.gt.iter().map(|a| PoseDelta::from_array(*a)).collect()
    }

    /// File-name stem, e.g. `tta_blur_seed3`.
    pub fn stem(&self) -> String {
        match self.noise {
            Some(n) => format!("{}_{}_seed{}", self.method.name(), n, self.seed),
            None => format!("{}_seed{}", self.method.name(), self.seed),
        }
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n: xs.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub noise: Option<NoiseId>,
    pub t_rmse: Stat,
    pub r_rmse: Stat,
    pub t_rel: Option<Stat>,
    pub r_rel: Option<Stat>,
    pub ddf_accuracy: Option<Stat>,
    pub per_noise: BTreeMap<NoiseId, Stat>,
    pub during_episode: Option<Stat>,
    pub post_episode: Option<Stat>,
}

fn collect(xs: impl Iterator<Item = Option<f64>>) -> Option<Stat> {
    let v: Option<Vec<f64>> = xs.collect();
    v.and_then(|v| Stat::of(&v))
}

/// Aggregates over seeds for every (method, noise) group, in sorted order.
pub fn aggregate(seqs: &[SequenceReport]) -> Vec<Aggregate> {
    let mut keys: Vec<(Method, Option<NoiseId>)> = seqs.iter().map(|s| (s.method, s.noise)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, noise)| {
            let g: Vec<&SequenceReport> = seqs.iter().filter(|s| s.method == method && s.noise == noise).collect();
            let mut per_noise = BTreeMap::new();
            let mut labels: Vec<NoiseId> = g.iter().flat_map(|s| s.per_noise.iter().map(|e| e.noise)).collect();
            labels.sort();
            labels.dedup();
            for l in labels {
                let vals: Vec<f64> = g
                    .iter()
                    .filter_map(|s| s.per_noise.iter().find(|e| e.noise == l).map(|e| e.t_rmse))
                    .collect();
                if let Some(st) = Stat::of(&vals) {
                    per_noise.insert(l, st);
                }
            }
            Aggregate {
                method,
                noise,
                t_rmse: Stat::of(&g.iter().map(|s| s.t_rmse).collect::<Vec<_>>()).expect("non-empty group"),
                r_rmse: Stat::of(&g.iter().map(|s| s.r_rmse).collect::<Vec<_>>()).expect("non-empty group"),
                t_rel: collect(g.iter().map(|s| s.t_rel)),
                r_rel: collect(g.iter().map(|s| s.r_rel)),
                ddf_accuracy: collect(g.iter().map(|s| s.ddf_accuracy)),
                per_noise,
                during_episode: collect(g.iter().map(|s| s.windows.and_then(|w| w.during.t_rmse))),
                post_episode: collect(g.iter().map(|s| s.windows.and_then(|w| w.post.t_rmse))),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub schema_version: u32,
    pub protocol: Protocol,
    pub provenance: String,
    pub config: Option<ExperimentConfig>,
    /// schedule of the first seed in inline form
    pub schedule: Option<String>,
    pub assumptions: Vec<String>,
    pub sequences: Vec<SequenceReport>,
    pub aggregates: Vec<Aggregate>,
}

pub fn provenance() -> String {
    format!("litevio-core {}", env!("CARGO_PKG_VERSION"))
}

impl MetricsReport {
    pub fn new(protocol: Protocol, config: Option<ExperimentConfig>, schedule: Option<String>, sequences: Vec<SequenceReport>) -> Self {
        let aggregates = aggregate(&sequences);
        let mut assumptions = Vec::new();
        if protocol == Protocol::Continual {
            assumptions.push("continual schedule uses equal-length noise segments cycled back to back".to_string());
        }
        if matches!(protocol, Protocol::Continual | Protocol::SingleShift) {
            assumptions.push("a transition carries the noise label of its later frame".to_string());
        }
        if protocol == Protocol::Stationary {
            assumptions.push("fine-tuned baselines update every weight on corrupted training data".to_string());
        }
        MetricsReport {
            schema: SCHEMA.into(),
            schema_version: SCHEMA_VERSION,
            protocol,
            provenance: provenance(),
            config,
            schedule,
            assumptions,
            sequences,
            aggregates,
        }
    }

    pub fn aggregate_for(&self, method: Method, noise: Option<NoiseId>) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.noise == noise)
    }

    /// Relative reduction of mean t_rmse, (frozen − tta) / frozen.
    pub fn tta_improvement(&self, noise: Option<NoiseId>) -> Option<f64> {
        let f = self.aggregate_for(Method::Frozen, noise)?.t_rmse.mean;
        let t = self.aggregate_for(Method::Tta, noise)?.t_rmse.mean;
        Some((f - t) / f)
    }

    /// The report without per-pose series: every scalar metric and
    /// aggregate, small enough to diff or commit.
    pub fn summary(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(seqs) = v.get_mut("sequences").and_then(|s| s.as_array_mut()) {
            for s in seqs.iter_mut().filter_map(|s| s.as_object_mut()) {
                for key in SERIES {
                    s.remove(key);
                }
            }
        }
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<MetricsReport> {
        let r: MetricsReport = serde_json::from_str(text)?;
        if r.schema != SCHEMA || r.schema_version != SCHEMA_VERSION {
            return Err(Error::Structural(format!(
                "unsupported report schema {} v{}",
                r.schema, r.schema_version
            )));
        }
        Ok(r)
    }

    /// Recomputes every sequence metric and aggregate from the stored
    /// per-pose series; any difference is a structural error.
    pub fn verify(&self) -> Result<()> {
        let period = self
            .config
            .as_ref()
            .map(frame_period_of)
            .unwrap_or(crate::sensorsim::SceneConfig::default().frame_period);
        for s in &self.sequences {
            let bank = self.config.as_ref().map(|c| {
                std::iter::once(NoiseId::Clean)
                    .chain(c.protocol.noises.iter().copied())
                    .collect::<Vec<_>>()
            });
            let again = SequenceReport::compute(SequenceInput {
                seed: s.seed,
                method: s.method,
                noise: s.noise,
                pred: &s.pred_deltas(),
                gt: &s.gt_deltas(),
                labels: &s.labels,
                ks: &s.ks,
                loss: &s.loss,
                bank: if s.ddf_accuracy.is_some() { bank.as_deref() } else { None },
                episode: s.windows.map(|w| (w.t0, w.t1)),
                frame_period: period,
            })?;
            if !same(&again, s) {
                return Err(Error::Structural(format!("sequence {} does not match its per-pose data", s.stem())));
            }
        }
        if !same(&aggregate(&self.sequences), &self.aggregates) {
            return Err(Error::Structural("aggregates do not match the sequences".into()));
        }
        Ok(())
    }

    /// Plain-text result tables: noise columns, one row per method.
    pub fn tables(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "protocol: {}  ({})", self.protocol.name(), self.provenance);
        if let Some(sc) = &self.schedule {
            let _ = writeln!(s, "schedule: {sc}");
        }
        match self.protocol {
            Protocol::Stationary => self.stationary_table(&mut s),
            _ => self.segment_table(&mut s),
        }
        s
    }

    fn segment_table(&self, s: &mut String) {
        let mut cols: Vec<NoiseId> = self.aggregates.iter().flat_map(|a| a.per_noise.keys().copied()).collect();
        cols.sort();
        cols.dedup();
        let _ = write!(s, "{:<10}", "t_rmse");
        for c in &cols {
            let _ = write!(s, "{:>18}", c.name());
        }
        let _ = writeln!(s, "{:>18}{:>12}{:>12}", "all", "t_rel %", "r_rel");
        for a in &self.aggregates {
            let _ = write!(s, "{:<10}", a.method.name());
            for c in &cols {
                match a.per_noise.get(c) {
                    Some(st) => {
                        let _ = write!(s, "{:>18}", fmt_stat(st));
                    }
                    None => {
                        let _ = write!(s, "{:>18}", "-");
                    }
                }
            }
            let _ = writeln!(
                s,
                "{:>18}{:>12}{:>12}",
                fmt_stat(&a.t_rmse),
                a.t_rel.map_or("-".into(), |x| format!("{:.2}", x.mean)),
                a.r_rel.map_or("-".into(), |x| format!("{:.2}", x.mean))
            );
        }
        for a in &self.aggregates {
            if let Some(acc) = a.ddf_accuracy {
                let _ = writeln!(s, "ddf accuracy ({}): {:.1}% ± {:.1}", a.method.name(), acc.mean, acc.std);
            }
            if let (Some(d), Some(p)) = (a.during_episode, a.post_episode) {
                let _ = writeln!(
                    s,
                    "{}: in-episode {:.4}, post-episode {:.4}",
                    a.method.name(),
                    d.mean,
                    p.mean
                );
            }
        }
        if let Some(i) = self.tta_improvement(None) {
            let _ = writeln!(s, "TTA reduction of mean t_rmse: {:.1}%", 100.0 * i);
        }
    }

    fn stationary_table(&self, s: &mut String) {
        let mut noises: Vec<NoiseId> = self.aggregates.iter().filter_map(|a| a.noise).collect();
        noises.sort();
        noises.dedup();
        let mut methods: Vec<Method> = self.aggregates.iter().map(|a| a.method).collect();
        methods.sort();
        methods.dedup();
        let _ = write!(s, "{:<10}", "t_rmse");
        for n in &noises {
            let _ = write!(s, "{:>18}", n.name());
        }
        let _ = writeln!(s);
        for m in methods {
            let _ = write!(s, "{:<10}", m.name());
            for n in &noises {
                match self.aggregate_for(m, Some(*n)) {
                    Some(a) => {
                        let _ = write!(s, "{:>18}", fmt_stat(&a.t_rmse));
                    }
                    None => {
                        let _ = write!(s, "{:>18}", "-");
                    }
                }
            }
            let _ = writeln!(s);
        }
    }
}

fn fmt_stat(st: &Stat) -> String {
    if st.n > 1 {
        format!("{:.4}±{:.4}", st.mean, st.std)
    } else {
        format!("{:.4}", st.mean)
    }
}

fn frame_period_of(c: &ExperimentConfig) -> f64 {
    match &c.data {
        super::config::DataConfig::Synthetic(s) => s.scene.frame_period,
        super::config::DataConfig::Kitti(k) => k.frame_period,
    }
}

/// Structural equality through the serialized form.
fn same<T: Serialize>(a: &T, b: &T) -> bool {
    serde_json::to_value(a).ok() == serde_json::to_value(b).ok()
}
