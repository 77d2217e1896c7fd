use serde::{Deserialize, Serialize};

use super::{BnEntry, VioNetwork};
use crate::error::{Error, Result};
use crate::geometry::PoseDelta;
use crate::nn::{gemm, im2col, im2col_1d, leaky, linear, Conv2dGeom};
use crate::sensorsim::SensorWindow;

/// Source of BatchNorm statistics for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// batch statistics; the pass carries them for a running-stat update
    Train,
    /// statistics chosen by [`super::AdaptNorm`]
    Adapt,
    /// frozen running statistics
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Norm {
    Batch,
    Instance,
    Running,
}

/// Domain-distinctive feature: μ(o₁) ∥ σ(o₁) ∥ μ(i₂) ∥ σ(i₂), channel-wise
/// over the interior positions of the first conv output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ddf(pub Vec<f64>);

impl Ddf {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    fn quarter(&self, q: usize) -> &[f64] {
        let c = self.0.len() / 4;
        &self.0[q * c..(q + 1) * c]
    }

    pub fn mu_o1(&self) -> &[f64] {
        self.quarter(0)
    }

    pub fn sigma_o1(&self) -> &[f64] {
        self.quarter(1)
    }

    pub fn mu_i2(&self) -> &[f64] {
        self.quarter(2)
    }

    pub fn sigma_i2(&self) -> &[f64] {
        self.quarter(3)
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub fused: PoseDelta,
    pub inertial: PoseDelta,
    pub ddf: Ddf,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct DenseTape {
    /// input of every layer
    pub inputs: Vec<Vec<f64>>,
    /// pre-activation of every layer
    pub pre: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct VisualTape {
    pub cols: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// one row shared by the batch, or one per sample (instance norm)
    pub inv_std: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct SampleTape {
    pub inertial_cols: Vec<Vec<f64>>,
    pub inertial_pre: Vec<Vec<f64>>,
    pub fused: DenseTape,
    pub head: DenseTape,
}

#[derive(Debug, Clone)]
pub(crate) struct Tape {
    pub norm: Norm,
    pub entry: usize,
    pub visual: Vec<VisualTape>,
    pub samples: Vec<SampleTape>,
}

/// Outputs of a batched forward plus what backward and the running-stat
/// update need.
/// x̂, y and activation of one sample, plus its ddf on the first layer.
type NormedSample = (Vec<f64>, Vec<f64>, Vec<f64>, Option<Ddf>);

/// Per-layer channel means and unbiased variances.
pub(crate) type BatchStats = (Vec<Vec<f64>>, Vec<Vec<f64>>);

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub outputs: Vec<Output>,
    pub(crate) tape: Option<Tape>,
    /// per layer (mean, unbiased var), train mode only
    pub(crate) batch_stats: Option<BatchStats>,
}

impl ForwardPass {
    pub fn is_tracked(&self) -> bool {
        self.tape.is_some()
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// Per-channel (mean, 1/sqrt(var+eps)); `shared` rows apply to every sample.
struct Stats {
    mean: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
}

impl Stats {
    fn row(&self, i: usize) -> (&[f64], &[f64]) {
        let r = if self.mean.len() == 1 { 0 } else { i };
        (&self.mean[r], &self.inv_std[r])
    }
}

fn channel_moments(z: &[f64], c: usize, n: usize) -> (f64, f64) {
    let p = &z[c * n..(c + 1) * n];
    let m = p.iter().sum::<f64>() / n as f64;
    let v = p.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    (m, v)
}

/// ddf from a first-layer conv output `z` using entry-0 affine parameters
/// and the pass's normalization statistics.
fn ddf_from_o1(z: &[f64], g: &Conv2dGeom, mean: &[f64], inv_std: &[f64], e0: &BnEntry, slope: f64) -> Ddf {
    let (ry, rx) = g.interior();
    let (ry, rx) = if ry.is_empty() || rx.is_empty() {
        (0..g.h_out, 0..g.w_out)
    } else {
        (ry, rx)
    };
    let cnt = (ry.len() * rx.len()) as f64;
    let c1 = g.cout;
    let mut out = vec![0.0; 4 * c1];
    let (gamma, beta) = (e0.gamma(0), e0.beta(0));
    for c in 0..c1 {
        let plane = &z[c * g.out_len()..(c + 1) * g.out_len()];
        let (mut s_o, mut s_i) = (0.0, 0.0);
        for y in ry.clone() {
            for x in rx.clone() {
                let o = plane[y * g.w_out + x];
                s_o += o;
                s_i += leaky(gamma[c] * (o - mean[c]) * inv_std[c] + beta[c], slope);
            }
        }
        let (m_o, m_i) = (s_o / cnt, s_i / cnt);
        let (mut v_o, mut v_i) = (0.0, 0.0);
        for y in ry.clone() {
            for x in rx.clone() {
                let o = plane[y * g.w_out + x];
                let i2 = leaky(gamma[c] * (o - mean[c]) * inv_std[c] + beta[c], slope);
                v_o += (o - m_o) * (o - m_o);
                v_i += (i2 - m_i) * (i2 - m_i);
            }
        }
        out[c] = m_o;
        out[c1 + c] = (v_o / cnt).sqrt();
        out[2 * c1 + c] = m_i;
        out[3 * c1 + c] = (v_i / cnt).sqrt();
    }
    Ddf(out)
}

impl VioNetwork {
    fn check_window(&self, w: &SensorWindow) -> Result<()> {
        let cfg = &self.cfg;
        if w.image_pair.shape() != (cfg.input_channels, cfg.height, cfg.width) {
            return Err(Error::invalid(format!(
                "window image pair is {:?}, network expects {:?}",
                w.image_pair.shape(),
                (cfg.input_channels, cfg.height, cfg.width)
            )));
        }
        if w.imu.len() != cfg.imu_samples {
            return Err(Error::invalid(format!(
                "window has {} IMU samples, network expects {}",
                w.imu.len(),
                cfg.imu_samples
            )));
        }
        Ok(())
    }

    fn norm_for(&self, mode: Mode) -> Result<Norm> {
        let norm = match mode {
            Mode::Train => Norm::Batch,
            Mode::Infer => Norm::Running,
            Mode::Adapt => match self.cfg.adapt_norm {
                super::AdaptNorm::Running => Norm::Running,
                super::AdaptNorm::Instance => Norm::Instance,
            },
        };
        if norm == Norm::Running && self.running.is_none() {
            return Err(Error::state(
                "running BatchNorm statistics are uninitialized (train the network first)",
            ));
        }
        Ok(norm)
    }

    fn running_row(&self, l: usize) -> Stats {
        let r = self.running.as_ref().expect("checked by norm_for");
        Stats {
            mean: vec![r.mean[l].clone()],
            inv_std: vec![r.var[l].iter().map(|v| 1.0 / (v + self.cfg.bn_eps).sqrt()).collect()],
        }
    }

    /// Single-window forward without gradient tracking.
    pub fn forward(&self, w: &SensorWindow, bn_entry: usize, mode: Mode) -> Result<Output> {
        let mut p = self.forward_batch(&[w], bn_entry, mode, false)?;
        Ok(p.outputs.pop().expect("one output"))
    }

    /// Batched forward with BN affine parameters from `bn_entry`. With
    /// `track` set the pass records what [`VioNetwork::gradients`] needs.
    pub fn forward_batch(&self, ws: &[&SensorWindow], bn_entry: usize, mode: Mode, track: bool) -> Result<ForwardPass> {
        if ws.is_empty() {
            return Err(Error::invalid("forward needs at least one window"));
        }
        self.check_entry(bn_entry)?;
        for w in ws {
            self.check_window(w)?;
        }
        let norm = self.norm_for(mode)?;
        let (exec, cfg, b) = (self.exec, &self.cfg, ws.len());
        let (slope, eps) = (cfg.leaky_slope, cfg.bn_eps);
        let bn = &self.dictionary[bn_entry];
        let e0 = &self.dictionary[0];

        let mut visual_tape = Vec::new();
        let mut ddfs: Vec<Ddf> = Vec::new();
        let mut batch_mean = Vec::new();
        let mut batch_var = Vec::new();
        let mut acts: Vec<Vec<f64>> = Vec::new();
        for (l, g) in self.layout.geoms.iter().enumerate() {
            let wt = &self.theta_f[self.layout.visual[l]];
            let n = g.out_len();
            let inputs: Vec<&[f64]> = if l == 0 {
                ws.iter().map(|w| w.image_pair.data.as_slice()).collect()
            } else {
                acts.iter().map(Vec::as_slice).collect()
            };
            let conv: Vec<(Vec<f64>, Vec<f64>)> = exec.map(b, |i| {
                let mut cols = vec![0.0; g.patch() * n];
                im2col(inputs[i], g, &mut cols);
                let mut z = vec![0.0; g.cout * n];
                gemm(g.cout, g.patch(), n, wt, false, &cols, false, &mut z, 0.0);
                (cols, z)
            });
            let stats = match norm {
                Norm::Running => self.running_row(l),
                Norm::Instance => {
                    let (mut mean, mut inv) = (Vec::with_capacity(b), Vec::with_capacity(b));
                    for (_, z) in &conv {
                        let mv: Vec<(f64, f64)> = (0..g.cout).map(|c| channel_moments(z, c, n)).collect();
                        mean.push(mv.iter().map(|p| p.0).collect());
                        inv.push(mv.iter().map(|p| 1.0 / (p.1 + eps).sqrt()).collect());
                    }
                    Stats { mean, inv_std: inv }
                }
                Norm::Batch => {
                    let tot = (b * n) as f64;
                    let mut mean = vec![0.0; g.cout];
                    let mut var = vec![0.0; g.cout];
                    for (_, z) in &conv {
                        for (c, m) in mean.iter_mut().enumerate() {
                            *m += z[c * n..(c + 1) * n].iter().sum::<f64>();
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= tot);
                    for (_, z) in &conv {
                        for (c, v) in var.iter_mut().enumerate() {
                            *v += z[c * n..(c + 1) * n].iter().map(|x| (x - mean[c]) * (x - mean[c])).sum::<f64>();
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= tot);
                    let inv = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                    let unbiased = if tot > 1.0 {
                        var.iter().map(|v| v * tot / (tot - 1.0)).collect()
                    } else {
                        var.clone()
                    };
                    batch_mean.push(mean.clone());
                    batch_var.push(unbiased);
                    Stats {
                        mean: vec![mean],
                        inv_std: vec![inv],
                    }
                }
            };
            let (gamma, beta) = (bn.gamma(l), bn.beta(l));
            let normed: Vec<NormedSample> = exec.map(b, |i| {
                let z = &conv[i].1;
                let (mean, inv) = stats.row(i);
                let mut xhat = vec![0.0; z.len()];
                let mut y = vec![0.0; z.len()];
                let mut a = vec![0.0; z.len()];
                for c in 0..g.cout {
                    for p in c * n..(c + 1) * n {
                        xhat[p] = (z[p] - mean[c]) * inv[c];
                        y[p] = gamma[c] * xhat[p] + beta[c];
                        a[p] = leaky(y[p], slope);
                    }
                }
                let ddf = (l == 0).then(|| ddf_from_o1(z, g, mean, inv, e0, slope));
                (xhat, y, a, ddf)
            });
            let mut tape = VisualTape {
                cols: Vec::new(),
                xhat: Vec::new(),
                y: Vec::new(),
                inv_std: stats.inv_std,
            };
            acts = Vec::with_capacity(b);
            for ((cols, _), (xhat, y, a, ddf)) in conv.into_iter().zip(normed) {
                if let Some(d) = ddf {
                    ddfs.push(d);
                }
                if track {
                    tape.cols.push(cols);
                    tape.xhat.push(xhat);
                    tape.y.push(y);
                }
                acts.push(a);
            }
            if track {
                visual_tape.push(tape);
            }
        }
        let last = self.layout.geoms.last().expect("validated non-empty");
        let n_last = last.out_len();
        let xv: Vec<Vec<f64>> = acts
            .iter()
            .map(|a| (0..last.cout).map(|c| a[c * n_last..(c + 1) * n_last].iter().sum::<f64>() / n_last as f64).collect())
            .collect();

        let rest: Vec<(PoseDelta, PoseDelta, Option<SampleTape>)> = exec.map(b, |i| {
            let mut st = SampleTape {
                inertial_cols: Vec::new(),
                inertial_pre: Vec::new(),
                fused: DenseTape::default(),
                head: DenseTape::default(),
            };
            let xi = self.inertial_encode(&ws[i].imu, track.then_some(&mut st));
            let mut fin = xv[i].clone();
            fin.extend_from_slice(&xi);
            let yf = self.dense_chain(&self.layout.fused, fin, track.then_some(&mut st.fused));
            let yi = self.dense_chain(&self.layout.head, xi, track.then_some(&mut st.head));
            let to_delta = |y: Vec<f64>| PoseDelta::from_array([y[0], y[1], y[2], y[3], y[4], y[5]]);
            (to_delta(yf), to_delta(yi), track.then_some(st))
        });

        let mut outputs = Vec::with_capacity(b);
        let mut samples = Vec::new();
        for ((yf, yi, st), ddf) in rest.into_iter().zip(ddfs) {
            if !(yf.to_array().iter().chain(&yi.to_array()).all(|v| v.is_finite()) && ddf.0.iter().all(|v| v.is_finite()))
            {
                return Err(Error::Diverged("forward produced non-finite outputs".into()));
            }
            outputs.push(Output {
                fused: yf,
                inertial: yi,
                ddf,
            });
            if let Some(st) = st {
                samples.push(st);
            }
        }
        Ok(ForwardPass {
            outputs,
            tape: track.then_some(Tape {
                norm,
                entry: bn_entry,
                visual: visual_tape,
                samples,
            }),
            batch_stats: (norm == Norm::Batch).then_some((batch_mean, batch_var)),
        })
    }

    /// Standardized IMU window through the 1-D conv stack and a temporal
    /// average pool.
    fn inertial_encode(&self, imu: &[[f64; 6]], mut tape: Option<&mut SampleTape>) -> Vec<f64> {
        let r = imu.len();
        let norm = &self.imu_norm;
        let mut u = vec![0.0; 6 * r];
        for (t, s) in imu.iter().enumerate() {
            for a in 0..6 {
                u[a * r + t] = (s[a] - norm.mean[a]) / norm.std[a];
            }
        }
        let slope = self.cfg.leaky_slope;
        for (j, g) in self.layout.igeoms.iter().enumerate() {
            let (wi, bi) = self.layout.inertial[j];
            let mut cols = vec![0.0; g.patch() * g.len_out];
            im2col_1d(&u, g, &mut cols);
            let mut p = vec![0.0; g.cout * g.len_out];
            gemm(g.cout, g.patch(), g.len_out, &self.theta_f[wi], false, &cols, false, &mut p, 0.0);
            for (c, bias) in self.theta_f[bi].iter().enumerate() {
                p[c * g.len_out..(c + 1) * g.len_out].iter_mut().for_each(|v| *v += bias);
            }
            u = p.iter().map(|&v| leaky(v, slope)).collect();
            if let Some(t) = tape.as_deref_mut() {
                t.inertial_cols.push(cols);
                t.inertial_pre.push(p);
            }
        }
        let g = self.layout.igeoms.last().expect("validated non-empty");
        (0..g.cout)
            .map(|c| u[c * g.len_out..(c + 1) * g.len_out].iter().sum::<f64>() / g.len_out as f64)
            .collect()
    }

    /// Fully connected layers with LeakyReLU between them (none after the
    /// last).
    fn dense_chain(&self, layers: &[(usize, usize)], x: Vec<f64>, mut tape: Option<&mut DenseTape>) -> Vec<f64> {
        let slope = self.cfg.leaky_slope;
        let mut h = x;
        for (li, &(wi, bi)) in layers.iter().enumerate() {
            let bias = &self.theta_f[bi];
            let mut a = vec![0.0; bias.len()];
            linear(&self.theta_f[wi], bias, &h, &mut a);
            let next = if li + 1 == layers.len() {
                a.clone()
            } else {
                a.iter().map(|&v| leaky(v, slope)).collect()
            };
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(std::mem::take(&mut h));
                t.pre.push(a);
            }
            h = next;
        }
        h
    }

    /// Infer-mode outputs for many windows (one forward each).
    pub fn infer_all(&self, ws: &[&SensorWindow], bn_entry: usize) -> Result<Vec<Output>> {
        self.exec.try_map(ws.len(), |i| self.forward(ws[i], bn_entry, Mode::Infer))
    }

    /// x_i for one window; depends on Θ_f only.
    pub fn inertial_feature(&self, w: &SensorWindow) -> Result<Vec<f64>> {
        self.check_window(w)?;
        Ok(self.inertial_encode(&w.imu, None))
    }

    /// D_inertial applied to a precomputed x_i, with its tape.
    pub(crate) fn head_forward(&self, xi: &[f64]) -> (PoseDelta, DenseTape) {
        let mut tape = DenseTape::default();
        let y = self.dense_chain(&self.layout.head, xi.to_vec(), Some(&mut tape));
        (PoseDelta::from_array([y[0], y[1], y[2], y[3], y[4], y[5]]), tape)
    }

    /// D_inertial output only.
    pub fn head_predict(&self, xi: &[f64]) -> PoseDelta {
        let y = self.dense_chain(&self.layout.head, xi.to_vec(), None);
        PoseDelta::from_array([y[0], y[1], y[2], y[3], y[4], y[5]])
    }

    /// ddf of one window under running statistics, computed from the first
    /// conv alone.
    pub fn ddf(&self, w: &SensorWindow) -> Result<Ddf> {
        self.check_window(w)?;
        self.norm_for(Mode::Infer)?;
        let g = &self.layout.geoms[0];
        let n = g.out_len();
        let mut cols = vec![0.0; g.patch() * n];
        im2col(&w.image_pair.data, g, &mut cols);
        let mut z = vec![0.0; g.cout * n];
        gemm(g.cout, g.patch(), n, &self.theta_f[self.layout.visual[0]], false, &cols, false, &mut z, 0.0);
        let st = self.running_row(0);
        let d = ddf_from_o1(&z, g, &st.mean[0], &st.inv_std[0], &self.dictionary[0], self.cfg.leaky_slope);
        if d.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("ddf is not finite".into()));
        }
        Ok(d)
    }
}
