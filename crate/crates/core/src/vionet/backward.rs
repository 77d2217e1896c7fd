use super::forward::{DenseTape, Norm, SampleTape};
use super::{ParamSubset, VioNetwork};
use crate::error::{Error, Result};
use crate::nn::{col2im, col2im_1d, gemm, leaky_grad, linear_backward};

/// Gradients for a requested parameter subset. Tensors outside the subset
/// are empty vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub subset: ParamSubset,
    /// Θ_f in layout order
    pub frozen: Vec<Vec<f64>>,
    /// Θ_a of the entry used by the forward pass (γ₀, β₀, ...)
    pub affine: Vec<Vec<f64>>,
    pub entry: usize,
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.frozen
            .iter()
            .chain(&self.affine)
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, f: f64) {
        self.frozen
            .iter_mut()
            .chain(self.affine.iter_mut())
            .flatten()
            .for_each(|g| *g *= f);
    }

    pub fn is_finite(&self) -> bool {
        self.frozen.iter().chain(&self.affine).flatten().all(|g| g.is_finite())
    }
}

fn pair_mut(v: &mut [Vec<f64>], weight: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = v.split_at_mut(weight + 1);
    (&mut a[weight], &mut b[0])
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

impl VioNetwork {
    /// Backpropagates upstream gradients of the fused and inertial outputs
    /// (per sample, `[φ, v]` layout) through a tracked pass.
    pub fn gradients(
        &self,
        pass: &super::ForwardPass,
        d_fused: &[[f64; 6]],
        d_inertial: &[[f64; 6]],
        subset: ParamSubset,
    ) -> Result<Gradients> {
        let tape = pass
            .tape
            .as_ref()
            .ok_or_else(|| Error::state("gradients requested for a forward pass without tracking"))?;
        let b = pass.outputs.len();
        if d_fused.len() != b || d_inertial.len() != b {
            return Err(Error::invalid("upstream gradient count does not match the batch"));
        }
        let lay = &self.layout;
        let slope = self.cfg.leaky_slope;
        let need_visual = subset.visual_conv || subset.bn_affine;
        let need_xi = subset.inertial_enc;
        let need_fused_in = need_visual || need_xi;
        let alloc = |want: bool| -> Vec<Vec<f64>> {
            lay.frozen
                .iter()
                .map(|s| {
                    if want && subset.contains(s.group) && s.group != super::Group::VisualConv {
                        vec![0.0; s.len()]
                    } else {
                        Vec::new()
                    }
                })
                .collect()
        };

        // decoders and inertial encoder, one sample at a time
        let per_sample: Vec<(Vec<Vec<f64>>, Vec<f64>)> = self.exec.map(b, |i| {
            let st = &tape.samples[i];
            let mut g = alloc(true);
            let xv_dim = self.cfg.visual_feature_dim();
            let mut dxi = vec![0.0; self.cfg.inertial_feature_dim()];
            let mut dxv = Vec::new();
            if subset.fused_dec || need_fused_in {
                let din = self.dense_backward(&lay.fused, &st.fused, &d_fused[i], &mut g, subset.fused_dec, need_fused_in);
                if let Some(din) = din {
                    dxv = din[..xv_dim].to_vec();
                    add_into(&mut dxi, &din[xv_dim..]);
                }
            }
            if subset.inertial_dec || need_xi {
                let din = self.dense_backward(&lay.head, &st.head, &d_inertial[i], &mut g, subset.inertial_dec, need_xi);
                if let Some(din) = din {
                    add_into(&mut dxi, &din);
                }
            }
            if need_xi {
                self.inertial_backward(st, &dxi, &mut g);
            }
            (g, dxv)
        });

        let mut frozen = alloc(true);
        let mut dxv = Vec::with_capacity(b);
        for (g, d) in per_sample {
            for (acc, part) in frozen.iter_mut().zip(&g) {
                if !part.is_empty() {
                    add_into(acc, part);
                }
            }
            dxv.push(d);
        }

        let mut affine: Vec<Vec<f64>> = Vec::new();
        if need_visual {
            let bn = &self.dictionary[tape.entry];
            let nl = self.layout.geoms.len();
            if subset.bn_affine {
                affine = lay.affine.iter().map(|s| vec![0.0; s.len()]).collect();
            }
            let last = lay.geoms[nl - 1];
            let n_last = last.out_len() as f64;
            let mut da: Vec<Vec<f64>> = dxv
                .iter()
                .map(|d| d.iter().flat_map(|&v| std::iter::repeat_n(v / n_last, last.out_len())).collect())
                .collect();
            for l in (0..nl).rev() {
                let g = &lay.geoms[l];
                let n = g.out_len();
                let vt = &tape.visual[l];
                let gamma = bn.gamma(l);
                let phase_a: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = self.exec.map(b, |i| {
                    let y = &vt.y[i];
                    let xhat = &vt.xhat[i];
                    let dy: Vec<f64> = da[i].iter().zip(y).map(|(d, &v)| d * leaky_grad(v, slope)).collect();
                    let mut s1 = vec![0.0; g.cout];
                    let mut s2 = vec![0.0; g.cout];
                    for c in 0..g.cout {
                        for p in c * n..(c + 1) * n {
                            s1[c] += dy[p];
                            s2[c] += dy[p] * xhat[p];
                        }
                    }
                    (dy, s1, s2)
                });
                let mut sum1 = vec![0.0; g.cout];
                let mut sum2 = vec![0.0; g.cout];
                for (_, s1, s2) in &phase_a {
                    add_into(&mut sum1, s1);
                    add_into(&mut sum2, s2);
                }
                if subset.bn_affine {
                    affine[2 * l].copy_from_slice(&sum2);
                    affine[2 * l + 1].copy_from_slice(&sum1);
                }
                if l == 0 && !subset.visual_conv {
                    break;
                }
                let wt = &self.theta_f[lay.visual[l]];
                let phase_b: Vec<(Vec<f64>, Vec<f64>)> = self.exec.map(b, |i| {
                    let (dy, s1, s2) = &phase_a[i];
                    let xhat = &vt.xhat[i];
                    let inv = &vt.inv_std[if vt.inv_std.len() == 1 { 0 } else { i }];
                    let (m1, m2, cnt): (&[f64], &[f64], f64) = match tape.norm {
                        Norm::Running => (&[], &[], 0.0),
                        Norm::Instance => (s1, s2, n as f64),
                        Norm::Batch => (&sum1, &sum2, (b * n) as f64),
                    };
                    let mut dz = vec![0.0; dy.len()];
                    for c in 0..g.cout {
                        let k = gamma[c] * inv[c];
                        for p in c * n..(c + 1) * n {
                            dz[p] = if cnt == 0.0 {
                                k * dy[p]
                            } else {
                                k * (dy[p] - m1[c] / cnt - xhat[p] * m2[c] / cnt)
                            };
                        }
                    }
                    let mut dw = Vec::new();
                    if subset.visual_conv {
                        dw = vec![0.0; g.weight_len()];
                        gemm(g.cout, n, g.patch(), &dz, false, &vt.cols[i], true, &mut dw, 0.0);
                    }
                    let mut dprev = Vec::new();
                    if l > 0 {
                        let mut dcols = vec![0.0; g.patch() * n];
                        gemm(g.patch(), g.cout, n, wt, true, &dz, false, &mut dcols, 0.0);
                        dprev = vec![0.0; g.cin * g.h_in * g.w_in];
                        col2im(&dcols, g, &mut dprev);
                    }
                    (dw, dprev)
                });
                if subset.visual_conv {
                    let mut acc = vec![0.0; g.weight_len()];
                    for (dw, _) in &phase_b {
                        add_into(&mut acc, dw);
                    }
                    frozen[lay.visual[l]] = acc;
                }
                da = phase_b.into_iter().map(|(_, d)| d).collect();
            }
        }

        Ok(Gradients {
            subset,
            frozen,
            affine,
            entry: tape.entry,
        })
    }

    /// Accumulates D_inertial gradients for one sample into `grads`
    /// (layout-ordered, head tensors allocated).
    pub(crate) fn head_backward(&self, tape: &DenseTape, dy: &[f64; 6], grads: &mut [Vec<f64>]) {
        self.dense_backward(&self.layout.head, tape, dy, grads, true, false);
    }

    /// Returns the gradient wrt the chain input when `want_dx`.
    fn dense_backward(
        &self,
        layers: &[(usize, usize)],
        tape: &DenseTape,
        dy: &[f64; 6],
        grads: &mut [Vec<f64>],
        want_grads: bool,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let slope = self.cfg.leaky_slope;
        let mut d = dy.to_vec();
        for li in (0..layers.len()).rev() {
            let (wi, _) = layers[li];
            if li + 1 != layers.len() {
                d.iter_mut()
                    .zip(&tape.pre[li])
                    .for_each(|(g, &a)| *g *= leaky_grad(a, slope));
            }
            let x = &tape.inputs[li];
            let need_dx = li > 0 || want_dx;
            let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
            let gw = want_grads.then(|| pair_mut(grads, wi));
            linear_backward(&self.theta_f[wi], x, &d, gw, need_dx.then_some(dx.as_mut_slice()));
            if li == 0 {
                return want_dx.then_some(dx);
            }
            d = dx;
        }
        None
    }

    fn inertial_backward(&self, st: &SampleTape, dxi: &[f64], grads: &mut [Vec<f64>]) {
        let slope = self.cfg.leaky_slope;
        let lay = &self.layout;
        let last = lay.igeoms.last().expect("validated");
        let mut du: Vec<f64> = dxi
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v / last.len_out as f64, last.len_out))
            .collect();
        for j in (0..lay.igeoms.len()).rev() {
            let g = &lay.igeoms[j];
            let (wi, _) = lay.inertial[j];
            let dp: Vec<f64> = du
                .iter()
                .zip(&st.inertial_pre[j])
                .map(|(d, &p)| d * leaky_grad(p, slope))
                .collect();
            {
                let (dw, db) = pair_mut(grads, wi);
                gemm(g.cout, g.len_out, g.patch(), &dp, false, &st.inertial_cols[j], true, dw, 1.0);
                for c in 0..g.cout {
                    db[c] += dp[c * g.len_out..(c + 1) * g.len_out].iter().sum::<f64>();
                }
            }
            if j > 0 {
                let mut dcols = vec![0.0; g.patch() * g.len_out];
                gemm(g.patch(), g.cout, g.len_out, &self.theta_f[wi], true, &dp, false, &mut dcols, 0.0);
                du = vec![0.0; g.cin * g.len_in];
                col2im_1d(&dcols, g, &mut du);
            }
        }
    }
}
