use std::collections::HashMap;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::vionet::{Gradients, VioNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Frozen(usize),
    Affine(usize, usize),
}

/// Adam with L2 weight decay folded into the gradient. Moment buffers and
/// step counts are kept per tensor (and per BN entry), created on first use.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    moments: HashMap<Slot, (i32, Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam::with_params(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    }

    pub fn with_params(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every tensor with a non-empty gradient. Affine gradients go to
    /// the entry the forward pass used.
    pub fn step(&mut self, net: &mut VioNetwork, g: &Gradients) -> Result<()> {
        check_shapes(net, g)?;
        self.t += 1;
        let mut upd = |slot: Slot, theta: &mut [f64], grad: &[f64]| {
            let (t, m, v) = self
                .moments
                .entry(slot)
                .or_insert_with(|| (0, vec![0.0; grad.len()], vec![0.0; grad.len()]));
            *t += 1;
            let bc1 = 1.0 - self.beta1.powi(*t);
            let bc2 = 1.0 - self.beta2.powi(*t);
            for i in 0..grad.len() {
                let gi = grad[i] + self.weight_decay * theta[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                theta[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        };
        for (i, (theta, grad)) in net.frozen_params_mut().iter_mut().zip(&g.frozen).enumerate() {
            if !grad.is_empty() {
                upd(Slot::Frozen(i), theta, grad);
            }
        }
        let entry = g.entry;
        for (j, (theta, grad)) in net.bn_entry_mut(entry)?.tensors.iter_mut().zip(&g.affine).enumerate() {
            if !grad.is_empty() {
                upd(Slot::Affine(entry, j), theta, grad);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent, θ ← θ − η·g.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, net: &mut VioNetwork, g: &Gradients) -> Result<()> {
        check_shapes(net, g)?;
        for (theta, grad) in net.frozen_params_mut().iter_mut().zip(&g.frozen) {
            theta.iter_mut().zip(grad).for_each(|(t, d)| *t -= self.lr * d);
        }
        for (theta, grad) in net.bn_entry_mut(g.entry)?.tensors.iter_mut().zip(&g.affine) {
            theta.iter_mut().zip(grad).for_each(|(t, d)| *t -= self.lr * d);
        }
        Ok(())
    }
}

fn check_shapes(net: &VioNetwork, g: &Gradients) -> Result<()> {
    let lay = net.layout();
    let frozen_ok = g.frozen.len() == lay.frozen.len()
        && g.frozen.iter().zip(&lay.frozen).all(|(t, s)| t.is_empty() || t.len() == s.len());
    let affine_ok = g.affine.is_empty()
        || (g.affine.len() == lay.affine.len()
            && g.affine.iter().zip(&lay.affine).all(|(t, s)| t.is_empty() || t.len() == s.len()));
    if !frozen_ok || !affine_ok {
        return Err(Error::invalid("gradient shapes do not match the network layout"));
    }
    Ok(())
}
