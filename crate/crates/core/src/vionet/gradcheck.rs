//! Central finite differences against the manual backward pass.
//!
//! LeakyReLU is not differentiable at 0, so a probe is only meaningful when
//! no pre-activation changes sign between θ−h and θ+h. Callers return the
//! activation pattern alongside the loss and probes that cross a kink are
//! reported as skipped.

use super::{ForwardPass, Gradients, VioNetwork};
use crate::error::{Error, Result};

/// Address of one learnable scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalar {
    Frozen { tensor: usize, index: usize },
    Affine { entry: usize, tensor: usize, index: usize },
}

pub fn get_scalar(net: &VioNetwork, s: Scalar) -> Result<f64> {
    match s {
        Scalar::Frozen { tensor, index } => net
            .frozen_params()
            .get(tensor)
            .and_then(|t| t.get(index))
            .copied()
            .ok_or_else(|| Error::invalid("frozen scalar out of range")),
        Scalar::Affine { entry, tensor, index } => net
            .bn_entry(entry)?
            .tensors
            .get(tensor)
            .and_then(|t| t.get(index))
            .copied()
            .ok_or_else(|| Error::invalid("affine scalar out of range")),
    }
}

pub fn set_scalar(net: &mut VioNetwork, s: Scalar, v: f64) -> Result<()> {
    let slot = match s {
        Scalar::Frozen { tensor, index } => net.frozen_params_mut().get_mut(tensor).and_then(|t| t.get_mut(index)),
        Scalar::Affine { entry, tensor, index } => net
            .bn_entry_mut(entry)?
            .tensors
            .get_mut(tensor)
            .and_then(|t| t.get_mut(index)),
    };
    *slot.ok_or_else(|| Error::invalid("scalar out of range"))? = v;
    Ok(())
}

/// Analytic gradient of `s` from a gradient set (0 when absent).
pub fn analytic(g: &Gradients, s: Scalar) -> f64 {
    match s {
        Scalar::Frozen { tensor, index } => g.frozen.get(tensor).and_then(|t| t.get(index)).copied().unwrap_or(0.0),
        Scalar::Affine { tensor, index, .. } => g.affine.get(tensor).and_then(|t| t.get(index)).copied().unwrap_or(0.0),
    }
}

/// Sign of every pre-activation recorded on a tracked pass.
pub fn activation_pattern(pass: &ForwardPass) -> Vec<bool> {
    let Some(tape) = &pass.tape else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for v in &tape.visual {
        for y in &v.y {
            out.extend(y.iter().map(|&x| x > 0.0));
        }
    }
    for s in &tape.samples {
        for p in &s.inertial_pre {
            out.extend(p.iter().map(|&x| x > 0.0));
        }
        for p in s.fused.pre.iter().chain(&s.head.pre) {
            out.extend(p.iter().map(|&x| x > 0.0));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub scalar: Scalar,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Relative error with a floor of 1e-6 on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// `(L(θ+h) − L(θ−h)) / 2h`, or `None` when the activation pattern at
/// either side differs from the one at θ.
pub fn central_difference<F>(net: &VioNetwork, s: Scalar, h: f64, f: &F) -> Result<Option<f64>>
where
    F: Fn(&VioNetwork) -> Result<(f64, Vec<bool>)>,
{
    let (_, base) = f(net)?;
    let theta = get_scalar(net, s)?;
    let mut probe = net.clone();
    set_scalar(&mut probe, s, theta + h)?;
    let (lp, pp) = f(&probe)?;
    set_scalar(&mut probe, s, theta - h)?;
    let (lm, pm) = f(&probe)?;
    if pp != base || pm != base {
        return Ok(None);
    }
    Ok(Some((lp - lm) / (2.0 * h)))
}

/// Probes candidates in order until `want` kink-free scalars are checked.
pub fn check<F>(net: &VioNetwork, grads: &Gradients, candidates: &[Scalar], want: usize, h: f64, f: &F) -> Result<Vec<Probe>>
where
    F: Fn(&VioNetwork) -> Result<(f64, Vec<bool>)>,
{
    let mut out = Vec::new();
    for &s in candidates {
        if out.len() == want {
            break;
        }
        if let Some(numeric) = central_difference(net, s, h, f)? {
            let a = analytic(grads, s);
            out.push(Probe {
                scalar: s,
                analytic: a,
                numeric,
                rel_err: rel_err(a, numeric),
            });
        }
    }
    Ok(out)
}
