//! DeepFool: iteratively linearizes the classifier around the current
//! iterate and takes the minimal step that crosses the nearest of the other
//! classes' decision boundaries, with the accumulated perturbation scaled by
//! (1 + overshoot) to actually cross it.

use serde::Deserialize;

use super::{check_precondition, verified_outcome, Attack, AttackOutcome};
use crate::data::Bounds;
use crate::error::AttackError;
use crate::net::{argmax_label, Network};
use crate::ClassLabel;

/// Squared-norm guard below which a boundary normal is treated as zero.
const DEGENERATE_NORMAL: f64 = 1e-24;

pub fn deepfool(
    net: &Network,
    x: &[f64],
    label: ClassLabel,
    overshoot: f64,
    max_iters: usize,
    bounds: Bounds,
) -> Result<AttackOutcome, AttackError> {
    if !(overshoot.is_finite() && overshoot >= 0.0) {
        return Err(AttackError::Config(format!(
            "overshoot must be non-negative, got {overshoot}"
        )));
    }
    if max_iters == 0 {
        return Err(AttackError::Config("iteration cap must be at least 1".into()));
    }
    check_precondition(net, x, label)?;
    let classes = net.class_count();
    let scale = 1.0 + overshoot;
    // Accumulated raw perturbation; the overshot point is x + scale·r.
    let mut r = vec![0.0; x.len()];
    for it in 1..=max_iters {
        let current: Vec<f64> = x.iter().zip(&r).map(|(xi, ri)| xi + scale * ri).collect();
        // Gradients of every logit at the (overshot) current iterate.
        let mut grads = Vec::with_capacity(classes);
        let mut logits = Vec::new();
        for k in 0..classes {
            let mut coeffs = vec![0.0; classes];
            coeffs[k] = 1.0;
            let (z, g) = net.logit_combination_gradient(&current, &coeffs)?;
            if k == 0 {
                logits = z;
            }
            grads.push(g);
        }
        if argmax_label(&logits) != label {
            // Crossed already (possible when the overshoot carried the
            // previous step across); verify the clamped candidate.
            let mut candidate = current;
            bounds.clamp_vec(&mut candidate);
            let outcome = verified_outcome(net, x, candidate, label, it - 1, bounds)?;
            if outcome.success {
                return Ok(outcome);
            }
            // Clamping pulled it back inside the true region; keep going.
        }
        // Nearest linearized boundary among the other classes.
        let own_grad = &grads[label - 1];
        let own_logit = logits[label - 1];
        let mut best: Option<(f64, Vec<f64>, f64)> = None; // (ratio, w, f)
        for k in 0..classes {
            if k + 1 == label {
                continue;
            }
            let w: Vec<f64> = grads[k]
                .iter()
                .zip(own_grad)
                .map(|(gk, gl)| gk - gl)
                .collect();
            let norm_sq: f64 = w.iter().map(|v| v * v).sum();
            if norm_sq < DEGENERATE_NORMAL {
                continue;
            }
            let f = logits[k] - own_logit;
            let ratio = f.abs() / norm_sq.sqrt();
            if best.as_ref().is_none_or(|(b, _, _)| ratio < *b) {
                best = Some((ratio, w, f));
            }
        }
        let Some((_, w, f)) = best else {
            // All boundary normals vanish (e.g. a constant network): the
            // linearization gives no direction to move in.
            return Ok(AttackOutcome::failure(it));
        };
        let norm_sq: f64 = w.iter().map(|v| v * v).sum();
        let coefficient = f.abs() / norm_sq;
        for (ri, wi) in r.iter_mut().zip(&w) {
            *ri += coefficient * wi;
        }
        let mut candidate: Vec<f64> = x.iter().zip(&r).map(|(xi, ri)| xi + scale * ri).collect();
        bounds.clamp_vec(&mut candidate);
        let outcome = verified_outcome(net, x, candidate, label, it, bounds)?;
        if outcome.success {
            return Ok(outcome);
        }
    }
    Ok(AttackOutcome::failure(max_iters))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepfoolParams {
    pub overshoot: f64,
    pub max_iters: usize,
}

impl Default for DeepfoolParams {
    fn default() -> Self {
        DeepfoolParams {
            overshoot: 0.02,
            max_iters: 50,
        }
    }
}

pub struct DeepfoolAttack {
    params: DeepfoolParams,
    bounds: Bounds,
}

impl DeepfoolAttack {
    pub fn new(params: DeepfoolParams, bounds: Bounds) -> Result<Self, AttackError> {
        if params.max_iters == 0 {
            return Err(AttackError::Config("max_iters must be at least 1".into()));
        }
        if !(params.overshoot.is_finite() && params.overshoot >= 0.0) {
            return Err(AttackError::Config(format!(
                "overshoot must be non-negative, got {}",
                params.overshoot
            )));
        }
        Ok(DeepfoolAttack { params, bounds })
    }
}

impl Attack for DeepfoolAttack {
    fn name(&self) -> &'static str {
        "deepfool"
    }

    fn run(
        &self,
        net: &Network,
        x: &[f64],
        label: ClassLabel,
    ) -> Result<AttackOutcome, AttackError> {
        deepfool(
            net,
            x,
            label,
            self.params.overshoot,
            self.params.max_iters,
            self.bounds,
        )
    }
}
