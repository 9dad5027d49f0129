//! Jacobian-based saliency-map attack, untargeted via a per-iteration
//! runner-up target. Coordinates are perturbed in pairs: each round scores
//! every admissible pair by the saliency product and bumps both members of
//! the winner by ±θ. A coordinate stays eligible until it is pinned against
//! the box in its useful direction, so the same pair can be pushed across
//! several rounds; the budget caps the total number of coordinate
//! modifications, two per round.

use serde::Deserialize;

use super::{check_precondition, runner_up, sign, verified_outcome, Attack, AttackOutcome};
use crate::data::Bounds;
use crate::error::AttackError;
use crate::net::Network;
use crate::ClassLabel;

/// Per-coordinate saliency ingredients for the current target class.
struct Saliency {
    /// Direction that raises the target logit (±1, or 0 when flat).
    direction: f64,
    /// Target-logit growth along `direction` (≥ 0).
    alpha: f64,
    /// Combined other-logit growth along `direction`.
    beta: f64,
}

pub fn jsma(
    net: &Network,
    x: &[f64],
    label: ClassLabel,
    theta: f64,
    budget: usize,
    bounds: Bounds,
) -> Result<AttackOutcome, AttackError> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(AttackError::Config(format!(
            "step magnitude must be positive, got {theta}"
        )));
    }
    check_precondition(net, x, label)?;
    let classes = net.class_count();
    let mut current = x.to_vec();
    let max_rounds = budget / 2;
    let mut rounds = 0usize;
    while rounds < max_rounds {
        rounds += 1;
        let prediction = net.forward(&current)?;
        let target = runner_up(&prediction.logits, label);
        // One backward pass per class gives the full Jacobian at `current`.
        let mut jacobian = Vec::with_capacity(classes);
        for k in 0..classes {
            let mut coeffs = vec![0.0; classes];
            coeffs[k] = 1.0;
            let (_, grad) = net.logit_combination_gradient(&current, &coeffs)?;
            jacobian.push(grad);
        }
        let saliency: Vec<Option<Saliency>> = (0..x.len())
            .map(|p| {
                let target_grad = jacobian[target - 1][p];
                let direction = sign(target_grad);
                // A coordinate pinned against the box in its useful
                // direction cannot move.
                let moved = bounds.clamp(current[p] + direction * theta);
                if direction == 0.0 || moved == current[p] {
                    return None;
                }
                let others: f64 = (0..classes)
                    .filter(|&k| k + 1 != target)
                    .map(|k| jacobian[k][p])
                    .sum();
                Some(Saliency {
                    direction,
                    alpha: direction * target_grad,
                    beta: direction * others,
                })
            })
            .collect();
        // Score admissible pairs: combined target gain must be positive and
        // combined collateral gain negative; maximize the product −α·β.
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..x.len() {
            let Some(sp) = &saliency[p] else { continue };
            for q in (p + 1)..x.len() {
                let Some(sq) = &saliency[q] else { continue };
                let alpha = sp.alpha + sq.alpha;
                let beta = sp.beta + sq.beta;
                if alpha <= 0.0 || beta >= 0.0 {
                    continue;
                }
                let score = -alpha * beta;
                if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                    best = Some((score, p, q));
                }
            }
        }
        let Some((_, p, q)) = best else {
            // Saturated: no admissible pair is left.
            return Ok(AttackOutcome::failure(rounds - 1));
        };
        for idx in [p, q] {
            let dir = saliency[idx].as_ref().unwrap().direction;
            current[idx] = bounds.clamp(current[idx] + dir * theta);
        }
        let outcome = verified_outcome(net, x, current.clone(), label, rounds, bounds)?;
        if outcome.success {
            return Ok(outcome);
        }
    }
    Ok(AttackOutcome::failure(rounds))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JsmaParams {
    /// Per-coordinate step as a fraction of the box range.
    pub theta: f64,
    /// Modification budget as a fraction of the dimension.
    pub budget_fraction: f64,
}

impl Default for JsmaParams {
    fn default() -> Self {
        JsmaParams {
            theta: 0.1,
            budget_fraction: 0.1,
        }
    }
}

pub struct JsmaAttack {
    theta: f64,
    budget_fraction: f64,
    bounds: Bounds,
}

impl JsmaAttack {
    pub fn new(params: JsmaParams, bounds: Bounds) -> Result<Self, AttackError> {
        if !(params.theta.is_finite() && params.theta > 0.0) {
            return Err(AttackError::Config(format!(
                "theta must be positive, got {}",
                params.theta
            )));
        }
        if !(params.budget_fraction.is_finite() && params.budget_fraction > 0.0) {
            return Err(AttackError::Config(format!(
                "budget_fraction must be positive, got {}",
                params.budget_fraction
            )));
        }
        Ok(JsmaAttack {
            theta: params.theta * bounds.range(),
            budget_fraction: params.budget_fraction,
            bounds,
        })
    }
}

impl Attack for JsmaAttack {
    fn name(&self) -> &'static str {
        "jsma"
    }

    fn run(
        &self,
        net: &Network,
        x: &[f64],
        label: ClassLabel,
    ) -> Result<AttackOutcome, AttackError> {
        let budget = (self.budget_fraction * x.len() as f64).floor() as usize;
        jsma(net, x, label, self.theta, budget, self.bounds)
    }
}
