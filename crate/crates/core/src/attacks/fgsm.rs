//! Fast gradient sign method: one step of size ε along the sign of the
//! loss gradient, swept over an ascending ε ladder until the first success.

use serde::Deserialize;

use super::{check_precondition, sign, verified_outcome, Attack, AttackOutcome};
use crate::data::Bounds;
use crate::error::AttackError;
use crate::net::Network;
use crate::ClassLabel;

/// Single-ε step: `x' = clamp(x + ε·sign(∇ₓ loss))`, success iff the
/// network misclassifies `x'`. `sign(0) = 0`, so coordinates with zero
/// gradient stay untouched and a constant network yields `x' = x`.
pub fn fgsm_step(
    net: &Network,
    x: &[f64],
    label: ClassLabel,
    epsilon: f64,
    bounds: Bounds,
) -> Result<AttackOutcome, AttackError> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(AttackError::Config(format!(
            "epsilon must be non-negative and finite, got {epsilon}"
        )));
    }
    check_precondition(net, x, label)?;
    let grad = net.input_gradient(x, label)?;
    let candidate: Vec<f64> = x
        .iter()
        .zip(&grad)
        .map(|(xi, gi)| bounds.clamp(xi + epsilon * sign(*gi)))
        .collect();
    verified_outcome(net, x, candidate, label, 1, bounds)
}

/// Parameters of the swept attack. The ε ladder is expressed as fractions
/// of the input range and resolved against the domain bounds at
/// construction time.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FgsmParams {
    /// Smallest ε as a fraction of the input range.
    pub min_epsilon: f64,
    /// Largest ε as a fraction of the input range.
    pub max_epsilon: f64,
    /// Number of ladder rungs, linearly spaced.
    pub steps: usize,
}

impl Default for FgsmParams {
    fn default() -> Self {
        FgsmParams {
            min_epsilon: 0.01,
            max_epsilon: 0.3,
            steps: 30,
        }
    }
}

/// Builds the absolute ε ladder from relative parameters. Shared with the
/// iterative method, which sweeps the same ladder.
pub(crate) fn epsilon_ladder(
    min_epsilon: f64,
    max_epsilon: f64,
    steps: usize,
    bounds: Bounds,
) -> Result<Vec<f64>, AttackError> {
    if steps == 0 {
        return Err(AttackError::Config("epsilon ladder needs at least one step".into()));
    }
    if !(min_epsilon > 0.0 && max_epsilon >= min_epsilon && max_epsilon.is_finite()) {
        return Err(AttackError::Config(format!(
            "epsilon ladder must satisfy 0 < min <= max, got [{min_epsilon}, {max_epsilon}]"
        )));
    }
    let range = bounds.range();
    if steps == 1 {
        return Ok(vec![min_epsilon * range]);
    }
    let delta = (max_epsilon - min_epsilon) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| (min_epsilon + delta * i as f64) * range)
        .collect())
}

/// The registered `fgsm` strategy: tries the ladder from the smallest ε up
/// and returns the first success, i.e. the least-distorted one this method
/// can find.
pub struct FgsmAttack {
    epsilons: Vec<f64>,
    bounds: Bounds,
}

impl FgsmAttack {
    pub fn new(params: FgsmParams, bounds: Bounds) -> Result<Self, AttackError> {
        Ok(FgsmAttack {
            epsilons: epsilon_ladder(params.min_epsilon, params.max_epsilon, params.steps, bounds)?,
            bounds,
        })
    }
}

impl Attack for FgsmAttack {
    fn name(&self) -> &'static str {
        "fgsm"
    }

    fn run(
        &self,
        net: &Network,
        x: &[f64],
        label: ClassLabel,
    ) -> Result<AttackOutcome, AttackError> {
        for (idx, &epsilon) in self.epsilons.iter().enumerate() {
            let outcome = fgsm_step(net, x, label, epsilon, self.bounds)?;
            if outcome.success {
                return Ok(AttackOutcome {
                    iterations: idx + 1,
                    ..outcome
                });
            }
        }
        Ok(AttackOutcome::failure(self.epsilons.len()))
    }
}
