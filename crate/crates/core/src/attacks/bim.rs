//! Basic iterative method (ℓ∞): repeated small gradient-sign steps, each
//! result projected back into the ε-ball around the benign input
//! intersected with the domain box.

use serde::Deserialize;

use super::fgsm::epsilon_ladder;
use super::{check_precondition, sign, verified_outcome, Attack, AttackOutcome};
use crate::data::Bounds;
use crate::error::AttackError;
use crate::net::Network;
use crate::ClassLabel;

/// Iterated sign steps of size `step_size`, re-projected after every step,
/// stopping early on the first misclassification. With `iters = 1` and
/// `step_size = epsilon` this is exactly one FGSM step.
pub fn bim_linf(
    net: &Network,
    x: &[f64],
    label: ClassLabel,
    epsilon: f64,
    step_size: f64,
    iters: usize,
    bounds: Bounds,
) -> Result<AttackOutcome, AttackError> {
    if !(epsilon.is_finite() && epsilon > 0.0 && step_size.is_finite() && step_size > 0.0) {
        return Err(AttackError::Config(format!(
            "epsilon and step size must be positive and finite, got {epsilon} and {step_size}"
        )));
    }
    if iters == 0 {
        return Err(AttackError::Config("iteration cap must be at least 1".into()));
    }
    check_precondition(net, x, label)?;
    let mut current = x.to_vec();
    for it in 1..=iters {
        let grad = net.input_gradient(&current, label)?;
        for ((c, xi), g) in current.iter_mut().zip(x).zip(&grad) {
            let stepped = *c + step_size * sign(*g);
            // Project into the ε-ball around the benign input, then the box.
            *c = bounds.clamp(stepped.clamp(xi - epsilon, xi + epsilon));
        }
        let outcome = verified_outcome(net, x, current.clone(), label, it, bounds)?;
        if outcome.success {
            return Ok(outcome);
        }
    }
    Ok(AttackOutcome::failure(iters))
}

/// Parameters of the swept attack: the same relative ε ladder as `fgsm`,
/// with `iters` inner steps of size ε / `step_divisor` per rung.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BimParams {
    pub min_epsilon: f64,
    pub max_epsilon: f64,
    pub steps: usize,
    pub iters: usize,
    pub step_divisor: f64,
}

impl Default for BimParams {
    fn default() -> Self {
        BimParams {
            min_epsilon: 0.01,
            max_epsilon: 0.3,
            steps: 30,
            iters: 10,
            step_divisor: 4.0,
        }
    }
}

/// The registered `bim` strategy: ascending ε ladder, first success wins.
pub struct BimAttack {
    epsilons: Vec<f64>,
    iters: usize,
    step_divisor: f64,
    bounds: Bounds,
}

impl BimAttack {
    pub fn new(params: BimParams, bounds: Bounds) -> Result<Self, AttackError> {
        if params.iters == 0 {
            return Err(AttackError::Config("iters must be at least 1".into()));
        }
        if !(params.step_divisor.is_finite() && params.step_divisor > 0.0) {
            return Err(AttackError::Config(format!(
                "step_divisor must be positive, got {}",
                params.step_divisor
            )));
        }
        Ok(BimAttack {
            epsilons: epsilon_ladder(params.min_epsilon, params.max_epsilon, params.steps, bounds)?,
            iters: params.iters,
            step_divisor: params.step_divisor,
            bounds,
        })
    }
}

impl Attack for BimAttack {
    fn name(&self) -> &'static str {
        "bim"
    }

    fn run(
        &self,
        net: &Network,
        x: &[f64],
        label: ClassLabel,
    ) -> Result<AttackOutcome, AttackError> {
        let mut total_iters = 0;
        for &epsilon in &self.epsilons {
            let outcome = bim_linf(
                net,
                x,
                label,
                epsilon,
                epsilon / self.step_divisor,
                self.iters,
                self.bounds,
            )?;
            total_iters += outcome.iterations;
            if outcome.success {
                return Ok(AttackOutcome {
                    iterations: total_iters,
                    ..outcome
                });
            }
        }
        Ok(AttackOutcome::failure(total_iters))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_network, Activation, Layer, Matrix};

    const BOX: Bounds = Bounds {
        lower: -10.0,
        upper: 10.0,
    };

    fn linear_1d(w: f64) -> Network {
        Network {
            layers: vec![Layer {
                weights: Matrix::from_rows(vec![vec![w], vec![-w]]),
                bias: vec![0.0, 0.0],
                activation: Activation::Identity,
            }],
        }
    }

    #[test]
    fn single_step_with_full_epsilon_reduces_to_fgsm() {
        let net = init_network(5, &[6], 3, 77);
        let x = [0.4, -0.2, 1.1, 0.0, -0.9];
        let label = net.forward(&x).unwrap().label;
        for epsilon in [0.05, 0.3, 1.0] {
            let bim = bim_linf(&net, &x, label, epsilon, epsilon, 1, BOX).unwrap();
            let fgsm = super::super::fgsm_step(&net, &x, label, epsilon, BOX).unwrap();
            assert_eq!(bim.success, fgsm.success);
            assert_eq!(bim.adversarial, fgsm.adversarial);
        }
    }

    #[test]
    fn distortion_never_exceeds_epsilon() {
        let net = init_network(4, &[8], 3, 5);
        for trial in 0..20 {
            let x: Vec<f64> = (0..4).map(|i| ((trial * 4 + i) as f64 * 0.7).sin()).collect();
            let label = net.forward(&x).unwrap().label;
            let epsilon = 0.25;
            let outcome = bim_linf(&net, &x, label, epsilon, epsilon / 4.0, 10, BOX).unwrap();
            if let Some(adv) = outcome.adversarial {
                let linf = super::super::linf_distance(&x, &adv);
                assert!(linf <= epsilon + 1e-12, "linf {linf} > epsilon {epsilon}");
            }
        }
    }

    #[test]
    fn stops_early_on_success() {
        // Boundary at 0: from x = 0.5 with step 0.3, the second step
        // crosses; the remaining eight iterations must not run.
        let net = linear_1d(1.0);
        let outcome = bim_linf(&net, &[0.5], 1, 1.2, 0.3, 10, BOX).unwrap();
        assert!(outcome.success);
        assert_eq!(outcome.iterations, 2);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let net = linear_1d(1.0);
        assert!(bim_linf(&net, &[0.5], 1, 0.0, 0.1, 5, BOX).is_err());
        assert!(bim_linf(&net, &[0.5], 1, 0.5, -0.1, 5, BOX).is_err());
        assert!(bim_linf(&net, &[0.5], 1, 0.5, 0.1, 0, BOX).is_err());
        assert!(BimAttack::new(
            BimParams {
                iters: 0,
                ..BimParams::default()
            },
            BOX
        )
        .is_err());
    }
}
