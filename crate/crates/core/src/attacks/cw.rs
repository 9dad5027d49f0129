//! Carlini–Wagner ℓ2 attack: optimizes in tanh space so box membership is
//! structural, minimizing ‖x′ − x‖² + c·max(z_true − max_other, −κ) with
//! momentum gradient descent and a binary search over c, keeping the
//! least-distorted strict misclassification seen anywhere along the way.

use serde::Deserialize;

use super::{check_precondition, verified_outcome, Attack, AttackOutcome};
use crate::data::Bounds;
use crate::error::AttackError;
use crate::net::Network;
use crate::ClassLabel;

/// Keeps atanh finite when a coordinate sits exactly on the box wall.
const WALL_CLIP: f64 = 1.0 - 1e-12;

/// Map a box point into unconstrained tanh coordinates.
fn to_free(x: &[f64], center: f64, half_range: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| (((v - center) / half_range).clamp(-WALL_CLIP, WALL_CLIP)).atanh())
        .collect()
}

/// Map tanh coordinates back into the (open) box, returning the point and
/// the per-coordinate tanh values needed for the chain rule.
fn to_box(w: &[f64], center: f64, half_range: f64) -> (Vec<f64>, Vec<f64>) {
    let tanhs: Vec<f64> = w.iter().map(|v| v.tanh()).collect();
    let point = tanhs.iter().map(|t| center + half_range * t).collect();
    (point, tanhs)
}

pub fn cw_l2(
    net: &Network,
    x: &[f64],
    label: ClassLabel,
    params: &CwParams,
    bounds: Bounds,
) -> Result<AttackOutcome, AttackError> {
    params.validate()?;
    check_precondition(net, x, label)?;
    let classes = net.class_count();
    let center = bounds.center();
    let half_range = 0.5 * bounds.range();
    let w_start = to_free(x, center, half_range);
    let mut lower = 0.0f64;
    let mut upper = f64::INFINITY;
    let mut c = params.initial_const;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut total_steps = 0usize;
    for _ in 0..params.search_steps {
        let mut w = w_start.clone();
        let mut velocity = vec![0.0; w.len()];
        let mut flipped_at_this_c = false;
        for _ in 0..params.steps {
            total_steps += 1;
            let (point, tanhs) = to_box(&w, center, half_range);
            let prediction = net.forward(&point)?;
            // Strongest competitor to the true class (lowest index on ties).
            let competitor = (0..classes)
                .filter(|&k| k + 1 != label)
                .max_by(|&a, &b| {
                    prediction.logits[a]
                        .partial_cmp(&prediction.logits[b])
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .expect("at least two classes");
            if prediction.label != label {
                flipped_at_this_c = true;
                let l2 = super::l2_distance(&point, x);
                if best.as_ref().is_none_or(|(_, b)| l2 < *b) {
                    best = Some((point.clone(), l2));
                }
            }
            let margin = prediction.logits[label - 1] - prediction.logits[competitor];
            // Hinge is flat once the competitor leads by κ.
            let mut grad_x: Vec<f64> = point.iter().zip(x).map(|(a, b)| 2.0 * (a - b)).collect();
            if margin > -params.kappa {
                let mut coeffs = vec![0.0; classes];
                coeffs[label - 1] = 1.0;
                coeffs[competitor] = -1.0;
                let (_, margin_grad) = net.logit_combination_gradient(&point, &coeffs)?;
                for (g, m) in grad_x.iter_mut().zip(&margin_grad) {
                    *g += c * m;
                }
            }
            for ((v, g), t) in velocity.iter_mut().zip(&grad_x).zip(&tanhs) {
                let grad_w = g * half_range * (1.0 - t * t);
                *v = params.momentum * *v + grad_w;
            }
            for (wi, v) in w.iter_mut().zip(&velocity) {
                *wi -= params.learning_rate * v;
            }
        }
        if flipped_at_this_c {
            // Flipping was affordable: tighten toward less distortion.
            upper = c;
            c = 0.5 * (lower + upper);
        } else {
            lower = c;
            c = if upper.is_finite() {
                0.5 * (lower + upper)
            } else {
                c * 10.0
            };
        }
    }
    match best {
        Some((point, _)) => verified_outcome(net, x, point, label, total_steps, bounds),
        None => Ok(AttackOutcome::failure(total_steps)),
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwParams {
    /// Gradient steps per trade-off constant.
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Starting weight on the margin term.
    pub initial_const: f64,
    /// How many trade-off constants to try.
    pub search_steps: usize,
    /// Required confidence gap before the margin term goes flat.
    pub kappa: f64,
}

impl CwParams {
    fn validate(&self) -> Result<(), AttackError> {
        if self.steps == 0 || self.search_steps == 0 {
            return Err(AttackError::Config(
                "steps and search_steps must be at least 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(AttackError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(AttackError::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.initial_const.is_finite() && self.initial_const > 0.0) {
            return Err(AttackError::Config(format!(
                "initial_const must be positive, got {}",
                self.initial_const
            )));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(AttackError::Config(format!(
                "kappa must be non-negative, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

impl Default for CwParams {
    fn default() -> Self {
        CwParams {
            steps: 1000,
            learning_rate: 0.01,
            momentum: 0.9,
            initial_const: 0.1,
            search_steps: 5,
            kappa: 0.0,
        }
    }
}

pub struct CwAttack {
    params: CwParams,
    bounds: Bounds,
}

impl CwAttack {
    pub fn new(params: CwParams, bounds: Bounds) -> Result<Self, AttackError> {
        params.validate()?;
        Ok(CwAttack { params, bounds })
    }
}

impl Attack for CwAttack {
    fn name(&self) -> &'static str {
        "cw"
    }

    fn run(
        &self,
        net: &Network,
        x: &[f64],
        label: ClassLabel,
    ) -> Result<AttackOutcome, AttackError> {
        cw_l2(net, x, label, &self.params, self.bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Layer, Matrix, Network};

    const BOX: Bounds = Bounds {
        lower: -10.0,
        upper: 10.0,
    };

    fn two_class() -> Network {
        Network {
            layers: vec![Layer {
                weights: Matrix::from_rows(vec![vec![1.0, -1.0], vec![-1.0, 1.0]]),
                bias: vec![0.0, 0.0],
                activation: Activation::Identity,
            }],
        }
    }

    #[test]
    fn reparameterization_round_trips_interior_points() {
        let x = [-9.5, -1.0, 0.0, 0.3, 7.25, 9.99];
        let w = to_free(&x, BOX.center(), 0.5 * BOX.range());
        let (back, _) = to_box(&w, BOX.center(), 0.5 * BOX.range());
        for (orig, rt) in x.iter().zip(&back) {
            assert!((orig - rt).abs() < 1e-9, "{orig} vs {rt}");
        }
    }

    #[test]
    fn wall_points_stay_finite_and_inside() {
        let x = [-10.0, 10.0];
        let w = to_free(&x, BOX.center(), 0.5 * BOX.range());
        assert!(w.iter().all(|v| v.is_finite()));
        let (back, _) = to_box(&w, BOX.center(), 0.5 * BOX.range());
        assert!(back.iter().all(|&v| BOX.contains(&[v])));
    }

    #[test]
    fn finds_a_low_distortion_flip_on_an_affine_classifier() {
        let net = two_class();
        let x = [2.0, 1.0];
        let outcome = cw_l2(&net, &x, 1, &CwParams::default(), BOX).unwrap();
        assert!(outcome.success);
        let adv = outcome.adversarial.unwrap();
        assert_eq!(net.forward(&adv).unwrap().label, 2);
        // Minimal flip distance is 1/√2 ≈ 0.707.
        assert!(outcome.l2 < 1.0, "l2 {}", outcome.l2);
    }

    #[test]
    fn constant_logits_never_flip() {
        let net = Network {
            layers: vec![Layer {
                weights: Matrix::zeros(2, 2),
                bias: vec![1.0, 0.0],
                activation: Activation::Identity,
            }],
        };
        let params = CwParams {
            steps: 50,
            search_steps: 2,
            ..CwParams::default()
        };
        let outcome = cw_l2(&net, &[0.5, 0.5], 1, &params, BOX).unwrap();
        assert!(!outcome.success);
    }

    #[test]
    fn misclassified_start_is_rejected() {
        let net = two_class();
        assert!(matches!(
            cw_l2(&net, &[1.0, 2.0], 1, &CwParams::default(), BOX),
            Err(AttackError::Precondition(_))
        ));
    }
}
