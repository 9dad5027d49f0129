//! Box-constrained quasi-Newton minimization: L-BFGS directions from the
//! two-loop recursion, an Armijo backtracking line search along the
//! projected arc, and a projected-gradient stopping rule.

use std::collections::VecDeque;

use crate::data::Bounds;

/// Optimizer knobs. The defaults (history 10, 100 iterations) suit the
/// attack objectives in this crate; smaller histories down to 5 behave
/// nearly identically on these problem sizes.
#[derive(Clone, Debug)]
pub struct LbfgsConfig {
    /// Number of curvature pairs kept for the two-loop recursion.
    pub history: usize,
    pub max_iters: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub grad_tol: f64,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo_c1: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 10,
            max_iters: 100,
            grad_tol: 1e-9,
            armijo_c1: 1e-4,
        }
    }
}

/// Result of a minimization run.
#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// True when the projected gradient dropped below the tolerance; false
    /// when the iteration or line-search budget ran out first.
    pub converged: bool,
}

fn project(x: &mut [f64], bounds: Bounds) {
    for v in x.iter_mut() {
        *v = bounds.clamp(*v);
    }
}

/// Max-norm of `x − P(x − g)`, the first-order stationarity measure for box
/// constraints: zero exactly at a KKT point.
fn projected_gradient_norm(x: &[f64], grad: &[f64], bounds: Bounds) -> f64 {
    x.iter()
        .zip(grad)
        .map(|(&xi, &gi)| (xi - bounds.clamp(xi - gi)).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: applies the inverse-Hessian approximation stored in
/// the curvature pairs to the gradient, yielding a descent direction.
fn two_loop_direction(grad: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let alpha = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha * yi;
        }
        alphas.push((alpha, rho));
    }
    if let Some((s, y)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y), (alpha, rho)) in pairs.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += si * (alpha - beta);
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

/// Minimizes `f` over the box, starting from the projection of `x0`.
/// `f` returns the objective value and its gradient at a point.
pub fn minimize_box<F>(mut f: F, x0: &[f64], bounds: Bounds, cfg: &LbfgsConfig) -> LbfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let (mut value, mut grad) = f(&x);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(cfg.history);
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        if projected_gradient_norm(&x, &grad, bounds) <= cfg.grad_tol {
            return LbfgsOutcome {
                x,
                value,
                iterations,
                converged: true,
            };
        }
        let mut direction = two_loop_direction(&grad, &pairs);
        if dot(&grad, &direction) >= 0.0 {
            // The curvature history stopped being useful; fall back to
            // steepest descent.
            pairs.clear();
            direction = grad.iter().map(|g| -g).collect();
        }

        // Armijo backtracking along the projected arc.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut candidate: Vec<f64> = x
                .iter()
                .zip(&direction)
                .map(|(xi, di)| xi + step * di)
                .collect();
            project(&mut candidate, bounds);
            let displacement: Vec<f64> =
                candidate.iter().zip(&x).map(|(c, xi)| c - xi).collect();
            if displacement.iter().all(|d| *d == 0.0) {
                break;
            }
            let (cand_value, cand_grad) = f(&candidate);
            if cand_value <= value + cfg.armijo_c1 * dot(&grad, &displacement) {
                accepted = Some((candidate, displacement, cand_value, cand_grad));
                break;
            }
            step *= 0.5;
        }
        let Some((new_x, s, new_value, new_grad)) = accepted else {
            // No acceptable step exists along this direction; the iterate is
            // numerically stationary for our purposes.
            return LbfgsOutcome {
                x,
                value,
                iterations,
                converged: false,
            };
        };

        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(n, o)| n - o).collect();
        if dot(&y, &s) > 1e-12 {
            if pairs.len() == cfg.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y));
        }
        x = new_x;
        value = new_value;
        grad = new_grad;
        iterations += 1;
    }

    let converged = projected_gradient_norm(&x, &grad, bounds) <= cfg.grad_tol;
    LbfgsOutcome {
        x,
        value,
        iterations,
        converged,
    }
}
