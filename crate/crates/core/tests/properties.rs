//! Property-based invariants: analytic gradients against finite
//! differences, attack outputs confined to the domain box, metric ranges,
//! robustness monotonicity, and grid construction.

mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use common::{blobs, fitted, BOUNDS};
use perturbench_core::attacks::{l2_distance, linf_distance, AttackRegistry};
use perturbench_core::data::LabeledSet;
use perturbench_core::defenses::{Combine, DefenseConfig};
use perturbench_core::harness::{build_grid, GridSpacing, ParameterGrid};
use perturbench_core::metrics::{
    estimate_metric, robustness, AccuracyKind, LabelMatrix,
};
use perturbench_core::net::{init_network, Network};

fn shared() -> &'static (Network, LabeledSet) {
    static FIXTURE: OnceLock<(Network, LabeledSet)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let data = blobs(3, 8, 60, 14);
        let net = fitted(&data, 3, 5);
        (net, data)
    })
}

fn shared_matrix() -> &'static (LabelMatrix, Vec<usize>) {
    static MATRIX: OnceLock<(LabelMatrix, Vec<usize>)> = OnceLock::new();
    MATRIX.get_or_init(|| {
        let (net, data) = shared();
        let config = DefenseConfig::l1(1.5);
        let seeds: Vec<u64> = (0..16).collect();
        let matrix = LabelMatrix::build(&config, net, data, &seeds).unwrap();
        (matrix, data.labels())
    })
}

/// Central finite difference of the cross-entropy loss along coordinate `p`.
fn fd_loss_slope(net: &Network, x: &[f64], label: usize, p: usize, h: f64) -> f64 {
    let mut hi = x.to_vec();
    let mut lo = x.to_vec();
    hi[p] += h;
    lo[p] -= h;
    let at = |point: &[f64]| net.loss_and_gradients(point, label).unwrap().0;
    (at(&hi) - at(&lo)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The analytic input gradient matches central finite differences
    /// wherever the loss is locally smooth. Smoothness is screened by
    /// requiring two step sizes to agree with each other first, which
    /// discards points straddling a ReLU kink without ever consulting the
    /// analytic value being tested.
    #[test]
    fn input_gradient_matches_finite_differences(
        seed in 0u64..1000,
        point in prop::collection::vec(-2.0f64..2.0, 6),
        label in 1usize..=3,
    ) {
        let net = init_network(6, &[5], 3, seed);
        let grad = net.input_gradient(&point, label).unwrap();
        for p in 0..point.len() {
            let coarse = fd_loss_slope(&net, &point, label, p, 1e-5);
            let fine = fd_loss_slope(&net, &point, label, p, 5e-6);
            let scale = coarse.abs().max(fine.abs()).max(1.0);
            prop_assume!((coarse - fine).abs() <= 1e-6 * scale);
            let tol = 1e-6 * grad[p].abs().max(coarse.abs()) + 1e-8;
            prop_assert!(
                (grad[p] - coarse).abs() <= tol,
                "coord {}: analytic {} vs fd {}", p, grad[p], coarse
            );
        }
    }

    /// Parameter gradients feed training, so spot-check them the same way.
    #[test]
    fn weight_gradient_matches_finite_differences(
        seed in 0u64..1000,
        point in prop::collection::vec(-2.0f64..2.0, 4),
        label in 1usize..=2,
    ) {
        let net = init_network(4, &[], 2, seed);
        let (_, bundle) = net.loss_and_gradients(&point, label).unwrap();
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..4 {
                let mut hi = net.clone();
                let mut lo = net.clone();
                hi.layers[0].weights.set(r, c, net.layers[0].weights.get(r, c) + h);
                lo.layers[0].weights.set(r, c, net.layers[0].weights.get(r, c) - h);
                let slope = (hi.loss_and_gradients(&point, label).unwrap().0
                    - lo.loss_and_gradients(&point, label).unwrap().0)
                    / (2.0 * h);
                let analytic = bundle.weights[0].get(r, c);
                prop_assert!(
                    (analytic - slope).abs() <= 1e-5 * slope.abs().max(1.0),
                    "({r},{c}): analytic {analytic} vs fd {slope}"
                );
            }
        }
    }

    /// Whatever an attack returns on success lies inside the domain box,
    /// fools the classifier, and reports exact distances.
    #[test]
    fn successful_attacks_stay_inside_the_box(
        idx in 0usize..60,
        method in prop::sample::select(vec!["fgsm", "bim", "deepfool", "jsma", "lbfgs", "cw"]),
    ) {
        let (net, data) = shared();
        let attack = AttackRegistry::builtin().create_default(method, BOUNDS).unwrap();
        let (x, label) = data.get(idx);
        let outcome = attack.run(net, x, *label).unwrap();
        if let Some(adv) = &outcome.adversarial {
            prop_assert!(outcome.success);
            prop_assert!(BOUNDS.contains(adv));
            prop_assert_ne!(net.forward(adv).unwrap().label, *label);
            prop_assert_eq!(outcome.l2, l2_distance(x, adv));
            prop_assert_eq!(outcome.linf, linf_distance(x, adv));
        } else {
            prop_assert!(!outcome.success);
            prop_assert_eq!(outcome.l2, 0.0);
        }
    }

    /// Seed-averaged efficacy and quality always land in [0, 1].
    #[test]
    fn estimates_are_bounded(
        sigma in 0.01f64..6.0,
        kind_quality in any::<bool>(),
        seed_base in 0u64..500,
    ) {
        let (net, data) = shared();
        let config = DefenseConfig::l1(sigma);
        let seeds: Vec<u64> = (seed_base..seed_base + 5).collect();
        let kind = if kind_quality { AccuracyKind::Quality } else { AccuracyKind::Efficacy };
        let estimate = estimate_metric(kind, &config, net, data, &seeds).unwrap();
        prop_assert!((0.0..=1.0).contains(&estimate.value));
        prop_assert_eq!(estimate.repetitions, 5);
    }

    /// Raising the agreement level q never raises robustness: a fleet that
    /// must be fooled more broadly is fooled no more often.
    #[test]
    fn robustness_is_monotone_in_q(
        q_lo in 0.05f64..1.0,
        q_hi in 0.05f64..1.0,
        n in 1usize..=16,
    ) {
        prop_assume!(q_lo < q_hi);
        let (matrix, truths) = shared_matrix();
        let low = matrix.robustness_prefix(truths, q_lo, n).unwrap();
        let high = matrix.robustness_prefix(truths, q_hi, n).unwrap();
        prop_assert!(high <= low, "R({q_hi},{n})={high} > R({q_lo},{n})={low}");
        prop_assert!((0.0..=1.0).contains(&low));
    }

    /// At full agreement the fooled set can only shrink as the fleet grows
    /// along the same seed prefix.
    #[test]
    fn full_agreement_robustness_shrinks_with_the_fleet(
        n_small in 1usize..=16,
        n_large in 1usize..=16,
    ) {
        prop_assume!(n_small < n_large);
        let (matrix, truths) = shared_matrix();
        let small = matrix.robustness_prefix(truths, 1.0, n_small).unwrap();
        let large = matrix.robustness_prefix(truths, 1.0, n_large).unwrap();
        prop_assert!(large <= small);
    }

    /// Grid endpoints are bit-exact and the interior is sorted, for both
    /// spacings and arbitrary valid ranges.
    #[test]
    fn grids_hit_their_endpoints_exactly(
        lower_exp in -6.0f64..2.0,
        span in 0.5f64..4.0,
        count in 2usize..64,
        geometric in any::<bool>(),
    ) {
        let lower = 10f64.powf(lower_exp);
        let upper = lower * 10f64.powf(span);
        prop_assume!(upper.is_finite() && upper > lower);
        let grid = ParameterGrid {
            spacing: if geometric { GridSpacing::Geometric } else { GridSpacing::Linear },
            lower,
            upper,
            count,
        };
        let values = build_grid(&grid).unwrap();
        prop_assert_eq!(values.len(), count);
        prop_assert_eq!(values[0], lower);
        prop_assert_eq!(values[count - 1], upper);
        prop_assert!(values.windows(2).all(|w| w[0] < w[1]), "not strictly increasing");
    }

    /// A vanishing-noise installation behaves exactly like the base
    /// network on every input, for every mechanism.
    #[test]
    fn vanishing_noise_reduces_to_the_base_classifier(idx in 0usize..60, which in 0usize..4) {
        let (net, data) = shared();
        let config = match which {
            0 => DefenseConfig::l1(1e-300),
            1 => DefenseConfig::lstar(1e-300),
            2 => DefenseConfig::lplus(1e-300),
            _ => DefenseConfig::rpenn(1e-300, 1, Combine::Majority),
        };
        let mut inst = perturbench_core::defenses::install(&config, net, 12345).unwrap();
        let (x, _) = data.get(idx);
        prop_assert_eq!(inst.predict(x).unwrap().label, net.forward(x).unwrap().label);
    }
}

#[test]
fn robustness_with_duplicate_seeds_is_rejected() {
    let (net, data) = shared();
    let config = DefenseConfig::l1(1.0);
    let result = robustness(&config, net, data, 1.0, &[3, 3]);
    assert!(result.is_err());
}
