//! Cross-method structure: every attack produces verifiable adversarial
//! examples on a fitted classifier, and the methods relate to each other
//! the way their designs predict (iterated beats single-step; geometric
//! and optimization methods find smaller perturbations than sign steps).

mod common;

use common::{blobs, fitted, BOUNDS};
use perturbench_core::attacks::{
    generate_adversarial_set, l2_distance, linf_distance, AdversarialSet, AttackRegistry,
};
use perturbench_core::data::LabeledSet;
use perturbench_core::net::Network;

fn jsma_table() -> toml::Table {
    // The default saliency budget rounds to zero pairs at this
    // dimensionality, so the cross-method fixture raises it.
    let mut table = toml::Table::new();
    table.insert("theta".into(), toml::Value::Float(0.25));
    table.insert("budget_fraction".into(), toml::Value::Float(1.0));
    table
}

fn fixture() -> (Network, LabeledSet) {
    let data = blobs(4, 16, 120, 21);
    let net = fitted(&data, 4, 3);
    (net, data)
}

fn generate(net: &Network, data: &LabeledSet, name: &str) -> AdversarialSet {
    let registry = AttackRegistry::builtin();
    let attack = if name == "jsma" {
        registry.create(name, &jsma_table(), BOUNDS).unwrap()
    } else {
        registry.create_default(name, BOUNDS).unwrap()
    };
    generate_adversarial_set(net, data, attack.as_ref()).unwrap()
}

#[test]
fn every_method_produces_independently_verifiable_examples() {
    let (net, data) = fixture();
    for name in AttackRegistry::builtin().names() {
        let set = generate(&net, &data, name);
        assert!(
            set.success_rate() > 0.0,
            "{name} found no adversarial examples"
        );
        for record in &set.records {
            let (benign, truth) = data.get(record.input_id);
            assert_eq!(record.true_label, *truth);
            assert!(
                BOUNDS.contains(&record.vector),
                "{name} left the domain box"
            );
            let predicted = net.forward(&record.vector).unwrap().label;
            assert_ne!(
                predicted, *truth,
                "{name} record {} does not fool the classifier",
                record.input_id
            );
            assert_eq!(record.l2, l2_distance(benign, &record.vector));
            assert_eq!(record.linf, linf_distance(benign, &record.vector));
        }
    }
}

#[test]
fn iterated_sign_steps_succeed_at_least_as_often_as_single_steps() {
    let (net, data) = fixture();
    let fgsm = generate(&net, &data, "fgsm");
    let bim = generate(&net, &data, "bim");
    assert!(
        bim.success_rate() >= fgsm.success_rate(),
        "bim {} < fgsm {}",
        bim.success_rate(),
        fgsm.success_rate()
    );
}

#[test]
fn boundary_linearization_beats_sign_steps_on_distortion() {
    let (net, data) = fixture();
    let fgsm = generate(&net, &data, "fgsm");
    let deepfool = generate(&net, &data, "deepfool");
    let fgsm_median = fgsm.median_l2().expect("fgsm found examples");
    let deepfool_median = deepfool.median_l2().expect("deepfool found examples");
    assert!(
        deepfool_median < fgsm_median,
        "deepfool {deepfool_median} not below fgsm {fgsm_median}"
    );
}

#[test]
fn margin_optimization_rivals_boundary_linearization() {
    let (net, data) = fixture();
    let deepfool = generate(&net, &data, "deepfool");
    let cw = generate(&net, &data, "cw");
    let deepfool_median = deepfool.median_l2().unwrap();
    let cw_median = cw.median_l2().unwrap();
    assert!(
        cw_median <= 1.1 * deepfool_median,
        "cw median {cw_median} exceeds 110% of deepfool median {deepfool_median}"
    );
}

#[test]
fn generation_preserves_input_order_and_attempt_count() {
    let (net, data) = fixture();
    let set = generate(&net, &data, "deepfool");
    assert_eq!(set.attempted, data.len());
    assert_eq!(set.method, "deepfool");
    assert_eq!(set.dim, data.dim());
    let mut last = None;
    for record in &set.records {
        assert!(last.is_none_or(|prev| prev < record.input_id));
        last = Some(record.input_id);
    }
}
