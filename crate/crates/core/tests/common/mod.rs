//! Shared fixtures for the integration tests: a small blob dataset and a
//! classifier trained on it. Each test target compiles this module on its
//! own, so not every target uses every item.
#![allow(dead_code)]

use perturbench_core::data::{generate, Bounds, DatasetSpec, LabeledSet};
use perturbench_core::net::{train_classifier, Network, TrainConfig};

pub const BOUNDS: Bounds = Bounds {
    lower: -6.0,
    upper: 6.0,
};

pub fn blobs(classes: usize, dim: usize, samples: usize, seed: u64) -> LabeledSet {
    generate(&DatasetSpec::SyntheticBlobs {
        classes,
        dim,
        samples,
        seed,
        bounds: BOUNDS,
    })
    .expect("generate blobs")
}

/// A classifier fitted to `data` with one hidden layer, stopped at 100%
/// training accuracy without saturating the softmax.
pub fn fitted(data: &LabeledSet, classes: usize, seed: u64) -> Network {
    let cfg = TrainConfig {
        learning_rate: 0.1,
        epochs: 100,
        seed,
    };
    let outcome = train_classifier(data, &[16], classes, &cfg).expect("training succeeds");
    assert_eq!(
        outcome.accuracy, 1.0,
        "fixture expects a perfectly fitted classifier"
    );
    outcome.network
}
