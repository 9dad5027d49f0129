//! Training behavior on separable data, checked against an independent
//! nearest-class-mean oracle.

mod common;

use common::{blobs, BOUNDS};
use perturbench_core::data::LabeledSet;
use perturbench_core::net::{init_network, train_classifier, TrainConfig};
use perturbench_core::ClassLabel;

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.1,
        epochs,
        seed: 77,
    }
}

/// Classifies by the nearest empirical class mean. On blob data this is a
/// perfect classifier by construction, so it bounds what a trained network
/// should reach.
fn nearest_mean_labels(train: &LabeledSet, queries: &LabeledSet) -> Vec<ClassLabel> {
    let dim = train.dim();
    let classes = train.max_label();
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (x, label) in train.iter() {
        counts[label - 1] += 1;
        for (s, v) in sums[label - 1].iter_mut().zip(x) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    queries
        .iter()
        .map(|(x, _)| {
            let mut best = (f64::INFINITY, 0usize);
            for (k, mean) in means.iter().enumerate() {
                let d2: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.0 {
                    best = (d2, k);
                }
            }
            best.1 + 1
        })
        .collect()
}

#[test]
fn reaches_the_nearest_mean_oracle_on_blobs() {
    let data = blobs(4, 16, 200, 9);
    let oracle = nearest_mean_labels(&data, &data);
    let oracle_hits = oracle
        .iter()
        .zip(data.iter())
        .filter(|(p, (_, t))| *p == t)
        .count();
    assert_eq!(oracle_hits, data.len(), "oracle must be perfect on blobs");

    let outcome = train_classifier(&data, &[16], 4, &config(150)).unwrap();
    assert!(
        outcome.accuracy >= 0.99,
        "trained accuracy {} below oracle-matching threshold",
        outcome.accuracy
    );
    assert!(outcome.final_loss.is_finite());
}

#[test]
fn training_is_deterministic() {
    let data = blobs(3, 8, 90, 4);
    let a = train_classifier(&data, &[10], 3, &config(60)).unwrap();
    let b = train_classifier(&data, &[10], 3, &config(60)).unwrap();
    assert_eq!(a.accuracy, b.accuracy);
    assert_eq!(a.final_loss, b.final_loss);
    let probe = &data.get(0).0;
    assert_eq!(
        a.network.forward(probe).unwrap().logits,
        b.network.forward(probe).unwrap().logits
    );
}

#[test]
fn zero_epochs_returns_the_seeded_initialization() {
    let data = blobs(3, 8, 90, 4);
    let outcome = train_classifier(&data, &[10], 3, &config(0)).unwrap();
    let init = init_network(8, &[10], 3, 77);
    let probe = &data.get(1).0;
    assert_eq!(
        outcome.network.forward(probe).unwrap().logits,
        init.forward(probe).unwrap().logits
    );
    assert!(outcome.final_loss.is_nan(), "no epoch ever measured a loss");
}

#[test]
fn more_epochs_reduce_the_loss() {
    let data = blobs(4, 16, 160, 12);
    let short = train_classifier(&data, &[12], 4, &config(10)).unwrap();
    let long = train_classifier(&data, &[12], 4, &config(200)).unwrap();
    assert!(
        long.final_loss < short.final_loss,
        "loss did not improve: {} vs {}",
        long.final_loss,
        short.final_loss
    );
}

#[test]
fn trained_vectors_stay_classifiable_inside_the_domain() {
    let data = blobs(4, 16, 160, 12);
    for (x, _) in data.iter() {
        assert!(BOUNDS.contains(x));
    }
}
