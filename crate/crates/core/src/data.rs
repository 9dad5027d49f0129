//! Bundled desk-scale datasets: labeled vector sets, synthetic generators,
//! and the domain-bounds type shared with the attack implementations.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::DataError;
use crate::ClassLabel;

/// Mean BGR channel values commonly used to center large-scale
/// natural-image datasets. Recorded for anyone extending this toolkit to
/// real images; no image pipeline is implemented here.
pub const BGR_CHANNEL_MEANS: [f64; 3] = [103.939, 116.779, 123.68];

/// Per-coordinate domain bounds, applied uniformly to every coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self, DataError> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(DataError::Config(format!(
                "bounds must satisfy lower < upper and be finite, got [{lower}, {upper}]"
            )));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn range(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    pub fn clamp_vec(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = self.clamp(*v);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|&v| v >= self.lower && v <= self.upper)
    }
}

/// Ordered sequence of (input vector, 1-based label) pairs. Order is
/// significant and preserved by every operation in the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    dim: usize,
    pairs: Vec<(Vec<f64>, ClassLabel)>,
}

impl LabeledSet {
    /// An empty set whose vectors will have the given dimension.
    pub fn empty(dim: usize) -> Self {
        LabeledSet {
            dim,
            pairs: Vec::new(),
        }
    }

    pub fn from_pairs(
        dim: usize,
        pairs: Vec<(Vec<f64>, ClassLabel)>,
    ) -> Result<Self, DataError> {
        for (idx, (x, label)) in pairs.iter().enumerate() {
            if x.len() != dim {
                return Err(DataError::Config(format!(
                    "pair {idx} has dimension {}, expected {dim}",
                    x.len()
                )));
            }
            if *label == 0 {
                return Err(DataError::Config(format!("pair {idx} has label 0; labels are 1-based")));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Config(format!("pair {idx} contains non-finite values")));
            }
        }
        Ok(LabeledSet { dim, pairs })
    }

    pub fn push(&mut self, x: Vec<f64>, label: ClassLabel) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert!(label >= 1);
        self.pairs.push((x, label));
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Vec<f64>, ClassLabel)> {
        self.pairs.iter()
    }

    pub fn get(&self, idx: usize) -> &(Vec<f64>, ClassLabel) {
        &self.pairs[idx]
    }

    /// The label sequence, in set order.
    pub fn labels(&self) -> Vec<ClassLabel> {
        self.pairs.iter().map(|(_, l)| *l).collect()
    }

    /// Largest label present (0 for an empty set).
    pub fn max_label(&self) -> ClassLabel {
        self.pairs.iter().map(|(_, l)| *l).max().unwrap_or(0)
    }

    /// New set keeping exactly the pairs at the given indices, in the order
    /// the indices are listed.
    pub fn select(&self, indices: &[usize]) -> LabeledSet {
        LabeledSet {
            dim: self.dim,
            pairs: indices.iter().map(|&i| self.pairs[i].clone()).collect(),
        }
    }

    /// First `count` pairs.
    pub fn truncate_to(&self, count: usize) -> LabeledSet {
        LabeledSet {
            dim: self.dim,
            pairs: self.pairs[..count.min(self.pairs.len())].to_vec(),
        }
    }
}

/// Declarative description of a bundled dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Well-separated class clusters: per class, a mean vector plus bounded
    /// uniform jitter small enough that every sample is strictly closer to
    /// its own class mean than to any other.
    SyntheticBlobs {
        classes: usize,
        dim: usize,
        samples: usize,
        seed: u64,
        bounds: Bounds,
    },
    /// Concentric spherical shells around the domain center, one radius per
    /// class, with shell thickness below half the inter-shell gap.
    SyntheticRings {
        classes: usize,
        dim: usize,
        samples: usize,
        seed: u64,
        bounds: Bounds,
    },
    /// Load a labeled-vector file written by this crate.
    File { path: String },
}

impl DatasetSpec {
    fn validate_synthetic(
        classes: usize,
        dim: usize,
        samples: usize,
        bounds: &Bounds,
    ) -> Result<(), DataError> {
        if classes < 2 {
            return Err(DataError::Config(format!(
                "class count must be at least 2, got {classes}"
            )));
        }
        if dim == 0 {
            return Err(DataError::Config("input dimension must be positive".into()));
        }
        if samples < classes {
            return Err(DataError::Config(format!(
                "sample count {samples} is below class count {classes}"
            )));
        }
        Bounds::new(bounds.lower, bounds.upper)?;
        Ok(())
    }
}

/// Builds the dataset described by `spec`. Deterministic from the seed;
/// classes are balanced within ±1 by assigning labels round-robin; every
/// vector lies within the domain bounds by construction.
pub fn generate(spec: &DatasetSpec) -> Result<LabeledSet, DataError> {
    match spec {
        DatasetSpec::SyntheticBlobs {
            classes,
            dim,
            samples,
            seed,
            bounds,
        } => {
            DatasetSpec::validate_synthetic(*classes, *dim, *samples, bounds)?;
            generate_blobs(*classes, *dim, *samples, *seed, *bounds)
        }
        DatasetSpec::SyntheticRings {
            classes,
            dim,
            samples,
            seed,
            bounds,
        } => {
            DatasetSpec::validate_synthetic(*classes, *dim, *samples, bounds)?;
            generate_rings(*classes, *dim, *samples, *seed, *bounds)
        }
        DatasetSpec::File { path } => load_file(Path::new(path)),
    }
}

/// Reads a labeled-vector file written by [`save_file`]; round-trips
/// bit-exactly.
pub fn load_file(path: &Path) -> Result<LabeledSet, DataError> {
    Ok(crate::persist::read_labeled_set(path)?)
}

/// Writes `set` so that [`load_file`] restores it bit-exactly.
pub fn save_file(set: &LabeledSet, path: &Path) -> Result<(), DataError> {
    Ok(crate::persist::write_labeled_set(set, path)?)
}

/// Draws class means in the jitter-shrunk box, re-drawing until all pairwise
/// distances reach `target`; the target halves every 200 failed attempts so
/// the loop always terminates. Returns the means and the achieved minimum
/// pairwise distance.
fn place_separated_means(
    classes: usize,
    dim: usize,
    bounds: Bounds,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, f64) {
    // Reserve an eighth of the range on each side for sample jitter.
    let margin = bounds.range() / 8.0;
    let (lo, hi) = (bounds.lower + margin, bounds.upper - margin);
    let mut target = 0.75 * bounds.range() * (dim as f64).sqrt() / 2.0;
    let mut attempts = 0usize;
    loop {
        let means: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| rng.random_range(lo..hi)).collect())
            .collect();
        let mut min_dist = f64::INFINITY;
        for a in 0..classes {
            for b in (a + 1)..classes {
                let d = l2_distance(&means[a], &means[b]);
                min_dist = min_dist.min(d);
            }
        }
        if min_dist >= target {
            return (means, min_dist);
        }
        attempts += 1;
        if attempts % 200 == 0 {
            target *= 0.5;
        }
    }
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn generate_blobs(
    classes: usize,
    dim: usize,
    samples: usize,
    seed: u64,
    bounds: Bounds,
) -> Result<LabeledSet, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (means, min_dist) = place_separated_means(classes, dim, bounds, &mut rng);
    // Keep every sample's Euclidean deviation from its mean below 40% of
    // half the minimum inter-mean distance, so the nearest mean is always
    // the sample's own class.
    let spread = (0.4 * min_dist / 2.0 / (dim as f64).sqrt())
        .min(bounds.range() / 8.0);
    let mut set = LabeledSet::empty(dim);
    for idx in 0..samples {
        let class = idx % classes;
        let x: Vec<f64> = means[class]
            .iter()
            .map(|&mu| bounds.clamp(mu + rng.random_range(-spread..spread)))
            .collect();
        set.push(x, class + 1);
    }
    Ok(set)
}

fn generate_rings(
    classes: usize,
    dim: usize,
    samples: usize,
    seed: u64,
    bounds: Bounds,
) -> Result<LabeledSet, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = bounds.center();
    // Largest ball centered in the box that stays inside it.
    let max_radius = 0.9 * bounds.range() / 2.0;
    let gap = max_radius / classes as f64;
    let thickness = 0.3 * gap;
    let mut set = LabeledSet::empty(dim);
    for idx in 0..samples {
        let class = idx % classes;
        let radius = gap * (class + 1) as f64 + rng.random_range(-thickness..thickness);
        // Uniform direction from a normalized Gaussian draw.
        let mut dir: Vec<f64> = (0..dim)
            .map(|_| {
                let d: f64 = rand_distr::Distribution::sample(
                    &rand_distr::StandardNormal,
                    &mut rng,
                );
                d
            })
            .collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in dir.iter_mut() {
            *v = center + *v / norm * radius;
        }
        bounds.clamp_vec(&mut dir);
        set.push(dir, class + 1);
    }
    Ok(set)
}
