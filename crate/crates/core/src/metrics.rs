//! Evaluation metrics for defended classifiers: efficacy (top-1 accuracy on
//! adversarial examples), quality (top-1 accuracy on curated benign inputs),
//! and robustness (the fraction of adversarial inputs that fool at least
//! ⌊q·n⌋ of n independently seeded installations).
//!
//! Adversarial sets carry the ground-truth labels of their benign twins, and
//! the attacks in this crate are untargeted, so "fooled" everywhere means
//! "assigned any label other than the ground truth".

use rayon::prelude::*;

use crate::data::LabeledSet;
use crate::defenses::{install, Combine, DefenseConfig, Installation};
use crate::error::MetricError;
use crate::net::Network;
use crate::ClassLabel;

/// Which metric a report row carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Efficacy,
    Quality,
    Robustness,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Efficacy => "efficacy",
            MetricKind::Quality => "quality",
            MetricKind::Robustness => "robustness",
        }
    }
}

/// One estimated metric value with the coordinates that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub kind: MetricKind,
    pub value: f64,
    pub defense: DefenseConfig,
    /// Attack method whose adversarial/benign subset the value refers to.
    pub attack: String,
    /// Fleet size, for robustness rows.
    pub n: Option<usize>,
    /// Robustness level, for robustness rows.
    pub q: Option<f64>,
    pub repetitions: usize,
    /// Short hash of the seed list behind the estimate.
    pub seed_hash: String,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "kind,value,defense,sigma,lambda,m,combine,attack,n,q,repetitions,seed_hash";

    /// Serializes to the fixed CSV column set; parameters that do not apply
    /// to the defense kind are left empty.
    pub fn csv_row(&self) -> String {
        let (sigma, lambda, m, combine) = match &self.defense {
            DefenseConfig::L1 { sigma }
            | DefenseConfig::LStar { sigma, .. }
            | DefenseConfig::LPlus { sigma, .. } => (format!("{sigma:?}"), String::new(), String::new(), String::new()),
            DefenseConfig::Rpenn {
                lambda, m, combine, ..
            } => (
                String::new(),
                format!("{lambda:?}"),
                m.to_string(),
                match combine {
                    Combine::Majority => "majority".to_string(),
                    Combine::Average => "average".to_string(),
                },
            ),
        };
        format!(
            "{},{:?},{},{},{},{},{},{},{},{},{},{}",
            self.kind.name(),
            self.value,
            self.defense.kind_name(),
            sigma,
            lambda,
            m,
            combine,
            self.attack,
            self.n.map(|n| n.to_string()).unwrap_or_default(),
            self.q.map(|q| format!("{q:?}")).unwrap_or_default(),
            self.repetitions,
            self.seed_hash
        )
    }
}

/// Short content hash of a seed list, for report provenance.
pub fn seed_list_hash(seeds: &[u64]) -> String {
    let mut bytes = Vec::with_capacity(seeds.len() * 8);
    for s in seeds {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    crate::persist::sha256_bytes(&bytes)[..16].to_string()
}

/// Number of positions where `labels` agrees with the set's labels.
pub fn matchcount(labels: &[ClassLabel], set: &LabeledSet) -> Result<usize, MetricError> {
    if labels.len() != set.len() {
        return Err(MetricError::LengthMismatch {
            labels: labels.len(),
            set: set.len(),
        });
    }
    Ok(labels
        .iter()
        .zip(set.iter())
        .filter(|(predicted, (_, truth))| *predicted == truth)
        .count())
}

/// Fraction of adversarial examples the installation classifies correctly
/// with respect to their benign twins' ground truth.
pub fn efficacy(inst: &mut Installation, adversarial: &LabeledSet) -> Result<f64, MetricError> {
    if adversarial.is_empty() {
        return Err(MetricError::EmptySet("adversarial"));
    }
    let labels = inst.predict_all(adversarial)?;
    Ok(matchcount(&labels, adversarial)? as f64 / adversarial.len() as f64)
}

/// Top-1 accuracy of the installation on the curated benign set.
pub fn quality(inst: &mut Installation, benign: &LabeledSet) -> Result<f64, MetricError> {
    if benign.is_empty() {
        return Err(MetricError::EmptySet("benign"));
    }
    let labels = inst.predict_all(benign)?;
    Ok(matchcount(&labels, benign)? as f64 / benign.len() as f64)
}

/// Label matrix of a fleet: column v holds the labels that the installation
/// seeded with `seeds[v]` assigned to every input of one set, in set order.
#[derive(Clone, Debug)]
pub struct LabelMatrix {
    seeds: Vec<u64>,
    columns: Vec<Vec<ClassLabel>>,
    rows: usize,
}

impl LabelMatrix {
    /// Installs the configuration once per seed and classifies the whole set
    /// with each installation. Columns are computed concurrently; the result
    /// is deterministic because each column depends only on its own seed.
    pub fn build(
        config: &DefenseConfig,
        base: &Network,
        set: &LabeledSet,
        seeds: &[u64],
    ) -> Result<Self, MetricError> {
        if has_duplicate_seeds(seeds) {
            return Err(MetricError::DuplicateSeeds);
        }
        if seeds.is_empty() {
            return Err(MetricError::NoInstallations);
        }
        let columns: Vec<Vec<ClassLabel>> = seeds
            .par_iter()
            .map(|&seed| {
                let mut inst = install(config, base, seed)?;
                Ok(inst.predict_all(set)?)
            })
            .collect::<Result<_, MetricError>>()?;
        Ok(LabelMatrix {
            seeds: seeds.to_vec(),
            columns,
            rows: set.len(),
        })
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn installations(&self) -> usize {
        self.columns.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Robustness over the first `n` columns: the fraction of inputs whose
    /// row shows at least max(1, ⌊q·n⌋) labels different from the ground
    /// truth. The max(1, ·) guard keeps the metric meaningful when ⌊q·n⌋
    /// would be 0, where a literal reading would count every input as
    /// fooling the fleet vacuously.
    pub fn robustness_prefix(
        &self,
        truths: &[ClassLabel],
        q: f64,
        n: usize,
    ) -> Result<f64, MetricError> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(MetricError::InvalidLevel(q));
        }
        if n == 0 || n > self.columns.len() {
            return Err(MetricError::MatrixTooNarrow {
                have: self.columns.len(),
                need: n,
            });
        }
        if truths.len() != self.rows {
            return Err(MetricError::LengthMismatch {
                labels: truths.len(),
                set: self.rows,
            });
        }
        if self.rows == 0 {
            return Err(MetricError::EmptySet("adversarial"));
        }
        let threshold = qn_floor(q, n).max(1);
        let mut fooled = 0usize;
        for (i, truth) in truths.iter().enumerate() {
            let misclassified = self.columns[..n]
                .iter()
                .filter(|column| column[i] != *truth)
                .count();
            if misclassified >= threshold {
                fooled += 1;
            }
        }
        Ok(fooled as f64 / self.rows as f64)
    }
}

fn has_duplicate_seeds(seeds: &[u64]) -> bool {
    let unique: std::collections::BTreeSet<u64> = seeds.iter().copied().collect();
    unique.len() != seeds.len()
}

/// ⌊q·n⌋, robust to the one-ULP representation error of short decimal
/// levels like 0.99: when q·n is within 1e-9 of an integer, that integer is
/// the intended exact product and is used directly.
fn qn_floor(q: f64, n: usize) -> usize {
    let product = q * n as f64;
    let rounded = product.round();
    if (product - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        product.floor() as usize
    }
}

/// Robustness of a fleet of `seeds.len()` installations at level `q`.
pub fn robustness(
    config: &DefenseConfig,
    base: &Network,
    adversarial: &LabeledSet,
    q: f64,
    seeds: &[u64],
) -> Result<f64, MetricError> {
    let matrix = LabelMatrix::build(config, base, adversarial, seeds)?;
    matrix.robustness_prefix(&adversarial.labels(), q, seeds.len())
}

/// Which per-installation accuracy [`estimate_metric`] averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccuracyKind {
    Efficacy,
    Quality,
}

/// A seed-averaged metric estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub repetitions: usize,
    pub seed_hash: String,
}

/// Mean of one independent seeded evaluation per entry of `seeds`.
/// Evaluations run concurrently; the mean sums the values in ascending
/// order, so the result is invariant under permutation of the seed list.
pub fn estimate_metric(
    kind: AccuracyKind,
    config: &DefenseConfig,
    base: &Network,
    data: &LabeledSet,
    seeds: &[u64],
) -> Result<Estimate, MetricError> {
    if seeds.is_empty() {
        return Err(MetricError::NoInstallations);
    }
    let mut values: Vec<f64> = seeds
        .par_iter()
        .map(|&seed| {
            let mut inst = install(config, base, seed)?;
            match kind {
                AccuracyKind::Efficacy => efficacy(&mut inst, data),
                AccuracyKind::Quality => quality(&mut inst, data),
            }
        })
        .collect::<Result<_, MetricError>>()?;
    values.sort_by(f64::total_cmp);
    Ok(Estimate {
        value: values.iter().sum::<f64>() / values.len() as f64,
        repetitions: seeds.len(),
        seed_hash: seed_list_hash(seeds),
    })
}
