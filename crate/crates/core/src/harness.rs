//! Experiment orchestration: parameter-grid construction, dataset curation,
//! quality/efficacy sweeps across defense grids and attacks, selection of
//! defense settings under a quality floor, and the multi-installation
//! robustness experiment.
//!
//! Every operation here is a pure function of its inputs and the plan's
//! master seed; grid cells are evaluated concurrently but aggregated in a
//! fixed order, so re-runs are byte-identical.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::attacks::{generate_adversarial_set, AdversarialSet, AttackRegistry};
use crate::data::{Bounds, DatasetSpec, LabeledSet};
use crate::defenses::{Combine, DefenseConfig};
use crate::error::HarnessError;
use crate::metrics::{
    estimate_metric, seed_list_hash, AccuracyKind, LabelMatrix, MetricKind, MetricReport,
};
use crate::net::{train_classifier, Network, TrainConfig, TrainOutcome};
use crate::seeds;

/// How grid values are spaced between the endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpacing {
    Linear,
    Geometric,
}

/// An evenly spaced sweep range, inclusive of both endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterGrid {
    pub spacing: GridSpacing,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Expands a grid description into its values. Endpoints are assigned
/// directly rather than recomputed, so `out[0]` and `out[count-1]` equal the
/// bounds bit-exactly.
pub fn build_grid(grid: &ParameterGrid) -> Result<Vec<f64>, HarnessError> {
    if !(grid.lower.is_finite() && grid.upper.is_finite()) {
        return Err(HarnessError::Config("grid bounds must be finite".into()));
    }
    if grid.lower >= grid.upper {
        return Err(HarnessError::Config(format!(
            "grid lower bound {} must be below upper bound {}",
            grid.lower, grid.upper
        )));
    }
    if grid.count < 2 {
        return Err(HarnessError::Config(format!(
            "a grid including both endpoints needs at least 2 values, got {}",
            grid.count
        )));
    }
    if grid.spacing == GridSpacing::Geometric && grid.lower <= 0.0 {
        return Err(HarnessError::Config(format!(
            "geometric spacing requires a positive lower bound, got {}",
            grid.lower
        )));
    }
    let steps = (grid.count - 1) as f64;
    let values = (0..grid.count)
        .map(|i| {
            if i == 0 {
                return grid.lower;
            }
            if i == grid.count - 1 {
                return grid.upper;
            }
            let t = i as f64 / steps;
            match grid.spacing {
                GridSpacing::Linear => grid.lower + t * (grid.upper - grid.lower),
                GridSpacing::Geometric => {
                    (grid.lower.ln() + t * (grid.upper.ln() - grid.lower.ln())).exp()
                }
            }
        })
        .collect();
    Ok(values)
}

/// A curated benign set together with how much curation discarded.
#[derive(Clone, Debug)]
pub struct Curation {
    pub retained: LabeledSet,
    /// Size of the raw set before discarding.
    pub total: usize,
}

impl Curation {
    pub fn discarded(&self) -> usize {
        self.total - self.retained.len()
    }
}

/// Keeps exactly the pairs the network classifies correctly, so that any
/// later accuracy loss is attributable to the defense, not the base model.
pub fn curate_dataset(net: &Network, raw: &LabeledSet) -> Result<Curation, HarnessError> {
    if raw.is_empty() {
        return Err(HarnessError::Config("raw dataset is empty".into()));
    }
    let mut retained = LabeledSet::empty(raw.dim());
    for (x, label) in raw.iter() {
        if net.classify(x)? == *label {
            retained.push(x.clone(), *label);
        }
    }
    if retained.is_empty() {
        return Err(HarnessError::EmptyCuration { total: raw.len() });
    }
    Ok(Curation {
        retained,
        total: raw.len(),
    })
}

/// One defense mechanism's sweep range.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefenseGridSpec {
    L1 {
        grid: ParameterGrid,
    },
    Lstar {
        grid: ParameterGrid,
    },
    Lplus {
        grid: ParameterGrid,
    },
    Rpenn {
        lambda_grid: ParameterGrid,
        m_values: Vec<usize>,
        #[serde(default)]
        combine: Combine,
    },
}

impl DefenseGridSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DefenseGridSpec::L1 { .. } => "l1",
            DefenseGridSpec::Lstar { .. } => "lstar",
            DefenseGridSpec::Lplus { .. } => "lplus",
            DefenseGridSpec::Rpenn { .. } => "rpenn",
        }
    }

    /// All grid points of this defense, as installable configurations.
    pub fn expand(&self) -> Result<Vec<DefenseConfig>, HarnessError> {
        let configs = match self {
            DefenseGridSpec::L1 { grid } => {
                build_grid(grid)?.into_iter().map(DefenseConfig::l1).collect()
            }
            DefenseGridSpec::Lstar { grid } => build_grid(grid)?
                .into_iter()
                .map(DefenseConfig::lstar)
                .collect(),
            DefenseGridSpec::Lplus { grid } => build_grid(grid)?
                .into_iter()
                .map(DefenseConfig::lplus)
                .collect(),
            DefenseGridSpec::Rpenn {
                lambda_grid,
                m_values,
                combine,
            } => {
                if m_values.is_empty() {
                    return Err(HarnessError::Config(
                        "rpenn sweep needs at least one ensemble size".into(),
                    ));
                }
                let lambdas = build_grid(lambda_grid)?;
                let mut configs = Vec::with_capacity(lambdas.len() * m_values.len());
                for &m in m_values {
                    for &lambda in &lambdas {
                        configs.push(DefenseConfig::rpenn(lambda, m, *combine));
                    }
                }
                configs
            }
        };
        for cfg in &configs {
            cfg.validate()?;
        }
        Ok(configs)
    }
}

/// Base-classifier training settings; the seed comes from the master seed.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
}

/// Fleet size and levels for the robustness experiment.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessPlan {
    pub q_levels: Vec<f64>,
    pub n: usize,
}

/// Quality floors the selection step must guarantee.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionPlan {
    pub quality_floors: Vec<f64>,
}

/// File names the pipeline stages exchange artifacts under.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactIds {
    pub raw: String,
    pub network: String,
    pub curated: String,
    /// Adversarial sets are stored as `<prefix>_<attack>.padv`.
    pub adversarial_prefix: String,
}

impl Default for ArtifactIds {
    fn default() -> Self {
        ArtifactIds {
            raw: "raw.plset".into(),
            network: "base.pnet".into(),
            curated: "curated.plset".into(),
            adversarial_prefix: "adv".into(),
        }
    }
}

impl ArtifactIds {
    pub fn adversarial(&self, attack: &str) -> String {
        format!("{}_{attack}.padv", self.adversarial_prefix)
    }
}

/// The whole experiment, as read from a declarative config file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub master_seed: u64,
    pub dataset: DatasetSpec,
    /// Domain bounds for file-backed datasets; synthetic kinds carry their
    /// own and must agree when both are given.
    pub bounds: Option<Bounds>,
    pub train: TrainPlan,
    /// Attack name → parameter table (empty table = defaults).
    pub attacks: BTreeMap<String, toml::Table>,
    pub defenses: Vec<DefenseGridSpec>,
    pub robustness: RobustnessPlan,
    pub selection: SelectionPlan,
    #[serde(default)]
    pub artifacts: ArtifactIds,
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let plan: ExperimentPlan =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.attacks.is_empty() {
            return Err(HarnessError::Config("no attacks configured".into()));
        }
        if self.defenses.is_empty() {
            return Err(HarnessError::Config("no defenses configured".into()));
        }
        let mut kinds = std::collections::BTreeSet::new();
        for spec in &self.defenses {
            if !kinds.insert(spec.kind_name()) {
                return Err(HarnessError::Config(format!(
                    "defense '{}' is configured twice",
                    spec.kind_name()
                )));
            }
        }
        if self.robustness.n == 0 {
            return Err(HarnessError::Config("fleet size must be at least 1".into()));
        }
        if self.robustness.q_levels.is_empty() {
            return Err(HarnessError::Config("no robustness levels configured".into()));
        }
        for &q in &self.robustness.q_levels {
            if !(q > 0.0 && q <= 1.0) {
                return Err(HarnessError::Config(format!(
                    "robustness level {q} is outside (0, 1]"
                )));
            }
        }
        for &floor in &self.selection.quality_floors {
            if !(floor > 0.0 && floor < 1.0) {
                return Err(HarnessError::Config(format!(
                    "quality floor {floor} is outside (0, 1)"
                )));
            }
        }
        self.domain_bounds()?;
        Ok(())
    }

    /// The box attacks project into: the dataset's own bounds for synthetic
    /// kinds, the explicit `bounds` field for file-backed sets.
    pub fn domain_bounds(&self) -> Result<Bounds, HarnessError> {
        let dataset_bounds = match &self.dataset {
            DatasetSpec::SyntheticBlobs { bounds, .. }
            | DatasetSpec::SyntheticRings { bounds, .. } => Some(*bounds),
            DatasetSpec::File { .. } => None,
        };
        match (dataset_bounds, self.bounds) {
            (Some(a), Some(b)) if a != b => Err(HarnessError::Config(format!(
                "dataset bounds [{}, {}] disagree with plan bounds [{}, {}]",
                a.lower, a.upper, b.lower, b.upper
            ))),
            (Some(a), _) => Ok(a),
            (None, Some(b)) => Ok(b),
            (None, None) => Err(HarnessError::Config(
                "file-backed datasets need explicit domain bounds".into(),
            )),
        }
    }

    /// Trains the base classifier with a seed derived from the master seed.
    pub fn train_base(&self, data: &LabeledSet) -> Result<TrainOutcome, HarnessError> {
        let cfg = TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            seed: seeds::derive(self.master_seed, &["train"]),
        };
        Ok(train_classifier(data, &self.train.hidden, data.max_label(), &cfg)?)
    }

    /// Runs every configured attack against the curated set.
    pub fn generate_adversarial(
        &self,
        base: &Network,
        curated: &LabeledSet,
    ) -> Result<BTreeMap<String, AdversarialSet>, HarnessError> {
        let registry = AttackRegistry::builtin();
        let bounds = self.domain_bounds()?;
        let mut sets = BTreeMap::new();
        for (name, params) in &self.attacks {
            let attack = registry.create(name, params, bounds)?;
            let set = generate_adversarial_set(base, curated, attack.as_ref())?;
            sets.insert(name.clone(), set);
        }
        Ok(sets)
    }
}

/// Artifacts a sweep or robustness run reads.
pub struct SweepInputs<'a> {
    pub base: &'a Network,
    pub curated: &'a LabeledSet,
    /// Adversarial sets keyed by attack name.
    pub adversarial: &'a BTreeMap<String, AdversarialSet>,
}

/// A stable token distinguishing grid points in seed-derivation paths.
fn coordinate_token(cfg: &DefenseConfig) -> String {
    match cfg {
        DefenseConfig::Rpenn { lambda, m, .. } => format!("{lambda:?}:{m}"),
        _ => format!("{:?}", cfg.noise_parameter()),
    }
}

/// Seeds for the repeated estimates at one (defense, attack, grid) cell.
/// Public so a reported sweep value can be re-measured from its recorded
/// coordinates.
pub fn estimate_seeds(master: u64, cfg: &DefenseConfig, attack: &str) -> Vec<u64> {
    let coord = coordinate_token(cfg);
    let path = ["estimate", cfg.kind_name(), attack, coord.as_str()];
    (0..cfg.default_repetitions())
        .map(|k| seeds::derive_indexed(master, &path, k))
        .collect()
}

/// Estimates efficacy on each attack's adversarial set and quality on the
/// matching benign subset (inputs whose attack failed are omitted from it),
/// for every (defense, attack, grid point) combination.
pub fn sweep(
    plan: &ExperimentPlan,
    inputs: &SweepInputs,
) -> Result<Vec<MetricReport>, HarnessError> {
    let mut reports = Vec::new();
    for spec in &plan.defenses {
        let configs = spec.expand()?;
        for attack in plan.attacks.keys() {
            let adv = inputs
                .adversarial
                .get(attack)
                .ok_or_else(|| HarnessError::MissingAdversarialSet(attack.clone()))?;
            let adv_examples = adv.to_labeled_set();
            let benign = inputs.curated.select(&adv.benign_indices());
            for cfg in &configs {
                let cell_seeds = estimate_seeds(plan.master_seed, cfg, attack);
                let eff = estimate_metric(
                    AccuracyKind::Efficacy,
                    cfg,
                    inputs.base,
                    &adv_examples,
                    &cell_seeds,
                )?;
                let qual = estimate_metric(
                    AccuracyKind::Quality,
                    cfg,
                    inputs.base,
                    &benign,
                    &cell_seeds,
                )?;
                for (kind, est) in [(MetricKind::Efficacy, eff), (MetricKind::Quality, qual)] {
                    reports.push(MetricReport {
                        kind,
                        value: est.value,
                        defense: cfg.clone(),
                        attack: attack.clone(),
                        n: None,
                        q: None,
                        repetitions: est.repetitions,
                        seed_hash: est.seed_hash,
                    });
                }
            }
        }
    }
    Ok(reports)
}

/// A per-defense winner of [`select_settings`].
#[derive(Clone, Debug, PartialEq)]
pub struct SelectedSetting {
    pub defense: DefenseConfig,
    pub quality_floor: f64,
    /// Minimum quality across all attacks' benign subsets at this point.
    pub worst_quality: f64,
    /// Minimum efficacy across all attacks at this point.
    pub worst_efficacy: f64,
}

struct PointAggregate {
    config: DefenseConfig,
    worst_quality: f64,
    worst_efficacy: f64,
    quality_rows: usize,
    efficacy_rows: usize,
}

/// For each defense, among grid points whose worst-case quality across all
/// attacks exceeds the floor, picks the one maximizing worst-case efficacy.
/// Ties go to the smaller noise parameter, then the smaller ensemble.
pub fn select_settings(
    reports: &[MetricReport],
    quality_floor: f64,
) -> Result<Vec<SelectedSetting>, HarnessError> {
    // defense kind → grid point (ordered by noise, then ensemble size) →
    // worst-case aggregates. Positive finite floats order by their bits.
    let mut table: BTreeMap<&'static str, BTreeMap<(u64, usize), PointAggregate>> =
        BTreeMap::new();
    for report in reports {
        if report.n.is_some() {
            continue; // robustness rows are not sweep cells
        }
        let m = match &report.defense {
            DefenseConfig::Rpenn { m, .. } => *m,
            _ => 0,
        };
        let key = (report.defense.noise_parameter().to_bits(), m);
        let entry = table
            .entry(report.defense.kind_name())
            .or_default()
            .entry(key)
            .or_insert_with(|| PointAggregate {
                config: report.defense.clone(),
                worst_quality: f64::INFINITY,
                worst_efficacy: f64::INFINITY,
                quality_rows: 0,
                efficacy_rows: 0,
            });
        match report.kind {
            MetricKind::Quality => {
                entry.worst_quality = entry.worst_quality.min(report.value);
                entry.quality_rows += 1;
            }
            MetricKind::Efficacy => {
                entry.worst_efficacy = entry.worst_efficacy.min(report.value);
                entry.efficacy_rows += 1;
            }
            MetricKind::Robustness => {}
        }
    }
    let mut selected = Vec::new();
    for (kind, points) in &table {
        let mut best: Option<&PointAggregate> = None;
        for point in points.values() {
            if point.quality_rows == 0 || point.efficacy_rows == 0 {
                return Err(HarnessError::Config(format!(
                    "sweep reports for defense '{kind}' are missing a metric at {}",
                    point.config.describe()
                )));
            }
            if point.worst_quality <= quality_floor {
                continue;
            }
            if best.is_none_or(|b| point.worst_efficacy > b.worst_efficacy) {
                best = Some(point);
            }
        }
        let Some(point) = best else {
            return Err(HarnessError::Selection {
                defense: kind.to_string(),
                floor: quality_floor,
            });
        };
        selected.push(SelectedSetting {
            defense: point.config.clone(),
            quality_floor,
            worst_quality: point.worst_quality,
            worst_efficacy: point.worst_efficacy,
        });
    }
    Ok(selected)
}

/// Fleet sizes the robustness experiment reports: powers of two up to `n`,
/// plus `n` itself.
pub fn fleet_sizes(n: usize) -> Vec<usize> {
    if n == 1 {
        return vec![1];
    }
    let mut sizes = Vec::new();
    let mut size = 2usize;
    while size < n {
        sizes.push(size);
        size *= 2;
    }
    sizes.push(n);
    sizes
}

/// Measures robustness for each chosen defense configuration against every
/// attack's adversarial set, across the plan's q levels and a doubling
/// ladder of fleet sizes. Each (defense, attack) pair classifies with its
/// full fleet once; smaller fleets reuse prefixes of the same label matrix.
pub fn robustness_experiment(
    plan: &ExperimentPlan,
    chosen: &[DefenseConfig],
    inputs: &SweepInputs,
) -> Result<Vec<MetricReport>, HarnessError> {
    let sizes = fleet_sizes(plan.robustness.n);
    let mut reports = Vec::new();
    for cfg in chosen {
        let coord = coordinate_token(cfg);
        for attack in plan.attacks.keys() {
            let adv = inputs
                .adversarial
                .get(attack)
                .ok_or_else(|| HarnessError::MissingAdversarialSet(attack.clone()))?;
            let adv_examples = adv.to_labeled_set();
            let truths = adv_examples.labels();
            let path = ["robustness", cfg.kind_name(), attack.as_str(), coord.as_str()];
            let install_seeds: Vec<u64> = (0..plan.robustness.n)
                .map(|i| seeds::derive_indexed(plan.master_seed, &path, i))
                .collect();
            let matrix = LabelMatrix::build(cfg, inputs.base, &adv_examples, &install_seeds)?;
            for &q in &plan.robustness.q_levels {
                for &size in &sizes {
                    let value = matrix.robustness_prefix(&truths, q, size)?;
                    reports.push(MetricReport {
                        kind: MetricKind::Robustness,
                        value,
                        defense: cfg.clone(),
                        attack: attack.clone(),
                        n: Some(size),
                        q: Some(q),
                        repetitions: size,
                        seed_hash: seed_list_hash(&install_seeds[..size]),
                    });
                }
            }
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;
    use crate::net::{Activation, Layer, Matrix};

    fn linear_grid(lower: f64, upper: f64, count: usize) -> ParameterGrid {
        ParameterGrid {
            spacing: GridSpacing::Linear,
            lower,
            upper,
            count,
        }
    }

    #[test]
    fn linear_grid_hits_both_endpoints_bit_exactly() {
        let values = build_grid(&linear_grid(0.01, 10.0, 50)).unwrap();
        assert_eq!(values.len(), 50);
        assert_eq!(values[0].to_bits(), 0.01f64.to_bits());
        assert_eq!(values[49].to_bits(), 10.0f64.to_bits());
        let step = values[1] - values[0];
        for pair in values.windows(2) {
            assert!((pair[1] - pair[0] - step).abs() < 1e-9);
        }
    }

    #[test]
    fn geometric_grid_of_four_gives_powers_of_ten() {
        let values = build_grid(&ParameterGrid {
            spacing: GridSpacing::Geometric,
            lower: 1e-4,
            upper: 1e-1,
            count: 4,
        })
        .unwrap();
        assert_eq!(values[0].to_bits(), 1e-4f64.to_bits());
        assert_eq!(values[3].to_bits(), 1e-1f64.to_bits());
        assert!((values[1] - 1e-3).abs() / 1e-3 < 1e-12);
        assert!((values[2] - 1e-2).abs() / 1e-2 < 1e-12);
    }

    #[test]
    fn degenerate_grids_are_config_errors() {
        assert!(build_grid(&linear_grid(2.0, 1.0, 5)).is_err());
        assert!(build_grid(&linear_grid(0.0, 1.0, 1)).is_err());
        assert!(build_grid(&ParameterGrid {
            spacing: GridSpacing::Geometric,
            lower: 0.0,
            upper: 1.0,
            count: 5,
        })
        .is_err());
    }

    #[test]
    fn rpenn_spec_expands_the_lambda_and_ensemble_product() {
        let spec = DefenseGridSpec::Rpenn {
            lambda_grid: linear_grid(0.01, 0.49, 25),
            m_values: vec![1, 3, 7],
            combine: Combine::Majority,
        };
        let configs = spec.expand().unwrap();
        assert_eq!(configs.len(), 75);
        let lambdas: Vec<f64> = configs.iter().map(|c| c.noise_parameter()).collect();
        assert!((lambdas[1] - 0.03).abs() < 1e-12);
        assert!((lambdas[24] - 0.49).abs() < 1e-15);
    }

    /// Passes every input through unchanged, so argmax(x) is the label.
    fn identity_net(dim: usize) -> Network {
        Network {
            layers: vec![Layer {
                weights: Matrix::identity(dim),
                bias: vec![0.0; dim],
                activation: Activation::Identity,
            }],
        }
    }

    fn one_hot_set() -> LabeledSet {
        LabeledSet::from_pairs(
            3,
            vec![
                (vec![1.0, 0.0, 0.0], 1),
                (vec![0.0, 1.0, 0.0], 2),
                (vec![0.0, 0.0, 1.0], 3),
                (vec![0.9, 0.1, 0.0], 1),
            ],
        )
        .unwrap()
    }

    #[test]
    fn curation_keeps_correct_pairs_and_is_idempotent() {
        let net = identity_net(3);
        let mut raw = one_hot_set();
        raw.push(vec![1.0, 0.0, 0.0], 2); // misclassified on purpose
        let first = curate_dataset(&net, &raw).unwrap();
        assert_eq!(first.retained.len(), 4);
        assert_eq!(first.discarded(), 1);
        let second = curate_dataset(&net, &first.retained).unwrap();
        assert_eq!(second.retained.len(), first.retained.len());
        assert_eq!(second.discarded(), 0);
    }

    #[test]
    fn total_misclassification_is_an_empty_curation_error() {
        // Reversing the identity rows sends every one-hot to the wrong label.
        let net = Network {
            layers: vec![Layer {
                weights: Matrix::from_rows(vec![
                    vec![0.0, 0.0, 1.0],
                    vec![0.0, 1.0, 0.0],
                    vec![1.0, 0.0, 0.0],
                ]),
                bias: vec![0.0; 3],
                activation: Activation::Identity,
            }],
        };
        let raw = LabeledSet::from_pairs(
            3,
            vec![(vec![1.0, 0.0, 0.0], 1), (vec![0.0, 0.0, 1.0], 3)],
        )
        .unwrap();
        assert!(matches!(
            curate_dataset(&net, &raw),
            Err(HarnessError::EmptyCuration { total: 2 })
        ));
    }

    fn sweep_row(
        kind: MetricKind,
        value: f64,
        defense: DefenseConfig,
        attack: &str,
    ) -> MetricReport {
        MetricReport {
            kind,
            value,
            defense,
            attack: attack.into(),
            n: None,
            q: None,
            repetitions: 10,
            seed_hash: String::new(),
        }
    }

    fn planted_reports() -> Vec<MetricReport> {
        let mut rows = Vec::new();
        // (σ, per-attack quality, per-attack efficacy)
        let cells = [
            (1.0, [0.99, 0.95], [0.30, 0.50]),
            (2.0, [0.97, 0.92], [0.60, 0.40]),
            (3.0, [0.85, 0.99], [0.90, 0.90]),
        ];
        for (sigma, quals, effs) in cells {
            for (i, attack) in ["fgsm", "bim"].iter().enumerate() {
                let cfg = DefenseConfig::l1(sigma);
                rows.push(sweep_row(MetricKind::Quality, quals[i], cfg.clone(), attack));
                rows.push(sweep_row(MetricKind::Efficacy, effs[i], cfg, attack));
            }
        }
        rows
    }

    #[test]
    fn selection_maximizes_worst_case_efficacy_over_the_floor() {
        // Worst-case (q, e) per σ: 1.0 → (0.95, 0.30); 2.0 → (0.92, 0.40);
        // 3.0 → (0.85, 0.90). Floor 0.9 admits σ ∈ {1, 2}; σ=2 wins on e.
        let picked = select_settings(&planted_reports(), 0.9).unwrap();
        assert_eq!(picked.len(), 1);
        assert_eq!(picked[0].defense.noise_parameter(), 2.0);
        assert!((picked[0].worst_quality - 0.92).abs() < 1e-15);
        assert!((picked[0].worst_efficacy - 0.40).abs() < 1e-15);
        // Floor 0.94 only admits σ=1.
        let picked = select_settings(&planted_reports(), 0.94).unwrap();
        assert_eq!(picked[0].defense.noise_parameter(), 1.0);
        // Floor 0.96 admits nothing.
        match select_settings(&planted_reports(), 0.96) {
            Err(HarnessError::Selection { defense, floor }) => {
                assert_eq!(defense, "l1");
                assert_eq!(floor, 0.96);
            }
            other => panic!("expected a selection error, got {other:?}"),
        }
    }

    #[test]
    fn efficacy_ties_break_toward_smaller_noise() {
        let mut rows = Vec::new();
        for sigma in [1.0, 2.0] {
            let cfg = DefenseConfig::l1(sigma);
            rows.push(sweep_row(MetricKind::Quality, 0.99, cfg.clone(), "fgsm"));
            rows.push(sweep_row(MetricKind::Efficacy, 0.5, cfg, "fgsm"));
        }
        let picked = select_settings(&rows, 0.9).unwrap();
        assert_eq!(picked[0].defense.noise_parameter(), 1.0);
    }

    #[test]
    fn fleet_size_ladder_doubles_and_ends_at_n() {
        assert_eq!(fleet_sizes(128), vec![2, 4, 8, 16, 32, 64, 128]);
        assert_eq!(fleet_sizes(12), vec![2, 4, 8, 12]);
        assert_eq!(fleet_sizes(2), vec![2]);
        assert_eq!(fleet_sizes(1), vec![1]);
    }

    const TINY_PLAN: &str = r#"
master_seed = 11

[dataset]
kind = "synthetic_blobs"
classes = 2
dim = 4
samples = 24
seed = 5
bounds = { lower = -4.0, upper = 4.0 }

[train]
hidden = [6]
learning_rate = 0.5
epochs = 150

[attacks.fgsm]

[[defenses]]
kind = "lplus"
grid = { spacing = "geometric", lower = 1e-4, upper = 1e-1, count = 2 }

[robustness]
q_levels = [0.5, 1.0]
n = 4

[selection]
quality_floors = [0.5]
"#;

    fn tiny_world() -> (
        ExperimentPlan,
        Network,
        LabeledSet,
        BTreeMap<String, AdversarialSet>,
    ) {
        let plan = ExperimentPlan::from_toml(TINY_PLAN).unwrap();
        let raw = generate(&plan.dataset).unwrap();
        let trained = plan.train_base(&raw).unwrap();
        let curation = curate_dataset(&trained.network, &raw).unwrap();
        let adversarial = plan
            .generate_adversarial(&trained.network, &curation.retained)
            .unwrap();
        (plan, trained.network, curation.retained, adversarial)
    }

    #[test]
    fn sweep_report_count_is_attacks_times_grid_times_two() {
        let (plan, base, curated, adversarial) = tiny_world();
        assert!(adversarial["fgsm"].records.len() > 0, "fgsm found nothing");
        let inputs = SweepInputs {
            base: &base,
            curated: &curated,
            adversarial: &adversarial,
        };
        let reports = sweep(&plan, &inputs).unwrap();
        assert_eq!(reports.len(), 1 * 2 * 2);
        // Determinism: a second run produces identical rows.
        let again = sweep(&plan, &inputs).unwrap();
        let rows: Vec<String> = reports.iter().map(|r| r.csv_row()).collect();
        let rows_again: Vec<String> = again.iter().map(|r| r.csv_row()).collect();
        assert_eq!(rows, rows_again);
    }

    #[test]
    fn deterministic_defense_has_a_flat_robustness_curve() {
        let (plan, base, curated, adversarial) = tiny_world();
        let inputs = SweepInputs {
            base: &base,
            curated: &curated,
            adversarial: &adversarial,
        };
        let chosen = [DefenseConfig::lplus(1e-4)];
        let reports = robustness_experiment(&plan, &chosen, &inputs).unwrap();
        // 2 q-levels × fleet sizes {2, 4}.
        assert_eq!(reports.len(), 4);
        for q in [0.5, 1.0] {
            let curve: Vec<f64> = reports
                .iter()
                .filter(|r| r.q == Some(q))
                .map(|r| r.value)
                .collect();
            assert_eq!(curve.len(), 2);
            assert_eq!(curve[0], curve[1], "curve not flat at q={q}");
        }
    }

    #[test]
    fn missing_adversarial_set_is_a_dependency_error() {
        let (plan, base, curated, _) = tiny_world();
        let empty = BTreeMap::new();
        let inputs = SweepInputs {
            base: &base,
            curated: &curated,
            adversarial: &empty,
        };
        assert!(matches!(
            sweep(&plan, &inputs),
            Err(HarnessError::MissingAdversarialSet(name)) if name == "fgsm"
        ));
    }

    #[test]
    fn plan_rejects_out_of_range_levels() {
        let bad = TINY_PLAN.replace("q_levels = [0.5, 1.0]", "q_levels = [0.5, 1.5]");
        assert!(matches!(
            ExperimentPlan::from_toml(&bad),
            Err(HarnessError::Config(_))
        ));
    }
}
