//! Adversarial-example generation: six gradient-based untargeted attacks
//! against an undefended [`Network`], each behind the common [`Attack`]
//! trait and registered by name in [`AttackRegistry`].
//!
//! | name       | method                                              |
//! |------------|-----------------------------------------------------|
//! | `fgsm`     | fast gradient sign, swept over an ε ladder          |
//! | `bim`      | basic iterative method, ℓ∞ ball projection          |
//! | `deepfool` | iterative minimal-perturbation linearization        |
//! | `jsma`     | greedy saliency-pair perturbation                   |
//! | `lbfgs`    | box-constrained penalty minimization with c-search  |
//! | `cw`       | Carlini–Wagner ℓ2, tanh reparametrization           |
//!
//! Every attack treats success as "the undefended network assigns any label
//! other than the ground truth" and re-verifies that claim (plus domain-box
//! containment) before reporting it. All six methods are deterministic, so
//! adversarial-set generation is bit-reproducible without any seed input.

mod bim;
mod cw;
mod deepfool;
mod fgsm;
mod jsma;
mod lbfgs;

pub use bim::{bim_linf, BimAttack, BimParams};
pub use cw::{cw_l2, CwAttack, CwParams};
pub use deepfool::{deepfool, DeepfoolAttack, DeepfoolParams};
pub use fgsm::{fgsm_step, FgsmAttack, FgsmParams};
pub use jsma::{jsma, JsmaAttack, JsmaParams};
pub use lbfgs::{lbfgs_attack, LbfgsAttack, LbfgsAttackParams};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use std::collections::BTreeMap;

use crate::data::{Bounds, LabeledSet};
use crate::error::AttackError;
use crate::net::{Network, Prediction};
use crate::ClassLabel;

/// One successfully generated adversarial example.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialRecord {
    /// Index of the benign twin within the curated set the attack ran on.
    pub input_id: usize,
    pub vector: Vec<f64>,
    /// Ground-truth label of the benign twin.
    pub true_label: ClassLabel,
    /// Iterations the attack spent on this input.
    pub iterations: usize,
    /// Euclidean distance to the benign twin.
    pub l2: f64,
    /// Max-norm distance to the benign twin.
    pub linf: f64,
}

/// All successful adversarial examples one method produced on a curated set.
/// Failed generations are omitted from the records but counted, so success
/// rates are `records.len() / attempted`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialSet {
    pub method: String,
    pub dim: usize,
    /// How many benign inputs the attack was attempted on.
    pub attempted: usize,
    pub records: Vec<AdversarialRecord>,
}

impl AdversarialSet {
    /// The records as a labeled set carrying the benign ground truths, for
    /// the efficacy and robustness metrics.
    pub fn to_labeled_set(&self) -> LabeledSet {
        let mut set = LabeledSet::empty(self.dim);
        for rec in &self.records {
            set.push(rec.vector.clone(), rec.true_label);
        }
        set
    }

    /// Indices of the benign inputs this method succeeded on; quality is
    /// measured on exactly this subset of the curated set.
    pub fn benign_indices(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.input_id).collect()
    }

    pub fn success_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.records.len() as f64 / self.attempted as f64
        }
    }

    /// Median ℓ2 distortion of the successful records (None when empty).
    pub fn median_l2(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let mut values: Vec<f64> = self.records.iter().map(|r| r.l2).collect();
        values.sort_by(f64::total_cmp);
        let mid = values.len() / 2;
        Some(if values.len() % 2 == 1 {
            values[mid]
        } else {
            0.5 * (values[mid - 1] + values[mid])
        })
    }
}

/// Result of running one attack on one input.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub success: bool,
    /// The adversarial vector, present iff `success`.
    pub adversarial: Option<Vec<f64>>,
    pub iterations: usize,
    /// ℓ2 distance to the benign input (0 on failure).
    pub l2: f64,
    /// ℓ∞ distance to the benign input (0 on failure).
    pub linf: f64,
}

impl AttackOutcome {
    pub fn failure(iterations: usize) -> Self {
        AttackOutcome {
            success: false,
            adversarial: None,
            iterations,
            l2: 0.0,
            linf: 0.0,
        }
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Sign with `sign(0) = 0`, so a zero gradient moves nothing.
#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Checks the shared precondition: the undefended network classifies `x` as
/// `label`. Returns the prediction for reuse.
pub(crate) fn check_precondition(
    net: &Network,
    x: &[f64],
    label: ClassLabel,
) -> Result<Prediction, AttackError> {
    let pred = net.forward(x)?;
    if pred.label != label {
        return Err(AttackError::Precondition(format!(
            "input is not classified as its label {label} (network says {})",
            pred.label
        )));
    }
    Ok(pred)
}

/// Final gate every attack passes its candidate through: success is claimed
/// only if the candidate is inside the domain box and the undefended network
/// misclassifies it, checked here independently of the attack's own state.
pub(crate) fn verified_outcome(
    net: &Network,
    x: &[f64],
    candidate: Vec<f64>,
    true_label: ClassLabel,
    iterations: usize,
    bounds: Bounds,
) -> Result<AttackOutcome, AttackError> {
    if !bounds.contains(&candidate) {
        return Ok(AttackOutcome::failure(iterations));
    }
    let label = net.forward(&candidate)?.label;
    if label == true_label {
        return Ok(AttackOutcome::failure(iterations));
    }
    let l2 = l2_distance(x, &candidate);
    let linf = linf_distance(x, &candidate);
    Ok(AttackOutcome {
        success: true,
        adversarial: Some(candidate),
        iterations,
        l2,
        linf,
    })
}

/// The class with the highest logit other than `exclude`, ties toward the
/// lowest index. This is the "runner-up" the untargeted reductions aim at.
pub(crate) fn runner_up(logits: &[f64], exclude: ClassLabel) -> ClassLabel {
    let mut best: Option<usize> = None;
    for (i, v) in logits.iter().enumerate() {
        if i + 1 == exclude {
            continue;
        }
        match best {
            Some(b) if logits[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best.expect("at least two classes") + 1
}

/// An adversarial-example generation method. Implementations must be pure
/// functions of (network, input, label) so generation is reproducible.
pub trait Attack: Send + Sync {
    /// Registry name (`fgsm`, `bim`, `deepfool`, `jsma`, `lbfgs`, `cw`).
    fn name(&self) -> &'static str;
    /// Attacks one input the network currently classifies as `label`.
    fn run(&self, net: &Network, x: &[f64], label: ClassLabel)
        -> Result<AttackOutcome, AttackError>;
}

type AttackFactory =
    Box<dyn Fn(&toml::Table, Bounds) -> Result<Box<dyn Attack>, AttackError> + Send + Sync>;

/// Name-indexed set of attack methods. Factories receive the method's
/// parameter table (defaults fill anything omitted) and the domain bounds,
/// since several defaults are expressed relative to the input range.
pub struct AttackRegistry {
    factories: BTreeMap<&'static str, AttackFactory>,
}

fn parse_params<P: DeserializeOwned>(name: &str, table: &toml::Table) -> Result<P, AttackError> {
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e| AttackError::Config(format!("invalid parameters for attack '{name}': {e}")))
}

impl AttackRegistry {
    pub fn empty() -> Self {
        AttackRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registry with the six built-in methods.
    pub fn builtin() -> Self {
        let mut reg = AttackRegistry::empty();
        reg.register("fgsm", |t, b| {
            Ok(Box::new(FgsmAttack::new(parse_params::<FgsmParams>("fgsm", t)?, b)?))
        });
        reg.register("bim", |t, b| {
            Ok(Box::new(BimAttack::new(parse_params::<BimParams>("bim", t)?, b)?))
        });
        reg.register("deepfool", |t, b| {
            Ok(Box::new(DeepfoolAttack::new(
                parse_params::<DeepfoolParams>("deepfool", t)?,
                b,
            )?))
        });
        reg.register("jsma", |t, b| {
            Ok(Box::new(JsmaAttack::new(parse_params::<JsmaParams>("jsma", t)?, b)?))
        });
        reg.register("lbfgs", |t, b| {
            Ok(Box::new(LbfgsAttack::new(
                parse_params::<LbfgsAttackParams>("lbfgs", t)?,
                b,
            )?))
        });
        reg.register("cw", |t, b| {
            Ok(Box::new(CwAttack::new(parse_params::<CwParams>("cw", t)?, b)?))
        });
        reg
    }

    pub fn register(
        &mut self,
        name: &'static str,
        factory: impl Fn(&toml::Table, Bounds) -> Result<Box<dyn Attack>, AttackError>
            + Send
            + Sync
            + 'static,
    ) {
        self.factories.insert(name, Box::new(factory));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    /// Builds the named attack from its parameter table and the domain
    /// bounds the adversarial examples must stay within.
    pub fn create(
        &self,
        name: &str,
        params: &toml::Table,
        bounds: Bounds,
    ) -> Result<Box<dyn Attack>, AttackError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| AttackError::Config(format!("unknown attack method '{name}'")))?;
        factory(params, bounds)
    }

    /// The named attack with all-default parameters.
    pub fn create_default(
        &self,
        name: &str,
        bounds: Bounds,
    ) -> Result<Box<dyn Attack>, AttackError> {
        self.create(name, &toml::Table::new(), bounds)
    }
}

/// Runs `attack` against every pair of the curated set and keeps the
/// successes, each paired with its benign twin's ground-truth label.
/// Inputs are attacked concurrently; the record order follows the set
/// order, so the result is deterministic.
pub fn generate_adversarial_set(
    net: &Network,
    data: &LabeledSet,
    attack: &dyn Attack,
) -> Result<AdversarialSet, AttackError> {
    let outcomes: Vec<Option<AdversarialRecord>> = data
        .iter()
        .enumerate()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|(input_id, (x, label))| {
            let outcome = attack.run(net, x, *label)?;
            Ok(outcome.adversarial.map(|vector| AdversarialRecord {
                input_id: *input_id,
                vector,
                true_label: *label,
                iterations: outcome.iterations,
                l2: outcome.l2,
                linf: outcome.linf,
            }))
        })
        .collect::<Result<_, AttackError>>()?;
    Ok(AdversarialSet {
        method: attack.name().to_string(),
        dim: data.dim(),
        attempted: data.len(),
        records: outcomes.into_iter().flatten().collect(),
    })
}
