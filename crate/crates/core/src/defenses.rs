//! Randomized defense mechanisms: transformers from a base classifier to a
//! seeded, possibly randomized defended classifier.
//!
//! Four mechanisms are built in, all registered by name in
//! [`DefenseRegistry`]:
//!
//! * `l1` — adds fresh Gaussian noise 𝒩(0, σ²) to the input on every query.
//! * `lstar` — perturbs the weights once at installation time with
//!   𝒩(0, σ²) noise and additionally noises the input per query with the
//!   same σ (`l1` and `lplus` composed).
//! * `lplus` — perturbs the weights once at installation time only; each
//!   installation is deterministic afterwards.
//! * `rpenn` — materializes `m` network variations whose weights are drawn
//!   per-weight from 𝒩(w, (λ·w)²) (relative deviation) and combines their
//!   answers by majority vote or logit averaging.
//!
//! Installations are deterministic functions of (config, base network,
//! seed): the per-query noise streams and the one-time weight draws are both
//! derived from the installation seed, so equal triples give identical
//! input/output behavior forever.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::data::LabeledSet;
use crate::error::{DefenseError, NetError};
use crate::net::{argmax_label, Activation, Network, Prediction};
use crate::seeds;
use crate::ClassLabel;

/// Reference operating points reported for the original large-scale
/// evaluation (a VGG19 ImageNet classifier). They are recorded so configs
/// can cite them, but they are tuned to that setting and are not expected
/// to transfer numerically to the desk-scale classifiers in this crate.
pub mod reference {
    /// `l1` σ with worst-case quality above 0.99 / 0.98.
    pub const L1_SIGMA: [f64; 2] = [2.46, 4.09];
    /// `lstar` σ with worst-case quality above 0.99 / 0.98.
    pub const LSTAR_SIGMA: [f64; 2] = [4.71e-4, 8.29e-4];
    /// `lplus` σ with worst-case quality above 0.99 / 0.98.
    pub const LPLUS_SIGMA: [f64; 2] = [4.71e-4, 8.29e-4];
    /// Single-variation `rpenn` λ (m = 1) at the same two quality floors.
    pub const RPENN_M1_LAMBDA: [f64; 2] = [0.03, 0.05];
    /// Ensemble `rpenn` (λ, m) at the same two quality floors.
    pub const RPENN_SETTINGS: [(f64, usize); 2] = [(0.05, 7), (0.11, 63)];
}

fn default_true() -> bool {
    true
}

/// How an `rpenn` ensemble merges its variations' answers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    /// Most frequent label; ties go to the lowest class index.
    #[default]
    Majority,
    /// Argmax of the mean logits.
    Average,
}

/// Declarative description of one defended configuration.
///
/// `perturb_biases` controls whether bias terms count as weights for the
/// weight-perturbing mechanisms; it defaults to on, treating biases and
/// weights uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum DefenseConfig {
    #[serde(rename = "l1")]
    L1 { sigma: f64 },
    #[serde(rename = "lstar")]
    LStar {
        sigma: f64,
        #[serde(default = "default_true")]
        perturb_biases: bool,
    },
    #[serde(rename = "lplus")]
    LPlus {
        sigma: f64,
        #[serde(default = "default_true")]
        perturb_biases: bool,
    },
    #[serde(rename = "rpenn")]
    Rpenn {
        lambda: f64,
        m: usize,
        #[serde(default)]
        combine: Combine,
        #[serde(default = "default_true")]
        perturb_biases: bool,
    },
}

impl DefenseConfig {
    pub fn l1(sigma: f64) -> Self {
        DefenseConfig::L1 { sigma }
    }

    pub fn lstar(sigma: f64) -> Self {
        DefenseConfig::LStar {
            sigma,
            perturb_biases: true,
        }
    }

    pub fn lplus(sigma: f64) -> Self {
        DefenseConfig::LPlus {
            sigma,
            perturb_biases: true,
        }
    }

    pub fn rpenn(lambda: f64, m: usize, combine: Combine) -> Self {
        DefenseConfig::Rpenn {
            lambda,
            m,
            combine,
            perturb_biases: true,
        }
    }

    /// Registry name of the mechanism this config selects.
    pub fn kind_name(&self) -> &'static str {
        match self {
            DefenseConfig::L1 { .. } => "l1",
            DefenseConfig::LStar { .. } => "lstar",
            DefenseConfig::LPlus { .. } => "lplus",
            DefenseConfig::Rpenn { .. } => "rpenn",
        }
    }

    pub fn validate(&self) -> Result<(), DefenseError> {
        let check_positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(DefenseError::Config(format!(
                    "{name} must be a positive finite number, got {v}"
                )))
            }
        };
        match self {
            DefenseConfig::L1 { sigma }
            | DefenseConfig::LStar { sigma, .. }
            | DefenseConfig::LPlus { sigma, .. } => check_positive("sigma", *sigma),
            DefenseConfig::Rpenn { lambda, m, .. } => {
                check_positive("lambda", *lambda)?;
                if *m == 0 || *m % 2 == 0 {
                    return Err(DefenseError::Config(format!(
                        "ensemble size m must be odd and positive, got {m}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// The scalar noise magnitude (σ or λ) this config sweeps over.
    pub fn noise_parameter(&self) -> f64 {
        match self {
            DefenseConfig::L1 { sigma }
            | DefenseConfig::LStar { sigma, .. }
            | DefenseConfig::LPlus { sigma, .. } => *sigma,
            DefenseConfig::Rpenn { lambda, .. } => *lambda,
        }
    }

    /// Same mechanism and structure, with the noise magnitude replaced.
    pub fn with_noise_parameter(&self, value: f64) -> DefenseConfig {
        let mut cfg = self.clone();
        match &mut cfg {
            DefenseConfig::L1 { sigma }
            | DefenseConfig::LStar { sigma, .. }
            | DefenseConfig::LPlus { sigma, .. } => *sigma = value,
            DefenseConfig::Rpenn { lambda, .. } => *lambda = value,
        }
        cfg
    }

    /// Ensemble size: `m` for `rpenn`, 1 otherwise.
    pub fn ensemble_size(&self) -> usize {
        match self {
            DefenseConfig::Rpenn { m, .. } => *m,
            _ => 1,
        }
    }

    /// How many seeded repetitions metric estimation uses by default: 10,
    /// reduced to ⌈10/m⌉ for ensembles since one ensemble query already
    /// averages over m draws.
    pub fn default_repetitions(&self) -> usize {
        usize::max(1, 10usize.div_ceil(self.ensemble_size()))
    }

    /// Compact human-readable form, e.g. `rpenn(lambda=0.05, m=7, majority)`.
    pub fn describe(&self) -> String {
        match self {
            DefenseConfig::L1 { sigma } => format!("l1(sigma={sigma})"),
            DefenseConfig::LStar { sigma, .. } => format!("lstar(sigma={sigma})"),
            DefenseConfig::LPlus { sigma, .. } => format!("lplus(sigma={sigma})"),
            DefenseConfig::Rpenn {
                lambda, m, combine, ..
            } => format!(
                "rpenn(lambda={lambda}, m={m}, {})",
                match combine {
                    Combine::Majority => "majority",
                    Combine::Average => "average",
                }
            ),
        }
    }
}

/// The materialized, seeded state of one installed defense. Prediction may
/// consume the installation's random stream, so queries to one installation
/// are ordered (`&mut self`); distinct installations run fully concurrently.
pub trait InstalledState: Send {
    fn predict(&mut self, x: &[f64]) -> Result<Prediction, NetError>;
    /// The network(s) this installation evaluates per query.
    fn networks(&self) -> Vec<&Network>;
}

/// One seeded realization of a defended classifier.
pub struct Installation {
    config: DefenseConfig,
    seed: u64,
    state: Box<dyn InstalledState>,
}

impl Installation {
    pub fn config(&self) -> &DefenseConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Classifies `x` with the defended classifier. For majority-combined
    /// ensembles the returned logits are the vote histogram, so the
    /// argmax-with-lowest-index-tie-break invariant of [`Prediction`] holds
    /// for every mechanism.
    pub fn predict(&mut self, x: &[f64]) -> Result<Prediction, NetError> {
        self.state.predict(x)
    }

    /// Labels for every input of `set`, in set order.
    pub fn predict_all(&mut self, set: &LabeledSet) -> Result<Vec<ClassLabel>, NetError> {
        set.iter()
            .map(|(x, _)| Ok(self.predict(x)?.label))
            .collect()
    }

    /// The materialized network(s); for weight-perturbing mechanisms these
    /// are the perturbed copies.
    pub fn networks(&self) -> Vec<&Network> {
        self.state.networks()
    }
}

/// A defense mechanism: validates its configuration and materializes seeded
/// installations from a base network.
pub trait Defense: Send + Sync {
    /// Registry name (`l1`, `lstar`, `lplus`, `rpenn`).
    fn name(&self) -> &'static str;
    fn install(
        &self,
        base: &Network,
        config: &DefenseConfig,
        seed: u64,
    ) -> Result<Installation, DefenseError>;
}

/// Name-indexed set of defense mechanisms.
pub struct DefenseRegistry {
    mechanisms: BTreeMap<&'static str, Box<dyn Defense>>,
}

impl DefenseRegistry {
    pub fn empty() -> Self {
        DefenseRegistry {
            mechanisms: BTreeMap::new(),
        }
    }

    /// Registry with the four built-in mechanisms.
    pub fn builtin() -> Self {
        let mut reg = DefenseRegistry::empty();
        reg.register(Box::new(L1Defense));
        reg.register(Box::new(LStarDefense));
        reg.register(Box::new(LPlusDefense));
        reg.register(Box::new(RpennDefense));
        reg
    }

    pub fn register(&mut self, mechanism: Box<dyn Defense>) {
        self.mechanisms.insert(mechanism.name(), mechanism);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Defense, DefenseError> {
        self.mechanisms
            .get(name)
            .map(AsRef::as_ref)
            .ok_or_else(|| DefenseError::UnknownMechanism(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.mechanisms.keys().copied().collect()
    }

    /// Dispatches on the config's mechanism name and installs.
    pub fn install(
        &self,
        config: &DefenseConfig,
        base: &Network,
        seed: u64,
    ) -> Result<Installation, DefenseError> {
        self.get(config.kind_name())?.install(base, config, seed)
    }
}

/// Installs `config` on `base` using the built-in registry.
pub fn install(
    config: &DefenseConfig,
    base: &Network,
    seed: u64,
) -> Result<Installation, DefenseError> {
    DefenseRegistry::builtin().install(config, base, seed)
}

// Seed-stream derivation. The input-noise and weight-noise streams of one
// installation come from disjoint derivation paths of its seed, which makes
// the composition property hold by construction: `lstar` draws its weight
// perturbation exactly as `lplus` does and its input noise exactly as `l1`
// does under the same installation seed.
fn input_stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeds::derive(seed, &["input"]))
}

fn weight_stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeds::derive(seed, &["weights"]))
}

fn variation_stream(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeds::derive_indexed(seed, &["variation"], index))
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Adds 𝒩(0, σ²) noise to every weight (and bias when enabled), drawing in
/// a fixed order: per layer, weights row-major, then biases.
fn perturb_additive(net: &mut Network, sigma: f64, perturb_biases: bool, rng: &mut ChaCha8Rng) {
    for layer in &mut net.layers {
        for w in layer.weights.data.iter_mut() {
            *w += sigma * standard_normal(rng);
        }
        if perturb_biases {
            for b in layer.bias.iter_mut() {
                *b += sigma * standard_normal(rng);
            }
        }
    }
}

/// Redraws every weight from 𝒩(w, (λ·w)²). A zero weight has zero variance
/// and stays exactly zero.
fn perturb_relative(net: &mut Network, lambda: f64, perturb_biases: bool, rng: &mut ChaCha8Rng) {
    for layer in &mut net.layers {
        for w in layer.weights.data.iter_mut() {
            *w += lambda * *w * standard_normal(rng);
        }
        if perturb_biases {
            for b in layer.bias.iter_mut() {
                *b += lambda * *b * standard_normal(rng);
            }
        }
    }
}

/// Shared state for mechanisms that add per-query input noise (`l1` on the
/// base network, `lstar` on the weight-perturbed copy).
struct InputNoiseState {
    net: Network,
    sigma: f64,
    stream: ChaCha8Rng,
}

impl InstalledState for InputNoiseState {
    fn predict(&mut self, x: &[f64]) -> Result<Prediction, NetError> {
        if x.len() != self.net.input_dim() {
            return Err(NetError::ShapeMismatch {
                expected: self.net.input_dim(),
                got: x.len(),
            });
        }
        // Raw addition, no projection back into the data domain: clamping
        // would silently change the effective scale of sigma.
        let noised: Vec<f64> = x
            .iter()
            .map(|v| v + self.sigma * standard_normal(&mut self.stream))
            .collect();
        self.net.forward(&noised)
    }

    fn networks(&self) -> Vec<&Network> {
        vec![&self.net]
    }
}

/// State for `lplus`: the perturbed network alone, fully deterministic.
struct FrozenState {
    net: Network,
}

impl InstalledState for FrozenState {
    fn predict(&mut self, x: &[f64]) -> Result<Prediction, NetError> {
        self.net.forward(x)
    }

    fn networks(&self) -> Vec<&Network> {
        vec![&self.net]
    }
}

/// State for `rpenn`: m materialized variations plus the combination rule.
///
/// The variations' parameters are additionally packed into one contiguous
/// slab (member-major, each layer as row-major weights then bias). A query
/// then streams the whole fleet sequentially instead of chasing per-member
/// heap objects, and the scratch buffers are reused across members and
/// queries, which keeps the per-member cost at one bare forward pass.
struct EnsembleState {
    variations: Vec<Network>,
    combine: Combine,
    slab: Vec<f64>,
    shape: Vec<(usize, usize, Activation)>,
    scratch_in: Vec<f64>,
    scratch_out: Vec<f64>,
    votes: Vec<ClassLabel>,
}

impl EnsembleState {
    fn new(variations: Vec<Network>, combine: Combine) -> Self {
        let shape = variations[0]
            .layers
            .iter()
            .map(|l| (l.weights.rows, l.weights.cols, l.activation))
            .collect();
        let mut slab = Vec::new();
        for net in &variations {
            for layer in &net.layers {
                slab.extend_from_slice(&layer.weights.data);
                slab.extend_from_slice(&layer.bias);
            }
        }
        EnsembleState {
            variations,
            combine,
            slab,
            shape,
            scratch_in: Vec::new(),
            scratch_out: Vec::new(),
            votes: Vec::new(),
        }
    }

    /// Runs one member's forward pass from the slab, advancing `cursor` past
    /// the member's parameters. Mirrors [`Network::forward`] operation for
    /// operation so the logits (left in `scratch_in`) are bit-identical.
    fn member_forward(&mut self, cursor: &mut usize, x: &[f64]) {
        self.scratch_in.clear();
        self.scratch_in.extend_from_slice(x);
        for &(rows, cols, activation) in &self.shape {
            let weights = &self.slab[*cursor..*cursor + rows * cols];
            *cursor += rows * cols;
            let bias = &self.slab[*cursor..*cursor + rows];
            *cursor += rows;
            self.scratch_out.clear();
            for r in 0..rows {
                let row = &weights[r * cols..(r + 1) * cols];
                let z: f64 = row.iter().zip(&self.scratch_in).map(|(w, v)| w * v).sum();
                self.scratch_out.push(activation.apply(z + bias[r]));
            }
            std::mem::swap(&mut self.scratch_in, &mut self.scratch_out);
        }
    }
}

/// Majority vote over 1-based labels: returns the per-class vote histogram
/// and the most frequent label, ties broken toward the lowest class index.
pub fn majority_vote(labels: &[ClassLabel], classes: usize) -> (Vec<f64>, ClassLabel) {
    let mut histogram = vec![0.0; classes];
    for &label in labels {
        histogram[label - 1] += 1.0;
    }
    let label = argmax_label(&histogram);
    (histogram, label)
}

impl InstalledState for EnsembleState {
    fn predict(&mut self, x: &[f64]) -> Result<Prediction, NetError> {
        let expected = self.shape[0].1;
        if x.len() != expected {
            return Err(NetError::ShapeMismatch {
                expected,
                got: x.len(),
            });
        }
        let classes = self.variations[0].class_count();
        let mut cursor = 0;
        match self.combine {
            Combine::Majority => {
                self.votes.clear();
                for _ in 0..self.variations.len() {
                    self.member_forward(&mut cursor, x);
                    self.votes.push(argmax_label(&self.scratch_in));
                }
                let (histogram, label) = majority_vote(&self.votes, classes);
                Ok(Prediction {
                    logits: histogram,
                    label,
                })
            }
            Combine::Average => {
                let mut mean = vec![0.0; classes];
                for _ in 0..self.variations.len() {
                    self.member_forward(&mut cursor, x);
                    for (m, z) in mean.iter_mut().zip(&self.scratch_in) {
                        *m += z;
                    }
                }
                let inv = 1.0 / self.variations.len() as f64;
                for m in mean.iter_mut() {
                    *m *= inv;
                }
                let label = argmax_label(&mean);
                Ok(Prediction {
                    logits: mean,
                    label,
                })
            }
        }
    }

    fn networks(&self) -> Vec<&Network> {
        self.variations.iter().collect()
    }
}

fn reject_mismatch(mechanism: &str, config: &DefenseConfig) -> DefenseError {
    DefenseError::Config(format!(
        "mechanism '{mechanism}' cannot install a '{}' configuration",
        config.kind_name()
    ))
}

pub struct L1Defense;

impl Defense for L1Defense {
    fn name(&self) -> &'static str {
        "l1"
    }

    fn install(
        &self,
        base: &Network,
        config: &DefenseConfig,
        seed: u64,
    ) -> Result<Installation, DefenseError> {
        let DefenseConfig::L1 { sigma } = config else {
            return Err(reject_mismatch(self.name(), config));
        };
        config.validate()?;
        Ok(Installation {
            config: config.clone(),
            seed,
            state: Box::new(InputNoiseState {
                net: base.clone(),
                sigma: *sigma,
                stream: input_stream(seed),
            }),
        })
    }
}

pub struct LStarDefense;

impl Defense for LStarDefense {
    fn name(&self) -> &'static str {
        "lstar"
    }

    fn install(
        &self,
        base: &Network,
        config: &DefenseConfig,
        seed: u64,
    ) -> Result<Installation, DefenseError> {
        let DefenseConfig::LStar {
            sigma,
            perturb_biases,
        } = config
        else {
            return Err(reject_mismatch(self.name(), config));
        };
        config.validate()?;
        let mut net = base.clone();
        perturb_additive(&mut net, *sigma, *perturb_biases, &mut weight_stream(seed));
        Ok(Installation {
            config: config.clone(),
            seed,
            state: Box::new(InputNoiseState {
                net,
                sigma: *sigma,
                stream: input_stream(seed),
            }),
        })
    }
}

pub struct LPlusDefense;

impl Defense for LPlusDefense {
    fn name(&self) -> &'static str {
        "lplus"
    }

    fn install(
        &self,
        base: &Network,
        config: &DefenseConfig,
        seed: u64,
    ) -> Result<Installation, DefenseError> {
        let DefenseConfig::LPlus {
            sigma,
            perturb_biases,
        } = config
        else {
            return Err(reject_mismatch(self.name(), config));
        };
        config.validate()?;
        let mut net = base.clone();
        perturb_additive(&mut net, *sigma, *perturb_biases, &mut weight_stream(seed));
        Ok(Installation {
            config: config.clone(),
            seed,
            state: Box::new(FrozenState { net }),
        })
    }
}

pub struct RpennDefense;

impl Defense for RpennDefense {
    fn name(&self) -> &'static str {
        "rpenn"
    }

    fn install(
        &self,
        base: &Network,
        config: &DefenseConfig,
        seed: u64,
    ) -> Result<Installation, DefenseError> {
        let DefenseConfig::Rpenn {
            lambda,
            m,
            combine,
            perturb_biases,
        } = config
        else {
            return Err(reject_mismatch(self.name(), config));
        };
        config.validate()?;
        let variations = (0..*m)
            .map(|v| {
                let mut net = base.clone();
                perturb_relative(
                    &mut net,
                    *lambda,
                    *perturb_biases,
                    &mut variation_stream(seed, v),
                );
                net
            })
            .collect();
        Ok(Installation {
            config: config.clone(),
            seed,
            state: Box::new(EnsembleState::new(variations, *combine)),
        })
    }
}

/// Convenience constructors matching the four mechanisms.
pub fn defend_l1(base: &Network, sigma: f64, seed: u64) -> Result<Installation, DefenseError> {
    L1Defense.install(base, &DefenseConfig::l1(sigma), seed)
}

pub fn defend_lstar(base: &Network, sigma: f64, seed: u64) -> Result<Installation, DefenseError> {
    LStarDefense.install(base, &DefenseConfig::lstar(sigma), seed)
}

pub fn defend_lplus(base: &Network, sigma: f64, seed: u64) -> Result<Installation, DefenseError> {
    LPlusDefense.install(base, &DefenseConfig::lplus(sigma), seed)
}

pub fn defend_rpenn(
    base: &Network,
    lambda: f64,
    m: usize,
    seed: u64,
    combine: Combine,
) -> Result<Installation, DefenseError> {
    RpennDefense.install(base, &DefenseConfig::rpenn(lambda, m, combine), seed)
}
