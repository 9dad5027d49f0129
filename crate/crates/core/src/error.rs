//! Error types shared across the crate.
//!
//! Each subsystem has its own enum; [`Error`] wraps them for callers that
//! drive whole pipeline stages. [`Error::class`] buckets every failure into
//! the coarse categories the CLI maps to exit codes.

use thiserror::Error;

/// Coarse failure category, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or inconsistent configuration.
    Config,
    /// A required upstream artifact is missing or corrupt.
    Dependency,
    /// A documented precondition was violated by the caller or the data.
    Contract,
    /// Everything else (I/O at runtime, numeric divergence, ...).
    Runtime,
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("label {label} out of range 1..={classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },
    #[error("invalid network: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset spec: {0}")]
    Config(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("attack precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("invalid defense configuration: {0}")]
    Config(String),
    #[error("unknown defense mechanism '{0}'")]
    UnknownMechanism(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric undefined on an empty {0} set")]
    EmptySet(&'static str),
    #[error("label sequence length {labels} does not match set length {set}")]
    LengthMismatch { labels: usize, set: usize },
    #[error("installation seeds must be distinct")]
    DuplicateSeeds,
    #[error("robustness level q must be in (0, 1], got {0}")]
    InvalidLevel(f64),
    #[error("need at least one installation")]
    NoInstallations,
    #[error("label matrix has {have} columns, need {need}")]
    MatrixTooNarrow { have: usize, need: usize },
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment plan: {0}")]
    Config(String),
    #[error("curation discarded all {total} inputs")]
    EmptyCuration { total: usize },
    #[error("no grid point for defense '{defense}' meets the quality floor {floor}")]
    Selection { defense: String, floor: f64 },
    #[error("missing adversarial set for attack '{0}'")]
    MissingAdversarialSet(String),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected header '{expected}', found '{found}'")]
    BadMagic {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: parse error at field {field}: {msg}")]
    Parse {
        path: String,
        line: usize,
        field: usize,
        msg: String,
    },
    #[error("artifact {path} fails hash verification: manifest {expected}, actual {actual}")]
    HashMismatch {
        path: String,
        expected: String,
        actual: String,
    },
    #[error("missing artifact: {path}")]
    MissingArtifact { path: String },
    #[error("non-finite value cannot be serialized")]
    NonFinite,
    #[error("malformed manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
}

/// Top-level error for pipeline-stage entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Net(e) => net_class(e),
            Error::Data(e) => data_class(e),
            Error::Attack(e) => attack_class(e),
            Error::Defense(e) => defense_class(e),
            Error::Metric(_) => ErrorClass::Contract,
            Error::Harness(e) => harness_class(e),
            Error::Persist(e) => persist_class(e),
        }
    }
}

fn net_class(e: &NetError) -> ErrorClass {
    match e {
        NetError::ShapeMismatch { .. } | NetError::LabelOutOfRange { .. } => ErrorClass::Contract,
        NetError::TrainingDiverged { .. } => ErrorClass::Runtime,
        NetError::Invalid(_) => ErrorClass::Config,
    }
}

fn data_class(e: &DataError) -> ErrorClass {
    match e {
        DataError::Config(_) => ErrorClass::Config,
        DataError::Persist(p) => persist_class(p),
    }
}

fn attack_class(e: &AttackError) -> ErrorClass {
    match e {
        AttackError::Config(_) => ErrorClass::Config,
        AttackError::Precondition(_) => ErrorClass::Contract,
        AttackError::Net(n) => net_class(n),
    }
}

fn defense_class(e: &DefenseError) -> ErrorClass {
    match e {
        DefenseError::Config(_) | DefenseError::UnknownMechanism(_) => ErrorClass::Config,
        DefenseError::Net(n) => net_class(n),
    }
}

fn harness_class(e: &HarnessError) -> ErrorClass {
    match e {
        HarnessError::Config(_) => ErrorClass::Config,
        HarnessError::EmptyCuration { .. } | HarnessError::Selection { .. } => {
            ErrorClass::Contract
        }
        HarnessError::MissingAdversarialSet(_) => ErrorClass::Dependency,
        HarnessError::Attack(a) => attack_class(a),
        HarnessError::Defense(d) => defense_class(d),
        HarnessError::Metric(_) => ErrorClass::Contract,
        HarnessError::Net(n) => net_class(n),
        HarnessError::Data(d) => data_class(d),
        HarnessError::Persist(p) => persist_class(p),
    }
}

fn persist_class(e: &PersistError) -> ErrorClass {
    match e {
        PersistError::NonFinite => ErrorClass::Contract,
        PersistError::MissingArtifact { .. }
        | PersistError::HashMismatch { .. }
        | PersistError::BadMagic { .. }
        | PersistError::Parse { .. }
        | PersistError::Manifest { .. } => ErrorClass::Dependency,
        PersistError::Io { .. } => ErrorClass::Runtime,
    }
}
