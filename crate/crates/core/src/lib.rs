//! Randomized defenses against adversarial examples, the attacks that
//! produce those examples, and the metrics that score the match-up.
//!
//! The crate is organized around two strategy families:
//!
//! - [`attacks`]: six gradient-based methods for turning a correctly
//!   classified input into a misclassifying one, each behind the
//!   [`attacks::Attack`] trait and registered by name.
//! - [`defenses`]: four noise-injection mechanisms that transform a trained
//!   [`net::Network`] into a seeded [`defenses::Installation`], each behind
//!   the [`defenses::Defense`] trait and registered by name.
//!
//! [`metrics`] scores installations on adversarial and benign data
//! (efficacy, quality, robustness), and [`harness`] drives the full
//! experiment: dataset curation, adversarial-set generation, parameter-grid
//! sweeps, setting selection, and the multi-installation robustness run.
//! Everything is deterministic given a master seed; see [`seeds`] for the
//! derivation scheme.
//!
//! Class labels are 1-based throughout: a classifier over `j` classes
//! predicts labels in `1..=j`.

pub mod attacks;
pub mod data;
pub mod defenses;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod persist;
pub mod report;
pub mod seeds;

pub use error::Error;

/// Class labels are integers in `1..=classes`.
pub type ClassLabel = usize;
