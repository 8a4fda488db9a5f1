//! Simulation engine for adversarial co-training of ESP cheaters, non-cheaters
//! and trajectory-based cheat detectors.
//!
//! The crate is organized bottom-up:
//!
//! * [`scalar`] — the floating-point abstraction everything is generic over,
//! * [`tape`] / [`nn`] / [`adam`] — reverse-mode autodiff, small MLPs and the
//!   optimizer used by every trainable component,
//! * [`env`] — the episode/rollout contract shared by both games, plus the
//!   [`env::gridworld`] and [`env::blackjack`] implementations,
//! * [`learner`] — GAE, clipped-surrogate policy optimization and
//!   policy pretraining,
//! * [`metrics`] — ranking metrics (average precision, AUROC) and small stats,
//! * [`detector`] — the three cheat-detector designs and their supervised
//!   training loop,
//! * [`adversarial`] — the gated cheater, reward shaping and the alternating
//!   cheater/detector training loop,
//! * [`io`] — checkpoints, episode JSONL datasets and CSV writers.
//!
//! All numeric code is generic over [`scalar::Scalar`] (implemented for `f32`
//! and `f64`); the aliases below pin the default precision used by the CLI and
//! the test suites.

pub mod adam;
pub mod adversarial;
pub mod detector;
pub mod env;
pub mod error;
pub mod io;
pub mod learner;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod tape;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type for experiments. The core stays generic; the CLI and
/// the acceptance suite instantiate everything at this precision.
pub type Real = f64;

/// Policy network at default precision.
pub type Policy = nn::PolicyNet<Real>;
/// Gating network at default precision.
pub type Gating = nn::GatingNet<Real>;
/// Detector model at default precision.
pub type Detector = detector::DetectorModel<Real>;
/// Gated cheater at default precision.
pub type Cheater = adversarial::GatedCheater<Real>;
