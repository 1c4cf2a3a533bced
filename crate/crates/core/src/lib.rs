//! Neural activation coverage (NAC) uncertainty for trained regression MLPs.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: CSV ingestion, standardization, seeded splits, OoD synthesis.
//! - [`mlp`]: dense SELU network with a tapped forward pass and a reverse sweep
//!   to hidden outputs.
//! - [`nac`]: pseudo-losses, activation states, per-neuron histograms and the
//!   coverage score / uncertainty.
//! - [`baselines`]: bootstrap ensembles and MC dropout.
//! - [`metrics`]: Pearson / point-biserial correlation and confidence intervals.
//! - [`harness`]: the OoD-detection and ID-error correlation studies.

pub mod baselines;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mlp;
pub mod nac;
pub mod rng;

pub use data::{generate_ood, load_csv, split, Dataset, OodSpec, SplitSpec, TargetSelector};
pub use error::{Error, Result};
pub use mlp::{Activation, MlpModel, MlpSpec, TapRecord, TrainConfig};
pub use nac::{NacCalibration, NacScore, PseudoLoss};
