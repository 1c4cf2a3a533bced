//! Neural activation coverage.
//!
//! For an input `x` the network is run forward, a pseudo-loss `L` of its output
//! is backpropagated to every hidden neuron, and each neuron's *activation
//! state* `ẑ = σ(z · ∂L/∂z)` is looked up in a histogram built from
//! in-distribution calibration data. The clipped relative frequency
//! `Φ = min(κ(ẑ), r) / r` is averaged per tapped layer and summed over layers
//! into the coverage score `S`; the uncertainty is `1 / S`.

mod calibration;
mod histogram;
mod linalg;
mod pseudo_loss;

pub use calibration::{
    activation_state, activation_states, calibrate, calibrate_regression, fit_regression_loss,
    state_bin, write_scores_csv, LayerSelection, NacCalibration, NacScore, StateBatch, DEFAULT_BINS,
    DEFAULT_CLIP, MIN_SCORE,
};
pub use histogram::{phi, NeuronHistogram};
pub use pseudo_loss::{
    covariance, fit_pseudo_loss, kl_pseudo_loss, mahalanobis_pseudo_loss, softmax, PseudoLoss,
    DEFAULT_EPSILON_REG, MIN_DISTANCE,
};
