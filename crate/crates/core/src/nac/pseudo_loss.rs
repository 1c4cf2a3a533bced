//! Scalars that are backpropagated only to obtain per-neuron gradients.
//!
//! - Classification: KL divergence from the uniform distribution `u` to the
//!   softmax output `p`.
//! - Regression: Mahalanobis distance of the prediction from the mean
//!   calibration prediction.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::linalg;
use crate::error::{Error, Result};

/// Default ridge added to the output covariance (standardized units).
pub const DEFAULT_EPSILON_REG: f64 = 1e-6;

/// Below this distance the Mahalanobis gradient is defined as zero.
pub const MIN_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PseudoLoss {
    ClassificationKl {
        class_count: usize,
    },
    RegressionMahalanobis {
        mean: Vec<f64>,
        /// Row-major `T×T` inverse covariance.
        inv_covariance: Vec<Vec<f64>>,
        epsilon_reg: f64,
    },
}

impl PseudoLoss {
    pub fn classification(class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::PseudoLoss(format!("need at least 2 classes, got {class_count}")));
        }
        Ok(PseudoLoss::ClassificationKl { class_count })
    }

    /// Regression pseudo-loss from an explicit mean and inverse covariance.
    pub fn mahalanobis(mean: Vec<f64>, inv_covariance: Vec<Vec<f64>>, epsilon_reg: f64) -> Result<Self> {
        let loss = PseudoLoss::RegressionMahalanobis {
            mean,
            inv_covariance,
            epsilon_reg,
        };
        loss.validate()?;
        Ok(loss)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PseudoLoss::ClassificationKl { class_count } => {
                if *class_count < 2 {
                    return Err(Error::PseudoLoss(format!("need at least 2 classes, got {class_count}")));
                }
            }
            PseudoLoss::RegressionMahalanobis {
                mean,
                inv_covariance,
                epsilon_reg,
            } => {
                let t = mean.len();
                if t == 0 || inv_covariance.len() != t || inv_covariance.iter().any(|r| r.len() != t) {
                    return Err(Error::PseudoLoss(format!("inverse covariance must be {t}x{t}")));
                }
                if mean.iter().chain(inv_covariance.iter().flatten()).any(|v| !v.is_finite())
                    || !epsilon_reg.is_finite()
                    || *epsilon_reg < 0.0
                {
                    return Err(Error::NonFinite("Mahalanobis parameters"));
                }
                if !linalg::is_symmetric(inv_covariance, 1e-9) {
                    return Err(Error::PseudoLoss("inverse covariance is not symmetric".into()));
                }
                if linalg::cholesky(inv_covariance).is_none() {
                    return Err(Error::PseudoLoss("inverse covariance is not positive definite".into()));
                }
            }
        }
        Ok(())
    }

    /// Width of the network output this loss consumes.
    pub fn output_dim(&self) -> usize {
        match self {
            PseudoLoss::ClassificationKl { class_count } => *class_count,
            PseudoLoss::RegressionMahalanobis { mean, .. } => mean.len(),
        }
    }

    /// Loss value and gradient with respect to the raw network output
    /// (logits for classification, predictions for regression).
    pub fn evaluate(&self, output: &[f64]) -> Result<(f64, Vec<f64>)> {
        if output.len() != self.output_dim() {
            return Err(Error::shape(format!("{} outputs", self.output_dim()), output.len()));
        }
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        match self {
            PseudoLoss::ClassificationKl { class_count } => Ok(kl_from_logits(output, *class_count)),
            PseudoLoss::RegressionMahalanobis {
                mean,
                inv_covariance,
                ..
            } => mahalanobis_pseudo_loss(output, mean, inv_covariance),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn kl_from_logits(logits: &[f64], classes: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    let c = classes as f64;
    // D_KL(u || p) = −ln C − (1/C) Σ log p_c
    let mean_log_p = logits.iter().map(|l| l - log_sum).sum::<f64>() / c;
    let loss = -c.ln() - mean_log_p;
    let grad = softmax(logits).into_iter().map(|p| p - 1.0 / c).collect();
    (loss.max(0.0), grad)
}

/// `D_KL(u || p)` for a probability vector `p`, with the gradient taken with
/// respect to the logits that produced `p` through a softmax (`p − u`).
pub fn kl_pseudo_loss(p: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.len() < 2 {
        return Err(Error::PseudoLoss(format!("need at least 2 classes, got {}", p.len())));
    }
    if p.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::PseudoLoss("probabilities must be strictly positive".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::PseudoLoss(format!("probabilities sum to {sum}, not 1")));
    }
    let u = 1.0 / p.len() as f64;
    let loss: f64 = p.iter().map(|&pc| u * (u / pc).ln()).sum();
    let grad = p.iter().map(|&pc| pc - u).collect();
    Ok((loss, grad))
}

/// `d = √((p − ȳ)ᵀ Σ⁻¹ (p − ȳ))` and `∂d/∂p = Σ⁻¹(p − ȳ)/d` (zero for `d < 1e-9`).
pub fn mahalanobis_pseudo_loss(
    p: &[f64],
    mean: &[f64],
    inv_covariance: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    if p.len() != mean.len() {
        return Err(Error::shape(format!("{} outputs", mean.len()), p.len()));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction"));
    }
    let delta: Vec<f64> = p.iter().zip(mean).map(|(a, b)| a - b).collect();
    let weighted: Vec<f64> = inv_covariance
        .iter()
        .map(|row| row.iter().zip(&delta).map(|(s, d)| s * d).sum())
        .collect();
    let quad: f64 = delta.iter().zip(&weighted).map(|(d, w)| d * w).sum();
    let d = quad.max(0.0).sqrt();
    let grad = if d < MIN_DISTANCE {
        vec![0.0; p.len()]
    } else {
        weighted.iter().map(|w| w / d).collect()
    };
    Ok((d, grad))
}

/// Fit the regression pseudo-loss on calibration predictions (`N_cal × T`):
/// column mean, sample covariance (n − 1) plus `epsilon_reg·I`, inverted via Cholesky.
pub fn fit_pseudo_loss(predictions: ArrayView2<f64>, epsilon_reg: f64) -> Result<PseudoLoss> {
    let (n, t) = predictions.dim();
    if n < 2 {
        return Err(Error::PseudoLoss(format!("need at least 2 calibration predictions, got {n}")));
    }
    if t == 0 {
        return Err(Error::PseudoLoss("predictions have no columns".into()));
    }
    if !epsilon_reg.is_finite() || epsilon_reg < 0.0 {
        return Err(Error::PseudoLoss(format!("epsilon_reg {epsilon_reg} must be finite and >= 0")));
    }
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibration predictions"));
    }
    let cov = covariance(predictions, epsilon_reg);
    let mean = column_means(predictions);
    let inv_covariance = linalg::spd_inverse(&cov).ok_or_else(|| {
        Error::PseudoLoss("covariance not positive definite even after regularization".into())
    })?;
    PseudoLoss::mahalanobis(mean, inv_covariance, epsilon_reg)
}

fn column_means(values: ArrayView2<f64>) -> Vec<f64> {
    let n = values.nrows() as f64;
    values.columns().into_iter().map(|c| c.sum() / n).collect()
}

/// Sample covariance with `n − 1` divisor plus a ridge on the diagonal.
pub fn covariance(values: ArrayView2<f64>, ridge: f64) -> Vec<Vec<f64>> {
    let (n, t) = values.dim();
    let mean = column_means(values);
    let mut cov = vec![vec![0.0; t]; t];
    for row in values.rows() {
        for i in 0..t {
            for j in 0..=i {
                cov[i][j] += (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..t {
        for j in 0..=i {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
        cov[i][i] += ridge;
    }
    cov
}
