//! Hyperparameter selection on the sweep split: in-distribution sweep rows
//! plus an equal number of synthesized OoD rows, scored by point-biserial
//! correlation of the uncertainty with the OoD marker.

use std::cmp::Ordering;

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};

use super::config::NacGrid;
use crate::baselines::{mc_dropout_uncertainty_batch, McDropoutConfig};
use crate::data::{generate_ood, Dataset, OodSpec};
use crate::error::{Error, Result};
use crate::metrics::pearson;
use crate::mlp::MlpModel;
use crate::nac::{fit_regression_loss, NacCalibration, StateBatch};

/// One point of the NAC grid, with the layer set resolved against the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NacChoice {
    pub bins: usize,
    pub clip: f64,
    pub layers: Vec<usize>,
}

impl NacChoice {
    /// Tie-break preference: smaller B, then larger r, then larger |M|.
    fn preference(&self, other: &NacChoice) -> Ordering {
        other
            .bins
            .cmp(&self.bins)
            .then(self.clip.total_cmp(&other.clip))
            .then(self.layers.len().cmp(&other.layers.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub chosen: NacChoice,
    pub rho: f64,
    /// Every grid point in evaluation order, with its correlation if defined.
    pub evaluated: Vec<(NacChoice, Option<f64>)>,
}

/// Pick the grid point maximizing rho; ties resolved by [`NacChoice::preference`],
/// then by grid order.
pub fn select_best(evaluated: &[(NacChoice, Option<f64>)]) -> Option<(NacChoice, f64)> {
    let mut best: Option<(&NacChoice, f64)> = None;
    for (choice, rho) in evaluated {
        let Some(rho) = *rho else { continue };
        let better = match best {
            None => true,
            Some((b, brho)) => rho > brho || (rho == brho && choice.preference(b) == Ordering::Greater),
        };
        if better {
            best = Some((choice, rho));
        }
    }
    best.map(|(c, r)| (c.clone(), r))
}

/// The sweep split's ID rows followed by their OoD copies, with 0/1 labels.
fn sweep_inputs(sweep: &Dataset, ood: &OodSpec) -> Result<(ndarray::Array2<f64>, Vec<f64>)> {
    let shifted = generate_ood(sweep, ood)?;
    let xs = concatenate(Axis(0), &[sweep.features().view(), shifted.features().view()])
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let mut labels = vec![0.0; sweep.len()];
    labels.resize(2 * sweep.len(), 1.0);
    Ok((xs, labels))
}

/// Calibrate on `calib` for every grid point, score the sweep set, keep the best.
pub fn sweep_nac(
    model: &MlpModel,
    calib: &Dataset,
    sweep: &Dataset,
    ood: &OodSpec,
    grid: &NacGrid,
) -> Result<SweepResult> {
    grid.validate()?;
    if sweep.is_empty() || calib.is_empty() {
        return Err(Error::Invalid("sweep and calibration splits must be non-empty".into()));
    }
    let loss = fit_regression_loss(model, calib.features().view(), grid.epsilon_reg)?;
    let calib_states = StateBatch::compute(model, calib.features().view(), &loss)?;
    let (xs, labels) = sweep_inputs(sweep, ood)?;
    let sweep_states = StateBatch::compute(model, xs.view(), &loss)?;

    let mut evaluated = Vec::new();
    for &bins in &grid.bins {
        for selection in &grid.layer_sets {
            let layers = selection.resolve(model.hidden_layers())?;
            let base = NacCalibration::from_states(
                &calib_states,
                model.hidden_widths(),
                &layers,
                bins,
                grid.clips[0],
                loss.clone(),
            )?;
            for &clip in &grid.clips {
                let cal = base.with_clip(clip)?;
                let u: Vec<f64> = cal.score_states(&sweep_states)?.into_iter().map(|s| s.uncertainty).collect();
                let rho = pearson(&u, &labels).ok();
                evaluated.push((
                    NacChoice {
                        bins,
                        clip,
                        layers: layers.clone(),
                    },
                    rho,
                ));
            }
        }
    }
    let (chosen, rho) = select_best(&evaluated)
        .ok_or_else(|| Error::Undefined("every NAC grid point gave an undefined correlation".into()))?;
    Ok(SweepResult { chosen, rho, evaluated })
}

/// Pick the MC-dropout rate with the best sweep-split correlation among
/// already-trained candidates `(rate, model)`; ties go to the smaller rate.
pub fn sweep_mc_dropout(
    candidates: &[(f64, MlpModel)],
    sweep: &Dataset,
    ood: &OodSpec,
    passes: usize,
    seed: u64,
) -> Result<(usize, f64)> {
    let (xs, labels) = sweep_inputs(sweep, ood)?;
    let mut best: Option<(usize, f64, f64)> = None;
    for (k, (rate, model)) in candidates.iter().enumerate() {
        let cfg = McDropoutConfig {
            dropout_rate: *rate,
            passes,
            seed,
        };
        let u = mc_dropout_uncertainty_batch(model, xs.view(), &cfg)?;
        let Ok(rho) = pearson(&u, &labels) else { continue };
        let better = match best {
            None => true,
            Some((_, brate, brho)) => rho > brho || (rho == brho && *rate < brate),
        };
        if better {
            best = Some((k, *rate, rho));
        }
    }
    best.map(|(k, _, rho)| (k, rho))
        .ok_or_else(|| Error::Undefined("every MC-dropout rate gave an undefined correlation".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choice(bins: usize, clip: f64, m: usize) -> NacChoice {
        NacChoice {
            bins,
            clip,
            layers: (0..m).collect(),
        }
    }

    #[test]
    fn singleton_grid() {
        let e = vec![(choice(10, 0.1, 1), Some(0.3))];
        assert_eq!(select_best(&e).unwrap(), (choice(10, 0.1, 1), 0.3));
        assert!(select_best(&[(choice(10, 0.1, 1), None)]).is_none());
    }

    #[test]
    fn tie_break_order() {
        // smaller B wins
        let e = vec![(choice(50, 0.1, 3), Some(0.5)), (choice(10, 0.01, 1), Some(0.5))];
        assert_eq!(select_best(&e).unwrap().0, choice(10, 0.01, 1));
        // then larger r
        let e = vec![(choice(10, 0.01, 3), Some(0.5)), (choice(10, 0.1, 1), Some(0.5))];
        assert_eq!(select_best(&e).unwrap().0, choice(10, 0.1, 1));
        // then larger |M|
        let e = vec![(choice(10, 0.1, 1), Some(0.5)), (choice(10, 0.1, 3), Some(0.5))];
        assert_eq!(select_best(&e).unwrap().0, choice(10, 0.1, 3));
        // higher rho beats any preference
        let e = vec![(choice(10, 0.1, 3), Some(0.5)), (choice(100, 0.001, 1), Some(0.6))];
        assert_eq!(select_best(&e).unwrap().0, choice(100, 0.001, 1));
        // reversed input order gives the same winner
        let mut e = vec![(choice(25, 0.05, 2), Some(0.4)), (choice(25, 0.05, 3), Some(0.4)), (choice(50, 0.05, 3), Some(0.4))];
        let a = select_best(&e).unwrap();
        e.reverse();
        assert_eq!(select_best(&e).unwrap(), a);
    }
}
