use ndarray::{concatenate, Array2, Axis};

use super::config::Study;
use crate::baselines::{mc_dropout_uncertainty_batch, EnsembleModel, McDropoutConfig};
use crate::data::{generate_ood, Dataset, OodSpec};
use crate::error::{Error, Result};
use crate::metrics;
use crate::mlp::MlpModel;
use crate::nac::NacCalibration;

/// Samples every method of one study scores, in one fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub study: Study,
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    /// 0 for in-distribution rows, 1 for synthesized OoD rows (OoD study only).
    pub labels: Vec<f64>,
    /// Source row of each sample in the original dataset.
    pub source_rows: Vec<usize>,
}

impl EvalSet {
    /// Test rows followed by an equally sized set of shifted copies.
    pub fn ood(test: &Dataset, ood: &OodSpec) -> Result<Self> {
        let shifted = generate_ood(test, ood)?;
        let n = test.len();
        let features = concatenate(Axis(0), &[test.features().view(), shifted.features().view()])
            .map_err(|e| Error::Invalid(e.to_string()))?;
        let targets = concatenate(Axis(0), &[test.targets().view(), shifted.targets().view()])
            .map_err(|e| Error::Invalid(e.to_string()))?;
        let mut labels = vec![0.0; n];
        labels.resize(2 * n, 1.0);
        let source_rows = test.source_rows().iter().chain(shifted.source_rows()).copied().collect();
        Ok(EvalSet {
            study: Study::Ood,
            features,
            targets,
            labels,
            source_rows,
        })
    }

    /// The test rows only.
    pub fn mse(test: &Dataset) -> Self {
        EvalSet {
            study: Study::Mse,
            features: test.features().clone(),
            targets: test.targets().clone(),
            labels: Vec::new(),
            source_rows: test.source_rows().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A per-sample uncertainty estimator under comparison.
pub trait UncertaintyMethod: Send + Sync {
    fn name(&self) -> &str;

    /// Point predictions, used for the squared-error reference.
    fn predict(&self, eval: &EvalSet) -> Result<Array2<f64>>;

    fn uncertainty(&self, eval: &EvalSet) -> Result<Vec<f64>>;
}

pub struct NacMethod {
    pub model: MlpModel,
    pub calibration: NacCalibration,
}

impl UncertaintyMethod for NacMethod {
    fn name(&self) -> &str {
        "nac"
    }

    fn predict(&self, eval: &EvalSet) -> Result<Array2<f64>> {
        self.model.predict_batch(eval.features.view())
    }

    fn uncertainty(&self, eval: &EvalSet) -> Result<Vec<f64>> {
        Ok(self
            .calibration
            .score_batch(&self.model, eval.features.view())?
            .into_iter()
            .map(|s| s.uncertainty)
            .collect())
    }
}

pub struct EnsembleMethod {
    pub ensemble: EnsembleModel,
}

impl UncertaintyMethod for EnsembleMethod {
    fn name(&self) -> &str {
        "ensemble"
    }

    fn predict(&self, eval: &EvalSet) -> Result<Array2<f64>> {
        self.ensemble.predict_batch(eval.features.view())
    }

    fn uncertainty(&self, eval: &EvalSet) -> Result<Vec<f64>> {
        self.ensemble.uncertainty_batch(eval.features.view())
    }
}

pub struct McDropoutMethod {
    pub model: MlpModel,
    pub config: McDropoutConfig,
}

impl UncertaintyMethod for McDropoutMethod {
    fn name(&self) -> &str {
        "mc_dropout"
    }

    /// Deterministic (dropout-off) prediction.
    fn predict(&self, eval: &EvalSet) -> Result<Array2<f64>> {
        self.model.predict_batch(eval.features.view())
    }

    fn uncertainty(&self, eval: &EvalSet) -> Result<Vec<f64>> {
        mc_dropout_uncertainty_batch(&self.model, eval.features.view(), &self.config)
    }
}

/// Per-sample scores of one method on one evaluation set, and its correlation
/// with the study's reference signal.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodEvaluation {
    pub method: String,
    pub uncertainty: Vec<f64>,
    /// OoD label or the method's own per-sample squared error.
    pub reference: Vec<f64>,
    pub rho: std::result::Result<f64, String>,
}

pub fn evaluate(eval: &EvalSet, method: &dyn UncertaintyMethod) -> MethodEvaluation {
    let name = method.name().to_string();
    let outcome = (|| -> Result<(Vec<f64>, Vec<f64>)> {
        let uncertainty = method.uncertainty(eval)?;
        if uncertainty.len() != eval.len() {
            return Err(Error::shape(format!("{} uncertainties", eval.len()), uncertainty.len()));
        }
        let reference = match eval.study {
            Study::Ood => eval.labels.clone(),
            Study::Mse => {
                let pred = method.predict(eval)?;
                metrics::per_sample_squared_error(pred.view(), eval.targets.view())?
            }
        };
        Ok((uncertainty, reference))
    })();
    match outcome {
        Ok((uncertainty, reference)) => {
            let rho = metrics::pearson(&uncertainty, &reference).map_err(|e| e.to_string());
            MethodEvaluation {
                method: name,
                uncertainty,
                reference,
                rho,
            }
        }
        Err(e) => MethodEvaluation {
            method: name,
            uncertainty: Vec::new(),
            reference: Vec::new(),
            rho: Err(e.to_string()),
        },
    }
}
