use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::histogram::{bin_index, phi_unchecked, NeuronHistogram};
use super::pseudo_loss::{fit_pseudo_loss, PseudoLoss};
use crate::error::{Error, Result};
use crate::mlp::{MlpModel, TapRecord};

/// Scores below this are clamped before inversion.
pub const MIN_SCORE: f64 = 1e-12;

pub const DEFAULT_BINS: usize = 50;
pub const DEFAULT_CLIP: f64 = 0.01;

/// Logistic squashing of `z · ∂L/∂z`, clamped to `[0, 1]`.
#[inline]
pub fn activation_state(z: f64, grad: f64) -> f64 {
    (1.0 / (1.0 + (-(z * grad)).exp())).clamp(0.0, 1.0)
}

/// Per-layer activation states `ẑ = σ(z ⊙ ∂L/∂z)` for one sample.
pub fn activation_states(taps: &TapRecord, grads: &[Array1<f64>]) -> Result<Vec<Array1<f64>>> {
    if taps.hidden.len() != grads.len() {
        return Err(Error::shape(format!("{} layers", taps.hidden.len()), grads.len()));
    }
    taps.hidden
        .iter()
        .zip(grads)
        .map(|(z, g)| {
            if z.len() != g.len() {
                return Err(Error::shape(format!("{} neurons", z.len()), g.len()));
            }
            Ok(Zip::from(z).and(g).map_collect(|&z, &g| activation_state(z, g)))
        })
        .collect()
}

/// Activation states of a batch: one `N × width` matrix per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBatch {
    pub layers: Vec<Array2<f64>>,
}

impl StateBatch {
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tapped forward pass, pseudo-loss gradient at the output, reverse sweep to
    /// every hidden layer, then `ẑ` for every neuron. Dropout is off.
    pub fn compute(model: &MlpModel, xs: ArrayView2<f64>, loss: &PseudoLoss) -> Result<Self> {
        if loss.output_dim() != model.output_dim() {
            return Err(Error::shape(
                format!("pseudo-loss over {} outputs", model.output_dim()),
                loss.output_dim(),
            ));
        }
        let taps = model.forward_batch(xs, None)?;
        let mut d_output = Array2::zeros(taps.output.dim());
        for (i, row) in taps.output.rows().into_iter().enumerate() {
            let (_, grad) = loss.evaluate(&row.to_vec())?;
            d_output.row_mut(i).assign(&Array1::from(grad));
        }
        let (grads, _) = model.grad_from_taps(xs, &taps, d_output.view())?;
        let layers = taps
            .hidden
            .iter()
            .zip(&grads)
            .map(|(z, g)| Zip::from(z).and(g).map_collect(|&z, &g| activation_state(z, g)))
            .collect();
        Ok(StateBatch { layers })
    }
}

/// Coverage score of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NacScore {
    /// Sum of per-layer mean Φ, in `[0, |M|]`.
    pub score: f64,
    /// `1 / max(score, 1e-12)`.
    pub uncertainty: f64,
    pub layer_means: Vec<f64>,
}

impl NacScore {
    fn from_layer_means(layer_means: Vec<f64>) -> Self {
        let score: f64 = layer_means.iter().sum();
        NacScore {
            score,
            uncertainty: 1.0 / score.max(MIN_SCORE),
            layer_means,
        }
    }
}

/// Which hidden layers contribute to the score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelection {
    All,
    First,
    Last,
    Indices(Vec<usize>),
}

impl LayerSelection {
    pub fn resolve(&self, hidden_layers: usize) -> Result<Vec<usize>> {
        let mut layers = match self {
            LayerSelection::All => (0..hidden_layers).collect(),
            LayerSelection::First => vec![0],
            LayerSelection::Last => vec![hidden_layers.saturating_sub(1)],
            LayerSelection::Indices(idx) => idx.clone(),
        };
        layers.sort_unstable();
        layers.dedup();
        if layers.is_empty() {
            return Err(Error::Calibration("tapped layer set M is empty".into()));
        }
        if let Some(bad) = layers.iter().find(|&&l| l >= hidden_layers) {
            return Err(Error::Calibration(format!(
                "layer {bad} out of range ({hidden_layers} hidden layers)"
            )));
        }
        Ok(layers)
    }
}

/// Per-neuron histograms of activation states over in-distribution data.
#[derive(Debug, Clone, PartialEq)]
pub struct NacCalibration {
    layers: Vec<usize>,
    hidden_widths: Vec<usize>,
    bins: usize,
    clip: f64,
    pseudo_loss: PseudoLoss,
    histograms: Vec<Vec<NeuronHistogram>>,
}

impl NacCalibration {
    /// Empty calibration ready to accumulate states.
    pub fn new(
        hidden_widths: &[usize],
        layers: &[usize],
        bins: usize,
        clip: f64,
        pseudo_loss: PseudoLoss,
    ) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Calibration("bin count must be positive".into()));
        }
        if !(clip > 0.0) || !clip.is_finite() {
            return Err(Error::Calibration(format!("clip level r must be > 0, got {clip}")));
        }
        let layers = LayerSelection::Indices(layers.to_vec()).resolve(hidden_widths.len())?;
        pseudo_loss.validate()?;
        let histograms = layers
            .iter()
            .map(|&l| vec![NeuronHistogram::new(bins); hidden_widths[l]])
            .collect();
        Ok(NacCalibration {
            layers,
            hidden_widths: hidden_widths.to_vec(),
            bins,
            clip,
            pseudo_loss,
            histograms,
        })
    }

    /// Populate from precomputed states (all hidden layers, as from [`StateBatch::compute`]).
    pub fn from_states(
        states: &StateBatch,
        hidden_widths: &[usize],
        layers: &[usize],
        bins: usize,
        clip: f64,
        pseudo_loss: PseudoLoss,
    ) -> Result<Self> {
        let mut cal = Self::new(hidden_widths, layers, bins, clip, pseudo_loss)?;
        cal.accumulate(states)?;
        Ok(cal)
    }

    /// Add every sample of `states` to the histograms.
    pub fn accumulate(&mut self, states: &StateBatch) -> Result<()> {
        self.check_states(states)?;
        for (k, &l) in self.layers.iter().enumerate() {
            let layer = &states.layers[l];
            for (i, hist) in self.histograms[k].iter_mut().enumerate() {
                for &v in layer.column(i) {
                    hist.insert(v);
                }
            }
        }
        Ok(())
    }

    fn check_states(&self, states: &StateBatch) -> Result<()> {
        let widths: Vec<usize> = states.layers.iter().map(|l| l.ncols()).collect();
        if widths != self.hidden_widths {
            return Err(Error::shape(format!("hidden widths {:?}", self.hidden_widths), format!("{widths:?}")));
        }
        Ok(())
    }

    /// Same histograms with a different clip level.
    pub fn with_clip(&self, clip: f64) -> Result<Self> {
        if !(clip > 0.0) || !clip.is_finite() {
            return Err(Error::Calibration(format!("clip level r must be > 0, got {clip}")));
        }
        Ok(NacCalibration {
            clip,
            ..self.clone()
        })
    }

    /// Bin-wise addition of another calibration with identical configuration.
    pub fn merge(&mut self, other: &NacCalibration) -> Result<()> {
        if self.layers != other.layers
            || self.hidden_widths != other.hidden_widths
            || self.bins != other.bins
            || self.clip != other.clip
            || self.pseudo_loss != other.pseudo_loss
        {
            return Err(Error::Calibration("cannot merge calibrations with different settings".into()));
        }
        for (mine, theirs) in self.histograms.iter_mut().zip(&other.histograms) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b)?;
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn pseudo_loss(&self) -> &PseudoLoss {
        &self.pseudo_loss
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.hidden_widths
    }

    /// Histograms of tapped layer position `k` (not hidden-layer index).
    pub fn histograms(&self, k: usize) -> &[NeuronHistogram] {
        &self.histograms[k]
    }

    pub fn neuron_total(&self) -> usize {
        self.histograms.iter().map(Vec::len).sum()
    }

    /// Number of calibration samples accumulated.
    pub fn sample_count(&self) -> u64 {
        self.histograms[0][0].total()
    }

    fn check_model(&self, model: &MlpModel) -> Result<()> {
        if model.hidden_widths() != self.hidden_widths.as_slice() {
            return Err(Error::Calibration(format!(
                "calibration built for hidden widths {:?}, model has {:?}",
                self.hidden_widths,
                model.hidden_widths()
            )));
        }
        if model.output_dim() != self.pseudo_loss.output_dim() {
            return Err(Error::Calibration("pseudo-loss and model output width differ".into()));
        }
        Ok(())
    }

    /// Score precomputed states.
    pub fn score_states(&self, states: &StateBatch) -> Result<Vec<NacScore>> {
        self.check_states(states)?;
        if self.sample_count() == 0 {
            return Err(Error::Calibration("calibration has no samples".into()));
        }
        let scores = (0..states.len())
            .map(|i| {
                let means = self
                    .layers
                    .iter()
                    .zip(&self.histograms)
                    .map(|(&l, hists)| {
                        let row = states.layers[l].row(i);
                        let total: f64 = hists
                            .iter()
                            .zip(row)
                            .map(|(h, &v)| phi_unchecked(h, v, self.clip))
                            .sum();
                        total / hists.len() as f64
                    })
                    .collect();
                NacScore::from_layer_means(means)
            })
            .collect();
        Ok(scores)
    }

    pub fn score(&self, model: &MlpModel, x: &[f64]) -> Result<NacScore> {
        let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(self.score_batch(model, xs)?.remove(0))
    }

    pub fn score_batch(&self, model: &MlpModel, xs: ArrayView2<f64>) -> Result<Vec<NacScore>> {
        self.check_model(model)?;
        if xs.nrows() == 0 {
            return Ok(Vec::new());
        }
        let states = StateBatch::compute(model, xs, &self.pseudo_loss)?;
        self.score_states(&states)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CalibrationFile {
            format: CALIBRATION_FORMAT.into(),
            version: CALIBRATION_VERSION,
            bins: self.bins,
            clip: self.clip,
            layers: self.layers.clone(),
            hidden_widths: self.hidden_widths.clone(),
            pseudo_loss: self.pseudo_loss.clone(),
            counts: self
                .histograms
                .iter()
                .map(|hs| hs.iter().map(|h| h.counts().to_vec()).collect())
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CalibrationFile = serde_json::from_str(text)?;
        if file.format != CALIBRATION_FORMAT || file.version != CALIBRATION_VERSION {
            return Err(Error::Format(format!(
                "expected {CALIBRATION_FORMAT} v{CALIBRATION_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        let mut cal = Self::new(&file.hidden_widths, &file.layers, file.bins, file.clip, file.pseudo_loss)?;
        if file.counts.len() != cal.layers.len() {
            return Err(Error::Format("counts do not match tapped layers".into()));
        }
        for (k, layer_counts) in file.counts.into_iter().enumerate() {
            if layer_counts.len() != cal.histograms[k].len() {
                return Err(Error::Format(format!("layer {} neuron count mismatch", cal.layers[k])));
            }
            for (i, counts) in layer_counts.into_iter().enumerate() {
                if counts.len() != cal.bins {
                    return Err(Error::Format("bin count mismatch".into()));
                }
                cal.histograms[k][i] = NeuronHistogram::from_counts(counts)?;
            }
        }
        Ok(cal)
    }
}

const CALIBRATION_FORMAT: &str = "nac-calibration";
const CALIBRATION_VERSION: u32 = 1;

/// Header fields, then `counts[layer][neuron][bin]`.
#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    format: String,
    version: u32,
    bins: usize,
    clip: f64,
    layers: Vec<usize>,
    hidden_widths: Vec<usize>,
    pseudo_loss: PseudoLoss,
    counts: Vec<Vec<Vec<u64>>>,
}

/// Histogram every tapped neuron's activation state over `calib`.
pub fn calibrate(
    model: &MlpModel,
    calib: ArrayView2<f64>,
    layers: &[usize],
    bins: usize,
    clip: f64,
    pseudo_loss: PseudoLoss,
) -> Result<NacCalibration> {
    if calib.nrows() == 0 {
        return Err(Error::Calibration("calibration set is empty".into()));
    }
    let states = StateBatch::compute(model, calib, &pseudo_loss)?;
    NacCalibration::from_states(&states, model.hidden_widths(), layers, bins, clip, pseudo_loss)
}

/// Fit the Mahalanobis pseudo-loss on the model's calibration predictions.
pub fn fit_regression_loss(model: &MlpModel, calib: ArrayView2<f64>, epsilon_reg: f64) -> Result<PseudoLoss> {
    let predictions = model.predict_batch(calib)?;
    fit_pseudo_loss(predictions.view(), epsilon_reg)
}

/// [`fit_regression_loss`] followed by [`calibrate`].
pub fn calibrate_regression(
    model: &MlpModel,
    calib: ArrayView2<f64>,
    layers: &[usize],
    bins: usize,
    clip: f64,
    epsilon_reg: f64,
) -> Result<NacCalibration> {
    if calib.nrows() == 0 {
        return Err(Error::Calibration("calibration set is empty".into()));
    }
    let loss = fit_regression_loss(model, calib, epsilon_reg)?;
    calibrate(model, calib, layers, bins, clip, loss)
}

/// Per-sample score table: `sample_index,S,U_NAC,layer_<m>...`.
pub fn write_scores_csv<W: Write>(writer: W, layers: &[usize], scores: &[NacScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["sample_index".to_string(), "S".into(), "U_NAC".into()];
    header.extend(layers.iter().map(|l| format!("layer_{l}")));
    w.write_record(&header)?;
    for (i, s) in scores.iter().enumerate() {
        let mut rec = vec![i.to_string(), s.score.to_string(), s.uncertainty.to_string()];
        rec.extend(s.layer_means.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<scores csv>", e))?;
    Ok(())
}

/// Bin of an activation state for a `bins`-bin histogram.
pub fn state_bin(value: f64, bins: usize) -> usize {
    bin_index(value, bins)
}
