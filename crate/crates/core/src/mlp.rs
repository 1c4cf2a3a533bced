//! Dense feed-forward regression network.
//!
//! Hidden layers compute `z = act(W h + b)` (optionally followed by inverted
//! dropout); the output layer is linear. Besides training, the model exposes a
//! *tapped* forward pass that records every hidden `z`, and a reverse sweep that
//! returns `∂L/∂z` for any scalar `L` of the output, given `∂L/∂p`.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// SELU negative-side scale α.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
/// SELU output scale λ.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Selu,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Selu => {
                if a > 0.0 {
                    SELU_LAMBDA * a
                } else {
                    SELU_LAMBDA * SELU_ALPHA * a.exp_m1()
                }
            }
            Activation::Relu => a.max(0.0),
            Activation::Tanh => a.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Selu => {
                if a > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * a.exp()
                }
            }
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Network shape: `layer_widths = [D, hidden..., T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Inverted-dropout rate applied after every hidden layer when active.
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut layer_widths = Vec::with_capacity(hidden.len() + 2);
        layer_widths.push(input);
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(output);
        MlpSpec {
            layer_widths,
            activation: Activation::Selu,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::Spec(format!(
                "need input, at least one hidden and an output width, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Spec(format!("widths must be positive: {:?}", self.layer_widths)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Spec(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.layer_widths[1..self.layer_widths.len() - 1]
    }
}

/// Hidden post-activation outputs and the network output for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct TapRecord {
    pub hidden: Vec<Array1<f64>>,
    pub output: Array1<f64>,
}

/// Gradients of a scalar loss with respect to every hidden output and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct TapGradients {
    pub hidden: Vec<Array1<f64>>,
    pub input: Array1<f64>,
}

/// Batched forward record: one row per sample.
#[derive(Debug, Clone)]
pub struct BatchTaps {
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    /// Post-activation (post-dropout) output of each hidden layer.
    pub hidden: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl BatchTaps {
    /// Row `i` as a single-sample record.
    pub fn row(&self, i: usize) -> TapRecord {
        TapRecord {
            hidden: self.hidden.iter().map(|h| h.row(i).to_owned()).collect(),
            output: self.output.row(i).to_owned(),
        }
    }
}

struct ParamGrads {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("epochs and batch_size must be positive".into()));
        }
        // Zero is allowed as a frozen-training mode.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Invalid(format!("learning_rate {} invalid", self.learning_rate)));
        }
        Ok(())
    }
}

/// Trained parameters plus the per-epoch mean squared training error.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    spec: MlpSpec,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl MlpModel {
    /// Seeded initialization: weights ~ N(0, 1/fan_in), biases zero.
    pub fn init(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::rng(spec.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in spec.layer_widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
                normal.sample(&mut rng)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(MlpModel {
            spec: spec.clone(),
            weights,
            biases,
        })
    }

    /// Build from explicit parameters (shape-checked).
    pub fn from_parameters(
        spec: MlpSpec,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
    ) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_widths.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::shape(
                format!("{layers} layers"),
                format!("{} weights / {} biases", weights.len(), biases.len()),
            ));
        }
        for (l, pair) in spec.layer_widths.windows(2).enumerate() {
            if weights[l].dim() != (pair[1], pair[0]) || biases[l].len() != pair[1] {
                return Err(Error::shape(
                    format!("layer {l}: {}x{} weights", pair[1], pair[0]),
                    format!("{:?} weights, {} biases", weights[l].dim(), biases[l].len()),
                ));
            }
        }
        if weights.iter().flat_map(|w| w.iter()).chain(biases.iter().flat_map(|b| b.iter())).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(MlpModel {
            spec,
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn hidden_layers(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn hidden_widths(&self) -> &[usize] {
        self.spec.hidden_widths()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn check_batch(&self, xs: ArrayView2<f64>) -> Result<()> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::shape(
                format!("{} input features", self.input_dim()),
                xs.ncols(),
            ));
        }
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    /// Batched forward pass. With `dropout_seed`, every hidden unit of every row is
    /// zeroed with probability `dropout_rate` and survivors scaled by `1/(1 − rate)`.
    pub fn forward_batch(&self, xs: ArrayView2<f64>, dropout_seed: Option<u64>) -> Result<BatchTaps> {
        self.check_batch(xs)?;
        let mut rng = dropout_seed.map(rng::rng);
        Ok(self.forward_unchecked(xs, rng.as_mut()))
    }

    fn forward_unchecked(&self, xs: ArrayView2<f64>, mut dropout: Option<&mut Rng>) -> BatchTaps {
        let hidden_layers = self.hidden_layers();
        let act = self.spec.activation;
        let rate = self.spec.dropout_rate;
        let mut pre = Vec::with_capacity(hidden_layers);
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(hidden_layers);
        let mut masks = Vec::with_capacity(hidden_layers);
        for l in 0..hidden_layers {
            let input = if l == 0 { xs } else { hidden[l - 1].view() };
            let a = input.dot(&self.weights[l].t()) + &self.biases[l];
            let mut z = a.mapv(|v| act.apply(v));
            let mask = match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let m = Array2::from_shape_simple_fn(z.dim(), || {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        }
                    });
                    z *= &m;
                    Some(m)
                }
                _ => None,
            };
            pre.push(a);
            masks.push(mask);
            hidden.push(z);
        }
        let last = hidden.last().expect("at least one hidden layer");
        let output = last.dot(&self.weights[hidden_layers].t()) + &self.biases[hidden_layers];
        BatchTaps {
            pre,
            masks,
            hidden,
            output,
        }
    }

    /// Reverse sweep from `∂L/∂p` (one row per sample). Returns gradients with
    /// respect to every hidden output, the input, and optionally the parameters.
    fn backward(
        &self,
        xs: ArrayView2<f64>,
        taps: &BatchTaps,
        d_output: ArrayView2<f64>,
        with_params: bool,
    ) -> (Vec<Array2<f64>>, Array2<f64>, Option<ParamGrads>) {
        let hidden_layers = self.hidden_layers();
        let act = self.spec.activation;
        let mut d_hidden = vec![Array2::zeros((0, 0)); hidden_layers];
        let mut params = with_params.then(|| ParamGrads {
            weights: vec![Array2::zeros((0, 0)); hidden_layers + 1],
            biases: vec![Array1::zeros(0); hidden_layers + 1],
        });
        // delta = ∂L/∂(pre-activation) of the current layer; the output layer is linear.
        let mut delta = d_output.to_owned();
        let mut d_input = Array2::zeros((0, 0));
        for layer in (0..=hidden_layers).rev() {
            if let Some(p) = params.as_mut() {
                let input = if layer == 0 { xs } else { taps.hidden[layer - 1].view() };
                p.weights[layer] = delta.t().dot(&input);
                p.biases[layer] = delta.sum_axis(Axis(0));
            }
            let d_in = delta.dot(&self.weights[layer]);
            if layer == 0 {
                d_input = d_in;
                break;
            }
            let h = layer - 1;
            let mut next = d_in.clone();
            Zip::from(&mut next)
                .and(&taps.pre[h])
                .for_each(|d, &a| *d *= act.derivative(a));
            if let Some(mask) = &taps.masks[h] {
                next *= mask;
            }
            d_hidden[h] = d_in;
            delta = next;
        }
        (d_hidden, d_input, params)
    }

    /// Forward pass recording every hidden output `z` and the output `p`.
    pub fn forward_tapped(&self, x: &[f64], dropout_active: bool, seed: u64) -> Result<TapRecord> {
        let xs = single_row(x);
        let taps = self.forward_batch(xs.view(), dropout_active.then_some(seed))?;
        Ok(taps.row(0))
    }

    /// `∂L/∂z` for every hidden neuron (and `∂L/∂x`) given `∂L/∂p`, with dropout off.
    pub fn grad_wrt_taps(&self, x: &[f64], loss_grad_at_output: &[f64]) -> Result<TapGradients> {
        let xs = single_row(x);
        let g = single_row(loss_grad_at_output);
        let (hidden, input) = self.grad_wrt_taps_batch(xs.view(), g.view())?;
        Ok(TapGradients {
            hidden: hidden.iter().map(|h| h.row(0).to_owned()).collect(),
            input: input.row(0).to_owned(),
        })
    }

    /// Batched [`Self::grad_wrt_taps`]: row `i` of `d_output` seeds sample `i`.
    pub fn grad_wrt_taps_batch(
        &self,
        xs: ArrayView2<f64>,
        d_output: ArrayView2<f64>,
    ) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
        let taps = self.forward_batch(xs, None)?;
        self.grad_from_taps(xs, &taps, d_output)
    }

    /// Reverse sweep reusing an existing dropout-free forward record.
    pub fn grad_from_taps(
        &self,
        xs: ArrayView2<f64>,
        taps: &BatchTaps,
        d_output: ArrayView2<f64>,
    ) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
        if d_output.dim() != (xs.nrows(), self.output_dim()) {
            return Err(Error::shape(
                format!("{}x{} output gradient", xs.nrows(), self.output_dim()),
                format!("{}x{}", d_output.nrows(), d_output.ncols()),
            ));
        }
        if taps.output.nrows() != xs.nrows() {
            return Err(Error::shape(format!("{} tapped rows", xs.nrows()), taps.output.nrows()));
        }
        if d_output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("output gradient"));
        }
        let (hidden, input, _) = self.backward(xs, taps, d_output, false);
        Ok((hidden, input))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.predict_batch(single_row(x).view())?;
        Ok(out.row(0).to_vec())
    }

    pub fn predict_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_batch(xs, None)?.output)
    }

    /// Mean over samples and outputs of the squared prediction error.
    pub fn mse(&self, ds: &Dataset) -> Result<f64> {
        let pred = self.predict_batch(ds.features().view())?;
        let diff = pred - ds.targets();
        Ok(diff.mapv(|d| d * d).mean().unwrap_or(0.0))
    }

    /// Mini-batch MSE training. Deterministic given `cfg.seed`; dropout is active
    /// during training whenever the spec's rate is positive.
    pub fn train(&self, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
        cfg.validate()?;
        if ds.is_empty() {
            return Err(Error::Dataset("cannot train on an empty dataset".into()));
        }
        if ds.feature_dim() != self.input_dim() || ds.target_dim() != self.output_dim() {
            return Err(Error::shape(
                format!("{} features / {} targets", self.input_dim(), self.output_dim()),
                format!("{} features / {} targets", ds.feature_dim(), ds.target_dim()),
            ));
        }
        let mut model = self.clone();
        let mut opt = OptimizerState::new(&model, cfg);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        let mut loss_curve = Vec::with_capacity(cfg.epochs);
        let outputs = self.output_dim() as f64;
        for epoch in 0..cfg.epochs {
            let epoch_seed = rng::derive(cfg.seed, epoch as u64);
            order.shuffle(&mut rng::rng(epoch_seed));
            let mut dropout_rng = rng::rng(rng::derive(epoch_seed, u64::MAX));
            let mut sq_sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let xs = ds.features().select(Axis(0), batch);
                let ys = ds.targets().select(Axis(0), batch);
                let taps = model.forward_unchecked(xs.view(), Some(&mut dropout_rng));
                let diff = &taps.output - &ys;
                sq_sum += diff.iter().map(|d| d * d).sum::<f64>();
                let d_out = diff * (2.0 / (batch.len() as f64 * outputs));
                let (_, _, grads) = model.backward(xs.view(), &taps, d_out.view(), true);
                opt.step(&mut model, &grads.expect("parameter gradients requested"));
            }
            let loss = sq_sum / (ds.len() as f64 * outputs);
            if !loss.is_finite() || model.weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_curve.push(loss);
        }
        Ok(TrainOutcome { model, loss_curve })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&ModelFile::from(self))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }
}

fn single_row(x: &[f64]) -> Array2<f64> {
    ArrayView1::from(x).insert_axis(Axis(0)).to_owned()
}

enum OptimizerState {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        t: i32,
        m_w: Vec<Array2<f64>>,
        v_w: Vec<Array2<f64>>,
        m_b: Vec<Array1<f64>>,
        v_b: Vec<Array1<f64>>,
    },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    fn new(model: &MlpModel, cfg: &TrainConfig) -> Self {
        match cfg.optimizer {
            Optimizer::Sgd => OptimizerState::Sgd {
                lr: cfg.learning_rate,
            },
            Optimizer::Adam => OptimizerState::Adam {
                lr: cfg.learning_rate,
                t: 0,
                m_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
                v_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
                m_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
                v_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            },
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &ParamGrads) {
        match self {
            OptimizerState::Sgd { lr } => {
                let lr = *lr;
                for (w, g) in model.weights.iter_mut().zip(&grads.weights) {
                    w.scaled_add(-lr, g);
                }
                for (b, g) in model.biases.iter_mut().zip(&grads.biases) {
                    b.scaled_add(-lr, g);
                }
            }
            OptimizerState::Adam {
                lr,
                t,
                m_w,
                v_w,
                m_b,
                v_b,
            } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                let step = *lr / c1;
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= step * *m / ((*v / c2).sqrt() + ADAM_EPS);
                };
                for l in 0..model.weights.len() {
                    Zip::from(&mut model.weights[l])
                        .and(&mut m_w[l])
                        .and(&mut v_w[l])
                        .and(&grads.weights[l])
                        .for_each(update);
                    Zip::from(&mut model.biases[l])
                        .and(&mut m_b[l])
                        .and(&mut v_b[l])
                        .and(&grads.biases[l])
                        .for_each(update);
                }
            }
        }
    }
}

const MODEL_FORMAT: &str = "nac-mlp";
const MODEL_VERSION: u32 = 1;

/// On-disk model: spec plus row-major `(out, in)` weights and biases per layer.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    spec: MlpSpec,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<&MlpModel> for ModelFile {
    fn from(m: &MlpModel) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            spec: m.spec.clone(),
            layers: m
                .weights
                .iter()
                .zip(&m.biases)
                .map(|(w, b)| LayerFile {
                    rows: w.nrows(),
                    cols: w.ncols(),
                    weights: w.iter().copied().collect(),
                    bias: b.to_vec(),
                })
                .collect(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<MlpModel> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for layer in self.layers {
            weights.push(
                Array2::from_shape_vec((layer.rows, layer.cols), layer.weights)
                    .map_err(|e| Error::Format(e.to_string()))?,
            );
            biases.push(Array1::from(layer.bias));
        }
        MlpModel::from_parameters(self.spec, weights, biases)
    }
}
