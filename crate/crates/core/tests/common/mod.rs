//! Independent reference implementations used as test oracles. Plain loops
//! over `Vec<f64>`, no ndarray and no library math beyond parameter access.

#![allow(dead_code)]

use nac_core::mlp::{Activation, MlpModel, MlpSpec};
use nac_core::rng;
use rand::Rng as _;

pub const LAMBDA: f64 = 1.0507009873554805;
pub const ALPHA: f64 = 1.6732632423543772;

pub fn selu(a: f64) -> f64 {
    if a > 0.0 {
        LAMBDA * a
    } else {
        LAMBDA * ALPHA * (a.exp() - 1.0)
    }
}

pub fn act(kind: Activation, a: f64) -> f64 {
    match kind {
        Activation::Selu => selu(a),
        Activation::Relu => a.max(0.0),
        Activation::Tanh => a.tanh(),
    }
}

fn affine(model: &MlpModel, layer: usize, input: &[f64]) -> Vec<f64> {
    let w = &model.weights()[layer];
    let b = &model.biases()[layer];
    (0..w.nrows())
        .map(|o| b[o] + (0..w.ncols()).map(|i| w[[o, i]] * input[i]).sum::<f64>())
        .collect()
}

/// Run the network from the post-activation output `z` of hidden layer `m`.
pub fn forward_from(model: &MlpModel, m: usize, z: &[f64]) -> Vec<f64> {
    let hidden = model.hidden_layers();
    let kind = model.spec().activation;
    let mut h = z.to_vec();
    for layer in m + 1..hidden {
        h = affine(model, layer, &h).into_iter().map(|a| act(kind, a)).collect();
    }
    affine(model, hidden, &h)
}

/// Dropout-free forward pass: every hidden output, then the network output.
pub fn forward(model: &MlpModel, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let kind = model.spec().activation;
    let mut hidden = Vec::new();
    let mut h = x.to_vec();
    for layer in 0..model.hidden_layers() {
        h = affine(model, layer, &h).into_iter().map(|a| act(kind, a)).collect();
        hidden.push(h.clone());
    }
    let out = affine(model, model.hidden_layers(), &h);
    (hidden, out)
}

/// Central finite difference of `f` at `x` along each coordinate.
pub fn fd_gradient(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[i] += step;
            minus[i] -= step;
            (f(&plus) - f(&minus)) / (2.0 * step)
        })
        .collect()
}

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Bin of `v` in `bins` uniform bins on [0,1], last bin right-closed.
pub fn oracle_bin(v: f64, bins: usize) -> usize {
    let mut k = 0;
    while k + 1 < bins && v >= (k + 1) as f64 / bins as f64 {
        k += 1;
    }
    k
}

/// Mean and `n − 1` covariance of the rows of `preds`, two-pass.
pub fn mean_cov(preds: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = preds.len() as f64;
    let t = preds[0].len();
    let mean: Vec<f64> = (0..t).map(|j| preds.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; t]; t];
    for p in preds {
        for a in 0..t {
            for b in 0..t {
                cov[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]) / (n - 1.0);
            }
        }
    }
    (mean, cov)
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        let d = a[c][c];
        for v in a[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let pivot = a[c].clone();
                for (v, pv) in a[r].iter_mut().zip(pivot) {
                    *v -= f * pv;
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Random MLP with widths in `1..=max_width` and 1 to 3 hidden layers.
pub fn random_model(seed: u64, max_width: usize, activation: Activation) -> MlpModel {
    let mut r = rng::rng(seed);
    let input = r.random_range(1..=max_width);
    let output = r.random_range(1..=3usize.min(max_width));
    let hidden: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(1..=max_width)).collect();
    let spec = MlpSpec::new(input, &hidden, output)
        .with_seed(rng::derive(seed, 1))
        .with_activation(activation);
    let model = MlpModel::init(&spec).unwrap();
    // Non-zero biases so every layer exercises both SELU branches.
    let biases = model
        .biases()
        .iter()
        .map(|b| b.mapv(|_| r.random_range(-0.5..0.5)))
        .collect();
    MlpModel::from_parameters(spec, model.weights().to_vec(), biases).unwrap()
}

pub fn random_vec(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

pub fn act_derivative(kind: Activation, a: f64) -> f64 {
    match kind {
        Activation::Selu => {
            if a > 0.0 {
                LAMBDA
            } else {
                LAMBDA * ALPHA * a.exp()
            }
        }
        Activation::Relu => {
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - a.tanh().powi(2),
    }
}

/// Hand-written reverse sweep: `∂L/∂z` for every hidden layer given `∂L/∂p`.
pub fn backprop(model: &MlpModel, x: &[f64], d_out: &[f64]) -> Vec<Vec<f64>> {
    let kind = model.spec().activation;
    let hidden = model.hidden_layers();
    let mut pre = Vec::new();
    let mut h = x.to_vec();
    for layer in 0..hidden {
        let a = affine(model, layer, &h);
        h = a.iter().map(|&v| act(kind, v)).collect();
        pre.push(a);
    }
    let mut grads = vec![Vec::new(); hidden];
    let mut upstream = d_out.to_vec();
    for layer in (1..=hidden).rev() {
        let w = &model.weights()[layer];
        let dz: Vec<f64> = (0..w.ncols())
            .map(|i| (0..w.nrows()).map(|o| w[[o, i]] * upstream[o]).sum())
            .collect();
        upstream = dz.iter().zip(&pre[layer - 1]).map(|(d, &a)| d * act_derivative(kind, a)).collect();
        grads[layer - 1] = dz;
    }
    grads
}

/// Mahalanobis distance and its gradient from an explicit inverse covariance.
pub fn mahalanobis(p: &[f64], mean: &[f64], inv: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let delta: Vec<f64> = p.iter().zip(mean).map(|(a, b)| a - b).collect();
    let sd: Vec<f64> = inv.iter().map(|row| row.iter().zip(&delta).map(|(s, d)| s * d).sum()).collect();
    let d = delta.iter().zip(&sd).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
    let grad = if d < 1e-9 { vec![0.0; p.len()] } else { sd.iter().map(|v| v / d).collect() };
    (d, grad)
}

/// Activation states of every hidden neuron for one input, from scratch.
pub fn states(model: &MlpModel, x: &[f64], loss_grad: impl Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
    let (hidden, out) = forward(model, x);
    let g = backprop(model, x, &loss_grad(&out));
    hidden
        .iter()
        .zip(&g)
        .map(|(z, gz)| z.iter().zip(gz).map(|(a, b)| logistic(a * b)).collect())
        .collect()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-8;

pub fn fd_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= FD_ABS_FLOOR || rel_err(analytic, numeric, 0.0) < FD_REL_TOL
}

/// First mismatch between `grad_wrt_taps` and finite differences of the
/// downstream sub-network, for a random linear functional of the output.
pub fn tap_gradient_mismatch(seed: u64, activation: Activation) -> Option<String> {
    let model = random_model(seed, 8, activation);
    let x = random_vec(rng::derive(seed, 2), model.input_dim(), 1.5);
    let c = random_vec(rng::derive(seed, 3), model.output_dim(), 1.0);
    let grads = model.grad_wrt_taps(&x, &c).unwrap();
    let (hidden, _) = forward(&model, &x);
    for (m, z) in hidden.iter().enumerate() {
        let fd = fd_gradient(z, FD_STEP, |zp| {
            forward_from(&model, m, zp).iter().zip(&c).map(|(p, w)| p * w).sum()
        });
        for (i, (&a, &n)) in grads.hidden[m].iter().zip(&fd).enumerate() {
            if !fd_close(a, n) {
                return Some(format!("seed {seed} layer {m} neuron {i}: analytic {a} vs fd {n}"));
            }
        }
    }
    None
}

/// Random symmetric positive definite matrix `AAᵀ + 0.5·I`.
pub fn random_spd(seed: u64, t: usize) -> Vec<Vec<f64>> {
    let a = random_vec(seed, t * t, 1.0);
    (0..t)
        .map(|i| {
            (0..t)
                .map(|j| {
                    let dot: f64 = (0..t).map(|k| a[i * t + k] * a[j * t + k]).sum();
                    dot + if i == j { 0.5 } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

/// Calibrate and score a random small case, then recount every histogram and
/// re-sum every score from scratch. Returns the first discrepancy.
pub fn brute_force_mismatch(seed: u64) -> Option<String> {
    use nac_core::nac::{calibrate, PseudoLoss};
    use ndarray::Array2;

    let model = random_model(seed, 8, Activation::Selu);
    let (d, t, h) = (model.input_dim(), model.output_dim(), model.hidden_layers());
    let mut r = rng::rng(rng::derive(seed, 40));
    let n_cal = r.random_range(5..=50);
    let bins = r.random_range(1..=20);
    let clip = r.random_range(0.01..1.0);
    let layers: Vec<usize> = (0..h).filter(|_| r.random_bool(0.7)).collect();
    let layers = if layers.is_empty() { vec![h - 1] } else { layers };
    let mean = random_vec(rng::derive(seed, 41), t, 0.5);
    let inv = random_spd(rng::derive(seed, 42), t);
    let loss = PseudoLoss::mahalanobis(mean.clone(), inv.clone(), 0.0).unwrap();
    let oracle_grad = |p: &[f64]| mahalanobis(p, &mean, &inv).1;

    let calib: Vec<Vec<f64>> = (0..n_cal).map(|i| random_vec(rng::derive(seed, 100 + i as u64), d, 2.0)).collect();
    let xs = Array2::from_shape_fn((n_cal, d), |(i, j)| calib[i][j]);
    let cal = calibrate(&model, xs.view(), &layers, bins, clip, loss).unwrap();

    // Recount.
    let widths = model.hidden_widths().to_vec();
    let mut counts: Vec<Vec<Vec<u64>>> = layers.iter().map(|&l| vec![vec![0; bins]; widths[l]]).collect();
    for x in &calib {
        let s = states(&model, x, oracle_grad);
        for (k, &l) in layers.iter().enumerate() {
            for (i, &v) in s[l].iter().enumerate() {
                counts[k][i][oracle_bin(v, bins)] += 1;
            }
        }
    }
    for (k, layer_counts) in counts.iter().enumerate() {
        for (i, c) in layer_counts.iter().enumerate() {
            if cal.histograms(k)[i].counts() != c.as_slice() {
                return Some(format!("seed {seed}: layer {} neuron {i} counts {:?} vs oracle {c:?}", layers[k], cal.histograms(k)[i].counts()));
            }
        }
    }

    // Re-sum scores on fresh queries.
    let queries: Vec<Vec<f64>> = (0..20).map(|i| random_vec(rng::derive(seed, 900 + i), d, 4.0)).collect();
    let qs = Array2::from_shape_fn((queries.len(), d), |(i, j)| queries[i][j]);
    let scores = cal.score_batch(&model, qs.view()).unwrap();
    for (q, got) in queries.iter().zip(&scores) {
        let s = states(&model, q, oracle_grad);
        let mut total = 0.0;
        for (k, &l) in layers.iter().enumerate() {
            let phis: f64 = s[l]
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let kappa = counts[k][i][oracle_bin(v, bins)] as f64 / n_cal as f64;
                    kappa.min(clip) / clip
                })
                .sum();
            total += phis / widths[l] as f64;
        }
        if (total - got.score).abs() > 1e-12 {
            return Some(format!("seed {seed}: S {} vs oracle {total}", got.score));
        }
        let u = 1.0 / total.max(1e-12);
        if (u - got.uncertainty).abs() > 1e-12 * u.max(1.0) {
            return Some(format!("seed {seed}: U {} vs oracle {u}", got.uncertainty));
        }
    }
    None
}
