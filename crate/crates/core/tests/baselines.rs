use nac_core::baselines::{
    bootstrap_indices, ensemble_uncertainty, mc_dropout_uncertainty, mc_dropout_uncertainty_batch, train_ensemble,
    train_ensemble_with_seeds, unique_fraction, EnsembleModel, McDropoutConfig,
};
use nac_core::data::synthetic::{generate, SyntheticKind, SyntheticSpec};
use nac_core::data::{generate_ood, OodSpec};
use nac_core::mlp::{MlpModel, MlpSpec, TrainConfig};
use nac_core::rng;
use ndarray::{array, Array1, Array2};

/// Mean and std of the distinct-row fraction of an n-draw bootstrap.
fn bootstrap_unique_moments(n: usize) -> (f64, f64) {
    let nf = n as f64;
    let q1 = (1.0 - 1.0 / nf).powf(nf);
    let q2 = (1.0 - 2.0 / nf).powf(nf);
    // Missing-row count M: E[M] = n·q1, Var[M] = n·q1 + n(n−1)·q2 − (n·q1)².
    let var_missing = nf * q1 + nf * (nf - 1.0) * q2 - (nf * q1).powi(2);
    (1.0 - q1, var_missing.sqrt() / nf)
}

#[test]
fn bootstrap_unique_fraction_matches_theory() {
    let (mean, sigma) = bootstrap_unique_moments(1000);
    assert!((mean - (1.0 - (-1.0f64).exp())).abs() < 1e-3);
    let f = unique_fraction(&bootstrap_indices(1000, 17));
    assert!((f - mean).abs() <= 3.0 * sigma, "{f} vs {mean} ± {sigma}");
    let runs = 200;
    let avg: f64 = (0..runs).map(|s| unique_fraction(&bootstrap_indices(1000, s))).sum::<f64>() / runs as f64;
    assert!((avg - mean).abs() <= 3.0 * sigma / (runs as f64).sqrt(), "{avg} vs {mean}");
}

fn small_linear() -> nac_core::Dataset {
    generate(&SyntheticSpec {
        rows: 400,
        ..SyntheticSpec::new(SyntheticKind::Linear, 21)
    })
    .unwrap()
}

#[test]
fn ensemble_members_fit_linear_data() {
    let ds = small_linear();
    let spec = MlpSpec::new(ds.feature_dim(), &[128, 128, 128], 1).with_seed(3);
    let em = train_ensemble(&spec, &ds, &TrainConfig::default(), 10).unwrap();
    assert_eq!(em.members().len(), 10);
    for (k, (m, &seed)) in em.members().iter().zip(em.member_seeds()).enumerate() {
        // Each member's own bootstrap resample: stream 1 of its seed.
        let resample = ds.select(&bootstrap_indices(ds.len(), rng::derive(seed, 1)));
        let mse = m.mse(&resample).unwrap();
        assert!(mse < 1e-2, "member {k}: MSE {mse}");
    }

    // Brute-force std over per-member predict calls.
    let x = ds.features().row(5).to_vec();
    let mut preds: Vec<f64> = em.members().iter().map(|m| m.predict(&x).unwrap()[0]).collect();
    preds.sort_by(f64::total_cmp);
    let n = preds.len() as f64;
    let mean = preds.iter().sum::<f64>() / n;
    let oracle = (preds.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let got = ensemble_uncertainty(&em, &x).unwrap();
    assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0), "{got} vs {oracle}");

    // Member order does not matter.
    let mut reversed = em.members().to_vec();
    reversed.reverse();
    let mut seeds = em.member_seeds().to_vec();
    seeds.reverse();
    let rev = EnsembleModel::new(reversed, seeds).unwrap();
    assert_eq!(
        rev.uncertainty_batch(ds.features().view()).unwrap(),
        em.uncertainty_batch(ds.features().view()).unwrap()
    );

    // Strictly positive off-distribution.
    let shifted = generate_ood(&ds, &OodSpec::default()).unwrap();
    assert!(em.uncertainty_batch(shifted.features().view()).unwrap().iter().all(|&u| u > 0.0));
}

#[test]
fn identical_member_seeds_collapse() {
    let ds = small_linear();
    let spec = MlpSpec::new(ds.feature_dim(), &[8], 1);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let em = train_ensemble_with_seeds(&spec, &ds, &cfg, &[42, 42]).unwrap();
    assert_eq!(em.members()[0], em.members()[1]);
    assert!(em.uncertainty_batch(ds.features().view()).unwrap().iter().all(|&u| u == 0.0));
}

/// x → one SELU unit → linear output, with known weights.
fn one_unit_model() -> MlpModel {
    let spec = MlpSpec::new(1, &[1], 1);
    MlpModel::from_parameters(spec, vec![array![[1.0]], array![[1.5]]], vec![array![0.0], array![0.25]]).unwrap()
}

fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[test]
fn mc_dropout_matches_mask_enumeration() {
    let model = one_unit_model();
    let x = [1.0];
    let passes = 10u64;
    // Rate 0.5: the unit is dropped (output b) or doubled (output b + 2·w·z).
    let z = model.forward_tapped(&x, false, 0).unwrap().hidden[0][0];
    let gap = 2.0 * 1.5 * z;
    // j kept passes out of K: sample std = gap·sqrt(j(K−j)/(K(K−1))).
    let (mut mean, mut second) = (0.0, 0.0);
    for j in 0..=passes {
        let p = choose(passes, j) / 2f64.powi(passes as i32);
        let s = gap * ((j * (passes - j)) as f64 / (passes * (passes - 1)) as f64).sqrt();
        mean += p * s;
        second += p * s * s;
    }
    let sd = (second - mean * mean).sqrt();
    let trials = 10_000;
    let observed: f64 = (0..trials)
        .map(|t| {
            let cfg = McDropoutConfig {
                dropout_rate: 0.5,
                passes: passes as usize,
                seed: rng::derive(77, t),
            };
            mc_dropout_uncertainty(&model, &x, &cfg).unwrap()
        })
        .sum::<f64>()
        / trials as f64;
    assert!((observed - mean).abs() <= 3.0 * sd / (trials as f64).sqrt(), "{observed} vs {mean}");
}

#[test]
fn mc_dropout_degenerate_and_positive() {
    let ds = small_linear();
    let spec = MlpSpec::new(ds.feature_dim(), &[32, 32], 1).with_seed(4).with_dropout(0.1);
    let model = MlpModel::init(&spec)
        .unwrap()
        .train(
            &ds,
            &TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
        )
        .unwrap()
        .model;
    let xs = generate_ood(&ds, &OodSpec::default()).unwrap();
    let off = McDropoutConfig {
        dropout_rate: 0.0,
        ..McDropoutConfig::default()
    };
    assert!(mc_dropout_uncertainty_batch(&model, xs.features().view(), &off)
        .unwrap()
        .iter()
        .all(|&u| u == 0.0));
    let on = McDropoutConfig::default();
    let a = mc_dropout_uncertainty_batch(&model, xs.features().view(), &on).unwrap();
    assert!(a.iter().all(|&u| u > 0.0));
    assert_eq!(a, mc_dropout_uncertainty_batch(&model, xs.features().view(), &on).unwrap());
}

#[test]
fn multi_output_spread_is_mean_over_outputs() {
    let spec = MlpSpec::new(2, &[4], 2);
    let a = MlpModel::from_parameters(
        spec.clone(),
        vec![Array2::zeros((4, 2)), Array2::zeros((2, 4))],
        vec![Array1::zeros(4), array![1.0, 0.0]],
    )
    .unwrap();
    let b = MlpModel::from_parameters(
        spec,
        vec![Array2::zeros((4, 2)), Array2::zeros((2, 4))],
        vec![Array1::zeros(4), array![3.0, 4.0]],
    )
    .unwrap();
    let em = EnsembleModel::new(vec![a, b], vec![0, 1]).unwrap();
    // Per-output stds √2 and √8, averaged.
    let expected = (2f64.sqrt() + 8f64.sqrt()) / 2.0;
    assert!((ensemble_uncertainty(&em, &[0.0, 0.0]).unwrap() - expected).abs() < 1e-12);
}
