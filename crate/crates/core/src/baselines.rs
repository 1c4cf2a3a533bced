//! Comparison uncertainty methods: bootstrap deep ensembles and MC dropout.
//! Both reduce a spread over network outputs to one scalar per sample: the
//! per-output sample std (n − 1 divisor) averaged over outputs.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mlp::{MlpModel, MlpSpec, TrainConfig};
use crate::rng;

pub const DEFAULT_MEMBERS: usize = 10;
pub const DEFAULT_PASSES: usize = 10;
pub const DEFAULT_DROPOUT_RATE: f64 = 0.1;

/// Indices of a size-`n` resample with replacement.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::rng(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Sample std of `values` after sorting, so the result does not depend on
/// the order the values arrive in. Exactly zero when all values agree.
fn sorted_std(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    if values.first() == values.last() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Spread over `draws` (each `N × T`): per-output std across draws, averaged over outputs.
fn spread(draws: &[Array2<f64>]) -> Vec<f64> {
    let (n, t) = draws[0].dim();
    let mut buf = vec![0.0; draws.len()];
    (0..n)
        .map(|i| {
            let total: f64 = (0..t)
                .map(|j| {
                    for (b, d) in buf.iter_mut().zip(draws) {
                        *b = d[[i, j]];
                    }
                    sorted_std(&mut buf)
                })
                .sum();
            total / t as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    members: Vec<MlpModel>,
    member_seeds: Vec<u64>,
}

impl EnsembleModel {
    pub fn new(members: Vec<MlpModel>, member_seeds: Vec<u64>) -> Result<Self> {
        if members.len() < 2 || members.len() != member_seeds.len() {
            return Err(Error::Invalid(format!(
                "ensemble needs >= 2 members with one seed each (got {} members, {} seeds)",
                members.len(),
                member_seeds.len()
            )));
        }
        if members.iter().any(|m| m.spec().layer_widths != members[0].spec().layer_widths) {
            return Err(Error::Invalid("ensemble members must share one architecture".into()));
        }
        Ok(EnsembleModel {
            members,
            member_seeds,
        })
    }

    pub fn members(&self) -> &[MlpModel] {
        &self.members
    }

    pub fn member_seeds(&self) -> &[u64] {
        &self.member_seeds
    }

    pub fn predict_members(&self, xs: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.members.iter().map(|m| m.predict_batch(xs)).collect()
    }

    /// Mean member prediction.
    pub fn predict_batch(&self, xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let preds = self.predict_members(xs)?;
        let mut sum = Array2::zeros(preds[0].dim());
        for p in &preds {
            sum += p;
        }
        Ok(sum / preds.len() as f64)
    }

    pub fn uncertainty_batch(&self, xs: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(spread(&self.predict_members(xs)?))
    }

    /// Writes `manifest.json` plus one model file per member into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for (k, (m, &seed)) in self.members.iter().zip(&self.member_seeds).enumerate() {
            let file = format!("member_{k:03}.json");
            m.save(dir.join(&file))?;
            entries.push(ManifestEntry { file, seed });
        }
        let manifest = EnsembleManifest {
            format: ENSEMBLE_FORMAT.into(),
            version: 1,
            members: entries,
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text)?;
        if manifest.format != ENSEMBLE_FORMAT || manifest.version != 1 {
            return Err(Error::Format(format!("unexpected ensemble manifest {} v{}", manifest.format, manifest.version)));
        }
        let members = manifest
            .members
            .iter()
            .map(|e| MlpModel::load(dir.join(&e.file)))
            .collect::<Result<_>>()?;
        Self::new(members, manifest.members.iter().map(|e| e.seed).collect())
    }
}

const ENSEMBLE_FORMAT: &str = "nac-ensemble";

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    format: String,
    version: u32,
    members: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    seed: u64,
}

/// Train one member per seed. Everything random about a member (initial
/// weights, bootstrap resample, batch order) derives from its seed alone.
pub fn train_ensemble_with_seeds(
    spec: &MlpSpec,
    ds: &Dataset,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<EnsembleModel> {
    let members = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| {
            train_member(spec, ds, cfg, seed).map_err(|e| Error::Member {
                member: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleModel::new(members, seeds.to_vec())
}

/// `members` bootstrap members with seeds derived from `spec.seed`.
pub fn train_ensemble(spec: &MlpSpec, ds: &Dataset, cfg: &TrainConfig, members: usize) -> Result<EnsembleModel> {
    if members < 2 {
        return Err(Error::Invalid(format!("ensemble needs >= 2 members, got {members}")));
    }
    let seeds: Vec<u64> = (0..members as u64).map(|k| rng::derive(spec.seed, k)).collect();
    train_ensemble_with_seeds(spec, ds, cfg, &seeds)
}

fn train_member(spec: &MlpSpec, ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<MlpModel> {
    let member_spec = spec.clone().with_seed(rng::derive(seed, 0));
    let resample = ds.select(&bootstrap_indices(ds.len(), rng::derive(seed, 1)));
    let member_cfg = TrainConfig {
        seed: rng::derive(seed, 2),
        ..*cfg
    };
    Ok(MlpModel::init(&member_spec)?.train(&resample, &member_cfg)?.model)
}

pub fn ensemble_uncertainty(em: &EnsembleModel, x: &[f64]) -> Result<f64> {
    let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(em.uncertainty_batch(xs)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McDropoutConfig {
    /// Rate applied at inference; overrides the model spec's rate.
    pub dropout_rate: f64,
    pub passes: usize,
    pub seed: u64,
}

impl Default for McDropoutConfig {
    fn default() -> Self {
        McDropoutConfig {
            dropout_rate: DEFAULT_DROPOUT_RATE,
            passes: DEFAULT_PASSES,
            seed: 0,
        }
    }
}

/// Batched MC dropout: `cfg.passes` dropout-active forward passes over `xs`,
/// pass `k` seeded by `derive(cfg.seed, k)`.
pub fn mc_dropout_uncertainty_batch(
    model: &MlpModel,
    xs: ArrayView2<f64>,
    cfg: &McDropoutConfig,
) -> Result<Vec<f64>> {
    if cfg.passes < 2 {
        return Err(Error::Invalid(format!("MC dropout needs >= 2 passes, got {}", cfg.passes)));
    }
    if !(0.0..1.0).contains(&cfg.dropout_rate) {
        return Err(Error::Invalid(format!("dropout rate {} not in [0, 1)", cfg.dropout_rate)));
    }
    if xs.nrows() == 0 {
        return Ok(Vec::new());
    }
    let spec = model.spec().clone().with_dropout(cfg.dropout_rate);
    let model = MlpModel::from_parameters(spec, model.weights().to_vec(), model.biases().to_vec())?;
    let draws = (0..cfg.passes as u64)
        .map(|k| Ok(model.forward_batch(xs, Some(rng::derive(cfg.seed, k)))?.output))
        .collect::<Result<Vec<_>>>()?;
    Ok(spread(&draws))
}

pub fn mc_dropout_uncertainty(model: &MlpModel, x: &[f64], cfg: &McDropoutConfig) -> Result<f64> {
    let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(mc_dropout_uncertainty_batch(model, xs, cfg)?[0])
}

/// Fraction of distinct rows in a bootstrap resample.
pub fn unique_fraction(indices: &[usize]) -> f64 {
    let mut seen: Vec<usize> = indices.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len() as f64 / indices.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticKind, SyntheticSpec};
    use ndarray::array;

    #[test]
    fn hand_std_of_two_predictions() {
        let draws = vec![array![[1.0]], array![[3.0]]];
        assert!((spread(&draws)[0] - 2f64.sqrt()).abs() < 1e-15);
        let same = vec![array![[0.7, -2.0]], array![[0.7, -2.0]], array![[0.7, -2.0]]];
        assert_eq!(spread(&same), vec![0.0]);
    }

    #[test]
    fn spread_is_order_invariant() {
        let draws: Vec<Array2<f64>> = [0.1, 0.7, -0.3, 2.5, 1e-3, 9.1]
            .iter()
            .map(|&v| array![[v, v * v]])
            .collect();
        let mut rev = draws.clone();
        rev.reverse();
        rev.swap(0, 3);
        assert_eq!(spread(&draws), spread(&rev));
    }

    #[test]
    fn identical_members_give_zero() {
        let ds = generate(&SyntheticSpec { rows: 60, ..SyntheticSpec::new(SyntheticKind::Linear, 1) }).unwrap();
        let spec = MlpSpec::new(8, &[8], 1);
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let em = train_ensemble_with_seeds(&spec, &ds, &cfg, &[5, 5]).unwrap();
        assert_eq!(em.members()[0], em.members()[1]);
        assert_eq!(ensemble_uncertainty(&em, ds.features().row(0).as_slice().unwrap()).unwrap(), 0.0);
        assert!(train_ensemble(&spec, &ds, &cfg, 1).is_err());
    }

    #[test]
    fn mc_dropout_degenerate_and_deterministic() {
        let m = MlpModel::init(&MlpSpec::new(3, &[16, 16], 1).with_seed(2)).unwrap();
        let x = [0.5, -1.0, 0.25];
        let zero = McDropoutConfig { dropout_rate: 0.0, ..McDropoutConfig::default() };
        assert_eq!(mc_dropout_uncertainty(&m, &x, &zero).unwrap(), 0.0);
        let cfg = McDropoutConfig { dropout_rate: 0.2, passes: 10, seed: 4 };
        let a = mc_dropout_uncertainty(&m, &x, &cfg).unwrap();
        assert_eq!(a, mc_dropout_uncertainty(&m, &x, &cfg).unwrap());
        assert!(a > 0.0);
        let bad = McDropoutConfig { passes: 1, ..cfg };
        assert!(mc_dropout_uncertainty(&m, &x, &bad).is_err());
    }

    #[test]
    fn ensemble_save_load() {
        let ds = generate(&SyntheticSpec { rows: 40, ..SyntheticSpec::new(SyntheticKind::Quadratic, 1) }).unwrap();
        let em = train_ensemble(&MlpSpec::new(8, &[4], 1), &ds, &TrainConfig { epochs: 2, ..TrainConfig::default() }, 3)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        em.save(dir.path()).unwrap();
        assert_eq!(EnsembleModel::load(dir.path()).unwrap(), em);
    }
}
