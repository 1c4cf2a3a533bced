//! The two correlation studies, run per (dataset, seed) cell:
//!
//! split → train → sweep NAC (and optionally the MC-dropout rate) → build the
//! evaluation set → score every method → correlate with the reference signal.
//! Cells are independent and reduced in configuration order.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CiMode, ExperimentConfig, Method, Study};
use super::methods::{evaluate, EnsembleMethod, EvalSet, McDropoutMethod, NacMethod, UncertaintyMethod};
use super::sweep::{sweep_mc_dropout, sweep_nac, NacChoice};
use crate::baselines::{train_ensemble, McDropoutConfig};
use crate::data::{split, Dataset, OodSpec, SplitSpec, Splits};
use crate::error::{Error, Result};
use crate::metrics::{bootstrap_interval, confidence_interval};
use crate::mlp::{MlpModel, TrainConfig};
use crate::nac::calibrate;
use crate::rng::derive;

pub const REPORT_VERSION: u32 = 1;

// Seed stream tags for everything random inside one cell.
const SPLIT: u64 = 1;
const MODEL_INIT: u64 = 2;
const MODEL_TRAIN: u64 = 3;
const SWEEP_OOD: u64 = 4;
const EVAL_OOD: u64 = 5;
const ENSEMBLE: u64 = 6;
const DROPOUT_INIT: u64 = 7;
const DROPOUT_TRAIN: u64 = 8;
const DROPOUT_PASSES: u64 = 9;

/// Seeded split with the sweep and calibration partitions both present and
/// disjoint from the test rows.
pub fn prepare_splits(ds: &Dataset, split_spec: &SplitSpec, seed: u64) -> Result<Splits> {
    let spec = SplitSpec {
        seed: derive(seed, SPLIT),
        ..*split_spec
    };
    let splits = split(ds, &spec)?;
    if splits.sweep.is_none() || splits.calib.is_none() {
        return Err(Error::Split("studies need non-empty sweep and calibration splits".into()));
    }
    audit_disjoint(&splits)?;
    Ok(splits)
}

/// Fails if any test row also appears in the train, sweep or calibration split.
pub fn audit_disjoint(splits: &Splits) -> Result<()> {
    let held_out: BTreeSet<usize> = splits
        .train
        .source_rows()
        .iter()
        .chain(splits.sweep.iter().flat_map(|d| d.source_rows()))
        .chain(splits.calib.iter().flat_map(|d| d.source_rows()))
        .copied()
        .collect();
    if let Some(row) = splits.test.source_rows().iter().find(|r| held_out.contains(r)) {
        return Err(Error::Split(format!("test row {row} also used for training or calibration")));
    }
    Ok(())
}

/// Chosen hyperparameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunChoices {
    pub nac: Option<NacChoice>,
    pub nac_sweep_rho: Option<f64>,
    pub mc_dropout_rate: Option<f64>,
    pub mc_dropout_sweep_rho: Option<f64>,
}

/// Correlation of one method in one study of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub study: Study,
    pub method: String,
    pub rho: Option<f64>,
    pub samples: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub seed: u64,
    pub choices: RunChoices,
    pub results: Vec<RunResult>,
}

/// Per-sample uncertainties and references of one (dataset, seed, study).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub dataset: String,
    pub seed: u64,
    pub study: Study,
    pub source_rows: Vec<usize>,
    /// `(method, uncertainty, reference)`.
    pub methods: Vec<(String, Vec<f64>, Vec<f64>)>,
}

/// One aggregated cell of the report grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    pub study: Study,
    pub rho_mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Runs with a defined correlation.
    pub n_runs: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub report_version: u32,
    pub crate_version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub studies: Vec<Study>,
    pub ci: CiMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    pub summary: Vec<SummaryRow>,
    pub runs: Vec<RunRecord>,
    #[serde(skip)]
    pub samples: Vec<SampleTable>,
}

impl ExperimentReport {
    /// Summary row for a (dataset, method, study) cell.
    pub fn cell(&self, dataset: &str, method: &str, study: Study) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.dataset == dataset && r.method == method && r.study == study)
    }

    /// Defined per-seed correlations of a cell, in seed order.
    pub fn per_run_rhos(&self, dataset: &str, method: &str, study: Study) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.dataset == dataset)
            .flat_map(|r| &r.results)
            .filter(|x| x.method == method && x.study == study)
            .filter_map(|x| x.rho)
            .collect()
    }
}

type MethodSlot = (String, std::result::Result<Arc<dyn UncertaintyMethod>, String>);

fn train_model(
    cfg: &ExperimentConfig,
    train: &Dataset,
    dropout: f64,
    init_seed: u64,
    train_seed: u64,
) -> Result<MlpModel> {
    let spec = cfg
        .model
        .spec(train.feature_dim(), train.target_dim(), init_seed)
        .with_dropout(dropout);
    let tc = TrainConfig {
        seed: train_seed,
        ..cfg.train
    };
    Ok(MlpModel::init(&spec)?.train(train, &tc)?.model)
}

/// The dropout-free model a study cell trains for run `seed`, which NAC scores.
pub fn train_cell_model(cfg: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<MlpModel> {
    train_model(cfg, train, 0.0, derive(seed, MODEL_INIT), derive(seed, MODEL_TRAIN))
}

/// OoD generator settings a study cell uses on its sweep split for run `seed`.
pub fn sweep_ood_spec(cfg: &ExperimentConfig, seed: u64) -> OodSpec {
    OodSpec {
        seed: derive(seed, SWEEP_OOD),
        ..cfg.ood
    }
}

/// Train and tune every configured method for one cell.
fn fit_methods(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> (Vec<MethodSlot>, RunChoices) {
    let sweep = splits.sweep.as_ref().expect("prepared splits have a sweep partition");
    let calib = splits.calib.as_ref().expect("prepared splits have a calibration partition");
    let sweep_ood = sweep_ood_spec(cfg, seed);
    let mut choices = RunChoices::default();
    let mut slots: Vec<MethodSlot> = Vec::new();
    for &method in &cfg.methods {
        let fitted: Result<Arc<dyn UncertaintyMethod>> = match method {
            Method::Nac => (|| {
                let model = train_cell_model(cfg, &splits.train, seed)?;
                let swept = sweep_nac(&model, calib, sweep, &sweep_ood, &cfg.nac)?;
                let loss = crate::nac::fit_regression_loss(&model, calib.features().view(), cfg.nac.epsilon_reg)?;
                let calibration = calibrate(
                    &model,
                    calib.features().view(),
                    &swept.chosen.layers,
                    swept.chosen.bins,
                    swept.chosen.clip,
                    loss,
                )?;
                choices.nac = Some(swept.chosen);
                choices.nac_sweep_rho = Some(swept.rho);
                Ok(Arc::new(NacMethod { model, calibration }) as Arc<dyn UncertaintyMethod>)
            })(),
            Method::Ensemble => (|| {
                let spec = cfg
                    .model
                    .spec(splits.train.feature_dim(), splits.train.target_dim(), derive(seed, ENSEMBLE));
                let ensemble = train_ensemble(&spec, &splits.train, &cfg.train, cfg.ensemble.members)?;
                Ok(Arc::new(EnsembleMethod { ensemble }) as Arc<dyn UncertaintyMethod>)
            })(),
            Method::McDropout => (|| {
                let mc = &cfg.mc_dropout;
                let rates = if mc.sweep { mc.sweep_rates.clone() } else { vec![mc.rate] };
                let candidates = rates
                    .iter()
                    .map(|&rate| {
                        let m = train_model(cfg, &splits.train, rate, derive(seed, DROPOUT_INIT), derive(seed, DROPOUT_TRAIN))?;
                        Ok((rate, m))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let pass_seed = derive(seed, DROPOUT_PASSES);
                let (pick, rho) = if candidates.len() > 1 {
                    let (k, rho) = sweep_mc_dropout(&candidates, sweep, &sweep_ood, mc.passes, pass_seed)?;
                    (k, Some(rho))
                } else {
                    (0, None)
                };
                let (rate, model) = candidates.into_iter().nth(pick).expect("picked candidate exists");
                choices.mc_dropout_rate = Some(rate);
                choices.mc_dropout_sweep_rho = rho;
                let config = McDropoutConfig {
                    dropout_rate: rate,
                    passes: mc.passes,
                    seed: pass_seed,
                };
                Ok(Arc::new(McDropoutMethod { model, config }) as Arc<dyn UncertaintyMethod>)
            })(),
        };
        slots.push((method.name().to_string(), fitted.map_err(|e| e.to_string())));
    }
    (slots, choices)
}

struct CellOutcome {
    record: RunRecord,
    tables: Vec<SampleTable>,
}

fn failed_cell(
    dataset: &str,
    seed: u64,
    studies: &[Study],
    method_names: &[String],
    reason: &str,
) -> CellOutcome {
    let results = studies
        .iter()
        .flat_map(|&study| {
            method_names.iter().map(move |m| RunResult {
                study,
                method: m.clone(),
                rho: None,
                samples: 0,
                error: Some(reason.to_string()),
            })
        })
        .collect();
    CellOutcome {
        record: RunRecord {
            dataset: dataset.to_string(),
            seed,
            choices: RunChoices::default(),
            results,
        },
        tables: Vec::new(),
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    seed: u64,
    studies: &[Study],
    extra: &[Arc<dyn UncertaintyMethod>],
    method_names: &[String],
) -> CellOutcome {
    let splits = match prepare_splits(ds, &cfg.split, seed) {
        Ok(s) => s,
        Err(e) => return failed_cell(ds.name(), seed, studies, method_names, &e.to_string()),
    };
    let (mut slots, choices) = fit_methods(cfg, &splits, seed);
    slots.extend(extra.iter().map(|m| (m.name().to_string(), Ok(Arc::clone(m)))));

    let mut results = Vec::new();
    let mut tables = Vec::new();
    for &study in studies {
        let eval = match study {
            Study::Ood => EvalSet::ood(
                &splits.test,
                &OodSpec {
                    seed: derive(seed, EVAL_OOD),
                    ..cfg.ood
                },
            ),
            Study::Mse => Ok(EvalSet::mse(&splits.test)),
        };
        let eval = match eval {
            Ok(e) => e,
            Err(e) => {
                let failed = failed_cell(ds.name(), seed, &[study], method_names, &e.to_string());
                results.extend(failed.record.results);
                continue;
            }
        };
        let mut table = SampleTable {
            dataset: ds.name().to_string(),
            seed,
            study,
            source_rows: eval.source_rows.clone(),
            methods: Vec::new(),
        };
        for (name, slot) in &slots {
            let (rho, error) = match slot {
                Ok(method) => {
                    let ev = evaluate(&eval, method.as_ref());
                    let out = match &ev.rho {
                        Ok(r) => (Some(*r), None),
                        Err(e) => (None, Some(e.clone())),
                    };
                    if !ev.uncertainty.is_empty() {
                        table.methods.push((name.clone(), ev.uncertainty, ev.reference));
                    }
                    out
                }
                Err(e) => (None, Some(e.clone())),
            };
            results.push(RunResult {
                study,
                method: name.clone(),
                rho,
                samples: eval.len(),
                error,
            });
        }
        tables.push(table);
    }
    CellOutcome {
        record: RunRecord {
            dataset: ds.name().to_string(),
            seed,
            choices,
            results,
        },
        tables,
    }
}

/// Run the OoD-detection study only.
pub fn run_ood_study(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_studies(cfg, &[Study::Ood])
}

/// Run the in-distribution squared-error study only.
pub fn run_mse_study(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_studies(cfg, &[Study::Mse])
}

/// Run the given studies on shared trained models.
pub fn run_studies(cfg: &ExperimentConfig, studies: &[Study]) -> Result<ExperimentReport> {
    run_studies_with(cfg, studies, &[])
}

/// As [`run_studies`], additionally scoring `extra` methods on every evaluation set.
pub fn run_studies_with(
    cfg: &ExperimentConfig,
    studies: &[Study],
    extra: &[Arc<dyn UncertaintyMethod>],
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if studies.is_empty() {
        return Err(Error::Invalid("no study selected".into()));
    }
    let method_names: Vec<String> = cfg
        .methods
        .iter()
        .map(|m| m.name().to_string())
        .chain(extra.iter().map(|m| m.name().to_string()))
        .collect();

    let datasets: Vec<(String, std::result::Result<Dataset, String>)> = cfg
        .datasets
        .iter()
        .enumerate()
        .map(|(i, src)| match src.load() {
            Ok(ds) => (ds.name().to_string(), Ok(ds)),
            Err(e) => (format!("dataset{i}"), Err(e.to_string())),
        })
        .collect();

    let jobs: Vec<(usize, u64)> = (0..datasets.len())
        .flat_map(|d| cfg.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let outcomes: Vec<CellOutcome> = jobs
        .par_iter()
        .map(|&(d, seed)| match &datasets[d].1 {
            Ok(ds) => run_cell(cfg, ds, seed, studies, extra, &method_names),
            Err(e) => failed_cell(&datasets[d].0, seed, studies, &method_names, e),
        })
        .collect();

    let mut runs = Vec::with_capacity(outcomes.len());
    let mut samples = Vec::new();
    for o in outcomes {
        runs.push(o.record);
        samples.extend(o.tables);
    }

    let mut summary = Vec::new();
    for (d, (name, _)) in datasets.iter().enumerate() {
        for &study in studies {
            for (m, method) in method_names.iter().enumerate() {
                let ci_seed = derive(derive(d as u64, m as u64), study as u64);
                summary.push(summarize(cfg, name, method, study, &runs, &samples, ci_seed));
            }
        }
    }

    Ok(ExperimentReport {
        provenance: Provenance {
            report_version: REPORT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.hash(),
            seeds: cfg.seeds.clone(),
            studies: studies.to_vec(),
            ci: cfg.ci,
        },
        summary,
        runs,
        samples,
    })
}

fn summarize(
    cfg: &ExperimentConfig,
    dataset: &str,
    method: &str,
    study: Study,
    runs: &[RunRecord],
    samples: &[SampleTable],
    ci_seed: u64,
) -> SummaryRow {
    let results: Vec<&RunResult> = runs
        .iter()
        .filter(|r| r.dataset == dataset)
        .flat_map(|r| &r.results)
        .filter(|x| x.method == method && x.study == study)
        .collect();
    let rhos: Vec<f64> = results.iter().filter_map(|x| x.rho).collect();
    let first_error = results.iter().find_map(|x| x.error.clone());
    let mut row = SummaryRow {
        dataset: dataset.to_string(),
        method: method.to_string(),
        study,
        rho_mean: None,
        ci_low: None,
        ci_high: None,
        n_runs: rhos.len(),
        failure: None,
    };
    if rhos.is_empty() {
        row.failure = Some(first_error.unwrap_or_else(|| "no runs".into()));
        return row;
    }
    row.rho_mean = Some(rhos.iter().sum::<f64>() / rhos.len() as f64);
    let interval = match cfg.ci {
        CiMode::Seeds => confidence_interval(&rhos),
        CiMode::Bootstrap => {
            let per_run: Vec<(Vec<f64>, Vec<f64>)> = samples
                .iter()
                .filter(|t| t.dataset == dataset && t.study == study)
                .flat_map(|t| t.methods.iter().filter(|(m, ..)| m == method))
                .filter(|(_, u, y)| crate::metrics::pearson(u, y).is_ok())
                .map(|(_, u, y)| (u.clone(), y.clone()))
                .collect();
            bootstrap_interval(&per_run, cfg.bootstrap_replicates, ci_seed)
        }
    };
    match interval {
        Ok((lo, hi)) => {
            row.ci_low = Some(lo);
            row.ci_high = Some(hi);
            if let Some(e) = first_error {
                row.failure = Some(format!("{} of {} runs failed: {e}", results.len() - rhos.len(), results.len()));
            }
        }
        Err(e) => row.failure = Some(first_error.unwrap_or_else(|| e.to_string())),
    }
    row
}
