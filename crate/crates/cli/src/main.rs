use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nac_core::data::{load_csv_with, Dataset, Standardization, TargetSelector};
use nac_core::harness::{
    emit_plot_data, load_report, prepare_splits, run_studies, sweep_nac, sweep_ood_spec, train_cell_model,
    write_report, DatasetSource, ExperimentConfig, Study,
};
use nac_core::nac::{calibrate, fit_regression_loss, write_scores_csv, LayerSelection, NacCalibration, PseudoLoss};
use nac_core::{Error, MlpModel, Result};
use serde_json::json;

const MODEL_FILE: &str = "model.json";
const STANDARDIZATION_FILE: &str = "standardization.json";
const CALIBRATION_FILE: &str = "calibration.json";
const SCORES_FILE: &str = "scores.csv";
const SWEEP_FILE: &str = "sweep.json";

#[derive(Parser)]
#[command(name = "nac", version, about = "NAC uncertainty estimation and correlation studies")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: config, then $NAC_OUT_DIR, then ./nac-out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use this CSV file as the only dataset.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Target column(s): comma-separated names or 0-based indices.
    #[arg(long, global = true)]
    target_col: Option<String>,
    /// Flip the OoD shift direction per sample with probability 1/2.
    #[arg(long, global = true)]
    random_sign: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model on the first dataset's training split.
    Train,
    /// Build NAC histograms on the calibration split.
    Calibrate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = LossKind::Mahalanobis)]
        pseudo_loss: LossKind,
        #[arg(long, default_value_t = nac_core::nac::DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = nac_core::nac::DEFAULT_CLIP)]
        clip: f64,
        /// all, first, last, or comma-separated hidden layer indices.
        #[arg(long, default_value = "all")]
        layers: String,
    },
    /// Write per-sample NAC scores for a CSV file (or the test split).
    Score {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        standardization: Option<PathBuf>,
        /// CSV to score, with the same columns as the training data.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run the NAC hyperparameter sweep for one run.
    Sweep {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Correlate uncertainty with a synthetic OoD marker.
    OodStudy,
    /// Correlate uncertainty with per-sample squared error on the test split.
    MseStudy,
    /// Regenerate plot CSV/SVG files from a report.
    EmitPlots {
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LossKind {
    Mahalanobis,
    Kl,
}

fn parse_layers(text: &str) -> Result<LayerSelection> {
    Ok(match text.trim() {
        "all" => LayerSelection::All,
        "first" => LayerSelection::First,
        "last" => LayerSelection::Last,
        list => LayerSelection::Indices(
            list.split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Invalid(format!("bad layer index {s:?}")))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let target = common.target_col.as_deref().map(TargetSelector::parse);
    if let Some(path) = &common.dataset {
        cfg.datasets = vec![DatasetSource::Csv {
            path: path.clone(),
            target: target.unwrap_or_default(),
            name: None,
        }];
    } else if let Some(sel) = target {
        let mut any = false;
        for src in &mut cfg.datasets {
            if let DatasetSource::Csv { target, .. } = src {
                *target = sel.clone();
                any = true;
            }
        }
        if !any {
            return Err(Error::Invalid("--target-col needs a CSV dataset".into()));
        }
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if common.random_sign {
        cfg.ood.random_sign = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Shared state of the single-run subcommands: first dataset, first seed.
struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    seed: u64,
    dataset: Dataset,
}

impl Run {
    fn new(common: &Common) -> Result<Self> {
        let cfg = load_config(common)?;
        let out = cfg.resolve_output_dir(common.out.as_deref());
        let seed = cfg.seeds[0];
        let dataset = cfg.datasets[0].load()?;
        fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
        Ok(Run { cfg, out, seed, dataset })
    }

    fn path_or(&self, explicit: &Option<PathBuf>, file: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join(file))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Train => {
            let r = Run::new(&cli.common)?;
            let splits = prepare_splits(&r.dataset, &r.cfg.split, r.seed)?;
            let model = train_cell_model(&r.cfg, &splits.train, r.seed)?;
            let model_path = r.out.join(MODEL_FILE);
            model.save(&model_path)?;
            let stats_path = r.out.join(STANDARDIZATION_FILE);
            write_json(&stats_path, r.dataset.stats())?;
            Ok(vec![model_path, stats_path])
        }
        Command::Calibrate {
            model,
            pseudo_loss,
            bins,
            clip,
            layers,
        } => {
            let r = Run::new(&cli.common)?;
            let model = MlpModel::load(r.path_or(&model, MODEL_FILE))?;
            let splits = prepare_splits(&r.dataset, &r.cfg.split, r.seed)?;
            let calib = splits.calib.expect("prepared splits have a calibration partition");
            let xs = calib.features().view();
            let loss = match pseudo_loss {
                LossKind::Mahalanobis => fit_regression_loss(&model, xs, r.cfg.nac.epsilon_reg)?,
                LossKind::Kl => PseudoLoss::classification(model.output_dim())?,
            };
            let layers = parse_layers(&layers)?.resolve(model.hidden_layers())?;
            let cal = calibrate(&model, xs, &layers, bins, clip, loss)?;
            let path = r.out.join(CALIBRATION_FILE);
            cal.save(&path)?;
            Ok(vec![path])
        }
        Command::Score {
            model,
            calibration,
            standardization,
            input,
        } => {
            let r = Run::new(&cli.common)?;
            let model = MlpModel::load(r.path_or(&model, MODEL_FILE))?;
            let cal = NacCalibration::load(r.path_or(&calibration, CALIBRATION_FILE))?;
            let features = match input {
                Some(path) => {
                    let stats_path = r.path_or(&standardization, STANDARDIZATION_FILE);
                    let text = fs::read_to_string(&stats_path).map_err(|e| Error::Io {
                        path: stats_path.clone(),
                        source: e,
                    })?;
                    let stats: Standardization = serde_json::from_str(&text)?;
                    let target = cli.common.target_col.as_deref().map(TargetSelector::parse).unwrap_or_default();
                    load_csv_with(&path, &target, &stats)?.features().clone()
                }
                None => prepare_splits(&r.dataset, &r.cfg.split, r.seed)?.test.features().clone(),
            };
            let scores = cal.score_batch(&model, features.view())?;
            let path = r.out.join(SCORES_FILE);
            let file = fs::File::create(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            write_scores_csv(file, cal.layers(), &scores)?;
            Ok(vec![path])
        }
        Command::Sweep { model } => {
            let r = Run::new(&cli.common)?;
            let splits = prepare_splits(&r.dataset, &r.cfg.split, r.seed)?;
            let model = match model {
                Some(p) => MlpModel::load(p)?,
                None => train_cell_model(&r.cfg, &splits.train, r.seed)?,
            };
            let calib = splits.calib.as_ref().expect("prepared splits have a calibration partition");
            let sweep = splits.sweep.as_ref().expect("prepared splits have a sweep partition");
            let result = sweep_nac(&model, calib, sweep, &sweep_ood_spec(&r.cfg, r.seed), &r.cfg.nac)?;
            let path = r.out.join(SWEEP_FILE);
            write_json(
                &path,
                &json!({
                    "dataset": r.dataset.name(),
                    "seed": r.seed,
                    "chosen": result.chosen,
                    "rho": result.rho,
                    "evaluated": result.evaluated,
                }),
            )?;
            Ok(vec![path])
        }
        Command::OodStudy | Command::MseStudy => {
            let study = match cli.command {
                Command::OodStudy => Study::Ood,
                _ => Study::Mse,
            };
            let cfg = load_config(&cli.common)?;
            let out = cfg.resolve_output_dir(cli.common.out.as_deref());
            let report = run_studies(&cfg, &[study])?;
            write_report(&report, &out)
        }
        Command::EmitPlots { report } => {
            let out = match &cli.common.config {
                Some(_) => load_config(&cli.common)?.resolve_output_dir(cli.common.out.as_deref()),
                None => ExperimentConfig::default().resolve_output_dir(cli.common.out.as_deref()),
            };
            let report_path = report.unwrap_or_else(|| out.join(nac_core::harness::REPORT_JSON));
            emit_plot_data(&load_report(&report_path)?, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim_end()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
