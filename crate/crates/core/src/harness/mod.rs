//! Experiment runner: configuration, method adapters, hyperparameter sweeps,
//! the OoD and squared-error studies, and report emission.

mod config;
mod methods;
mod report;
mod study;
mod sweep;

pub use config::{
    CiMode, DatasetSource, EnsembleSettings, ExperimentConfig, McDropoutSettings, Method, ModelConfig, NacGrid, Study,
    CONFIG_VERSION, OUT_DIR_ENV,
};
pub use methods::{evaluate, EnsembleMethod, EvalSet, McDropoutMethod, MethodEvaluation, NacMethod, UncertaintyMethod};
pub use report::{
    bar_chart_svg, emit_plot_data, load_report, plot_file_stem, plot_rows, read_plot_csv, summary_csv, write_report,
    PlotRow, REPORT_CSV, REPORT_JSON, SAMPLES_DIR,
};
pub use study::{
    audit_disjoint, prepare_splits, run_mse_study, run_ood_study, run_studies, run_studies_with, sweep_ood_spec, train_cell_model, ExperimentReport,
    Provenance, RunChoices, RunRecord, RunResult, SampleTable, SummaryRow, REPORT_VERSION,
};
pub use sweep::{select_best, sweep_mc_dropout, sweep_nac, NacChoice, SweepResult};
