//! Benchmark harness for the two simulation studies: the conjugate
//! Gaussian-mean model and the t degrees-of-freedom model. Each run matrix
//! produces a [`Report`] with one row per `(algorithm, init)` pair.

mod config;
mod experiments;
mod report;

pub use config::{
    Budgets, DataSettings, ExperimentConfig, ExperimentKind, FactorInit, Inits, KlSettings,
    PointInit, StepBudget,
};
pub use experiments::{
    conjugate_dataset, conjugate_model, run_experiment, run_experiment_conjugate,
    run_experiment_tdf, tdf_dataset, tdf_model, CLOSED_FORM, HYBRID, MCMC, NUMERICAL,
    REFERENCE_INIT,
};
pub use report::{
    emit_report, parse_report, timing_sidecar_path, Report, ReportFormat, Row, CSV_HEADER,
    ERROR_PREFIX,
};
