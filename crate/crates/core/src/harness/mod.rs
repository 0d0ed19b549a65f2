//! Experiment orchestration: configuration, drivers, manifests and reports.

mod config;
mod report;
mod run;

pub use config::{
    AdvSweepConfig, BoundaryConfig, DatasetConfig, EnsembleConfig, EvalConfig, ExperimentConfig,
    ExperimentKind, GridCell, GridConfig, InterpolationConfig, UapExperimentConfig,
};
pub use report::{
    emit_report, format_sig6, label_columns, table_header, value_columns, BoundaryGrid,
    RunManifest, RunRecord, Table, ARTIFACT_VERSION,
};
pub use run::{
    repeat_seed, rerun, run_adv_sweep, run_ensemble, run_experiment, run_extreme_sb,
    run_generalization, run_interpolation, run_theory, run_uap,
};
