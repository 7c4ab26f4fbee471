//! Experiment harness: configuration, cross-validated training, ablation
//! sweeps, Kaplan-Meier analysis and solver benchmarks.

mod ablate;
mod analysis;
mod config;
mod train;

pub use ablate::{ablate, mode_summary, write_cells, write_rows, AblationCell, AblationReport, AblationRow};
pub use analysis::{bench_solver, km_analysis, read_risks_csv, write_bench_csv, write_km, BenchRow, KmAnalysis};
pub use config::{ExperimentConfig, ModelSettings};
pub use train::{
    cross_validate, fold_partition, mean_std, model_config_for, split_logrank, train_fold, write_risks_csv,
    CvReport, FoldResult, LogrankSummary,
};
