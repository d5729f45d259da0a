//! Experiment runner: configs and presets, problem construction, the
//! parallel job runner and CSV artifacts.

pub mod config;
pub mod output;
pub mod problem;
pub mod runner;

pub use config::{preset, Algorithm, EnvKind, ExperimentConfig, FeatureKind, PRESETS};
pub use output::{compare, emit_plot_data, load_records, write_records, CompareTable, OutputError};
pub use problem::{Moments, Problem};
pub use runner::{run, run_one, unexpected_divergences, Row, RunRecord, Status};
