//! Experiment orchestration: configuration, pipeline stages over an
//! output directory, and figure rendering.

pub mod boxplot;
pub mod config;
pub mod montage;
pub mod stages;

pub use boxplot::{box_stats, render_boxplots, BoxStats};
pub use config::{
    parse_blocks, parse_methods, resolve_config, BackgroundChoice, EvalSelection,
    ExperimentConfig, Overrides, Scale,
};
pub use montage::{montage_dimensions, render_montage, MontageRow};
pub use stages::{
    read_report, run_experiment, sha256_hex, stage_evaluate, stage_explain, stage_generate,
    stage_report, stage_train, ExperimentReport, FileEntry,
};
