//! Ground-truth benchmark suite for saliency methods.
//!
//! The crate generates synthetic lesion images over controllable noise
//! backgrounds, trains a small convolutional classifier from scratch,
//! produces per-pixel relevance heatmaps with eight attribution methods,
//! and scores the heatmaps against the known lesion ground truth with
//! ranking metrics (ROC-AUC, mAP, PREC99).
//!
//! Modules mirror the pipeline stages:
//! - [`synthgen`]: backgrounds, lesions, masks, dataset splits
//! - [`netcore`]: tensors, layers, exact forward/backward passes
//! - [`trainer`]: SGD + momentum with early stopping and model selection
//! - [`saliency`]: relevance propagation rules and pattern estimation
//! - [`xmetrics`]: explanation-performance scoring
//! - [`harness`]: experiment orchestration, reporting, figures, CLI glue

pub mod error;
pub mod harness;
pub mod netcore;
pub mod rng;
pub mod saliency;
pub mod synthgen;
pub mod trainer;
pub mod tensor;
pub mod xmetrics;

pub use error::{Error, Result};
