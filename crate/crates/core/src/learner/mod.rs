//! Histogram gradient-boosted trees covering the seven-entry model menu.
//!
//! `xgboost`, `xgb_dart` and `catboost` are served by the same engine as the
//! LightGBM-style variants; they differ only in accepted config aliases.

mod binning;
mod boost;
mod config;
mod model;
mod objective;
mod tree;

use thiserror::Error;

pub use boost::{fit, fit_with, FitOptions};
pub use config::{resolve_config, ConfigBound, ModelChoice, RawModelConfig, Resolution, ResolvedConfig, BOUNDS};
pub use model::{ColumnKind, ColumnSchema, FittedModel};
pub use objective::{compute_gradients, loss, sigmoid, Objective};
pub use tree::{Node, Tree};

/// Maximum number of histogram bins per feature.
pub const MAX_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("objective `{objective}` does not fit a {task} task")]
    ObjectiveMismatch { objective: String, task: String },
    #[error("degenerate training input: {0}")]
    DegenerateInput(String),
    #[error("log_transform_target needs every label > -1 (found {0})")]
    TransformDomain(f64),
    #[error("training error: {0}")]
    TrainingError(String),
    #[error("column `{0}` was numeric at training time but is categorical here")]
    SchemaMismatch(String),
    #[error("unknown model choice `{0}`; expected one of gbdt, rf, dart, goss, xgboost, xgb_dart, catboost")]
    UnknownModel(String),
}
