//! Embedded relational store: task manifests, the augmented context
//! connection, split binding and read-only exploration.

mod context;
pub mod functions;
pub mod guard;
mod manifest;
mod rowset;
mod schema;

use std::time::Duration;

use thiserror::Error;

pub(crate) use context::{map_engine_error, run_query, table_columns};
pub use context::{ContextHandle, RenamingMap, TableRenaming, EVAL_TABLE, TRAIN_TABLE};
pub use manifest::{PrimaryMetric, Split, TargetSpec, TaskManifest, TaskType};
pub use rowset::{format_float, Cell, RowSet, Timestamp};
pub use schema::{ColumnInfo, ForeignKey, SchemaReport, TableSchema};

/// Row cap applied to exploration queries that carry no `LIMIT`.
pub const EXPLORATION_ROW_CAP: usize = 200;
/// Default per-statement exploration timeout.
pub const DEFAULT_EXPLORATION_TIMEOUT: Duration = Duration::from_secs(60);

/// Name prefix reserved for raw target tables inside the context file.
pub const TARGET_TABLE_PREFIX: &str = "__target_";

pub fn target_table_name(split: Split) -> String {
    format!("{TARGET_TABLE_PREFIX}{split}")
}

#[derive(Debug, Error)]
pub enum RelstoreError {
    #[error("table not found: {0}")]
    MissingTable(String),
    #[error("column `{column}` not found in table `{table}`")]
    MissingColumn { table: String, column: String },
    #[error("split timestamps overlap: {0}")]
    CutoffViolation(String),
    #[error("read-only violation: {0}")]
    ReadOnlyViolation(String),
    #[error("{0}")]
    Sql(String),
    #[error("statement exceeded the {0:?} timeout")]
    Timeout(Duration),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("database error: {0}")]
    Engine(#[from] rusqlite::Error),
}

/// Double-quote an identifier for the engine.
pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}
