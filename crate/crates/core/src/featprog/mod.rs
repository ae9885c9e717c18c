//! SQL feature programs: parsing, anchoring checks, hashing and
//! materialization into row-aligned feature matrices.

mod anchor;
mod materialize;
mod matrix;
mod program;

use std::time::Duration;

use thiserror::Error;

pub use anchor::{check_anchoring, AnchorReport, AnchorVerdict, QueryAnchor};
pub use materialize::materialize;
pub use matrix::{BlockInfo, ColumnData, FeatureColumn, FeatureMatrix};
pub use program::{parse_program, program_hash, FeatureProgram, FeatureQuery};

/// Default per-query timeout during materialization.
pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatprogError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("duplicate feature query name `{0}`")]
    DuplicateName(String),
    #[error("feature program is empty")]
    EmptyProgram,
    #[error("invalid feature query: {0}")]
    InvalidQuery(String),
    #[error("anchoring check failed: {0}")]
    Anchoring(String),
    #[error("query `{query}` failed: {message}")]
    Sql { query: String, message: String },
    #[error("query `{query}` exceeded the {timeout:?} timeout")]
    Timeout { query: String, timeout: Duration },
    #[error("query `{query}` returned more than one row for row_id {row_id}")]
    DuplicateRowId { query: String, row_id: i64 },
    #[error("query `{query}` returned row_id {value}, outside the bound split")]
    RowIdOutOfRange { query: String, value: String },
    #[error("query `{query}` returned no row_id column")]
    MissingRowId { query: String },
    #[error("query `{query}` returns column `{column}` more than once")]
    DuplicateColumn { query: String, column: String },
}

impl FeatprogError {
    /// The name of the query at fault, when there is one.
    pub fn query(&self) -> Option<&str> {
        match self {
            FeatprogError::Sql { query, .. }
            | FeatprogError::Timeout { query, .. }
            | FeatprogError::DuplicateRowId { query, .. }
            | FeatprogError::RowIdOutOfRange { query, .. }
            | FeatprogError::MissingRowId { query }
            | FeatprogError::DuplicateColumn { query, .. } => Some(query),
            _ => None,
        }
    }
}
