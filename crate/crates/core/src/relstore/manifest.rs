use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RelstoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    BinaryClassification,
    Regression,
}

impl TaskType {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::BinaryClassification => "binary_classification",
            TaskType::Regression => "regression",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryMetric {
    Auroc,
    Mae,
}

impl PrimaryMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            PrimaryMetric::Auroc => "auroc",
            PrimaryMetric::Mae => "mae",
        }
    }
}

/// A data split of the target tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where one split's target rows live and which columns carry the roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub table: String,
    pub entity_col: String,
    pub timestamp_col: String,
    pub target_col: String,
}

/// Task description loaded from a TOML manifest.
///
/// `database` is resolved relative to the manifest file when it is not
/// absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    #[serde(rename = "database")]
    pub database_uri: PathBuf,
    pub context_tables: Vec<String>,
    pub train: TargetSpec,
    pub val: TargetSpec,
    pub test: TargetSpec,
    pub task_type: TaskType,
    pub primary_metric: PrimaryMetric,
    #[serde(default)]
    pub rowid_columns: Vec<String>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub dataset_name: Option<String>,
    #[serde(default)]
    pub task_description: Option<String>,
}

impl TaskManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RelstoreError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| RelstoreError::Manifest(format!("{}: {e}", path.display())))?;
        let mut manifest: TaskManifest =
            toml::from_str(&text).map_err(|e| RelstoreError::Manifest(format!("{}: {e}", path.display())))?;
        if manifest.database_uri.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            manifest.database_uri = base.join(&manifest.database_uri);
        }
        manifest.check_static()?;
        Ok(manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn target(&self, split: Split) -> &TargetSpec {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn entity_col(&self) -> &str {
        &self.train.entity_col
    }

    pub fn timestamp_col(&self) -> &str {
        &self.train.timestamp_col
    }

    pub fn target_col(&self) -> &str {
        &self.train.target_col
    }

    /// Checks that need no database access.
    pub fn check_static(&self) -> Result<(), RelstoreError> {
        let expected = match self.task_type {
            TaskType::BinaryClassification => PrimaryMetric::Auroc,
            TaskType::Regression => PrimaryMetric::Mae,
        };
        if self.primary_metric != expected {
            return Err(RelstoreError::Manifest(format!(
                "task_type {} requires primary_metric {}",
                self.task_type,
                expected.as_str()
            )));
        }
        for split in [Split::Val, Split::Test] {
            let spec = self.target(split);
            if spec.entity_col != self.train.entity_col
                || spec.timestamp_col != self.train.timestamp_col
                || spec.target_col != self.train.target_col
            {
                return Err(RelstoreError::Manifest(format!(
                    "{split} target uses different role column names than train"
                )));
            }
        }
        Ok(())
    }
}
