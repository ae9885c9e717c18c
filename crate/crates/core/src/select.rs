//! Champion selection and deployment.
//!
//! The best successful trial of each rollout competes across rollouts; the
//! winner is refit on train and val rows and scored once on test.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::RolloutResult;
use crate::clock::Clock;
use crate::featprog::{materialize, FeatprogError, FeatureProgram};
use crate::harness::numeric_labels;
use crate::learner::{fit_with, FitOptions, LearnerError, ModelChoice, ResolvedConfig};
use crate::metrics::{bundle_for, MetricBundle, MetricsError};
use crate::relstore::{ContextHandle, RelstoreError, RenamingMap, Split, TaskType};
use crate::sqllex::{tokenize, TokenKind};
use crate::workspace::{FailureKind, Workspace, WorkspaceError};

pub const CHAMPION_FILE: &str = "champion.json";
pub const TEST_REPORT_FILE: &str = "test_report.json";
pub const TEST_REPORT_TEXT_FILE: &str = "test_report.txt";
/// Per-query timeout while materializing the champion.
pub const DEPLOY_QUERY_TIMEOUT: Duration = Duration::from_secs(600);

/// Index of the largest score; the earliest wins ties, `None` entries never win.
pub fn argmax_earliest(scores: impl IntoIterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if let Some(s) = s.filter(|s| !s.is_nan()) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Best successful trial in a workspace, by oriented score; earliest wins ties.
pub fn best_trial(ws: &Workspace) -> Result<Option<String>, WorkspaceError> {
    let trials = ws.trials()?;
    Ok(argmax_earliest(trials.iter().map(|t| t.primary_score)).map(|i| trials[i].trial_id.clone()))
}

/// The selected program and model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Champion {
    pub rollout_index: usize,
    pub trial_id: String,
    pub program: FeatureProgram,
    pub model_choice: ModelChoice,
    pub config: ResolvedConfig,
    /// Oriented validation score as stored in the workspace.
    pub val_score: f64,
    pub program_hash: String,
    /// Renaming the program was written against, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renaming: Option<RenamingMap>,
}

impl Champion {
    pub fn load(path: &std::path::Path) -> std::io::Result<Champion> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("champion serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("no rollout produced a successful trial")]
    NoSuccessfulTrial,
    #[error("trial {0} lacks its program or resolved config")]
    IncompleteTrial(String),
    #[error("deployment failed: {0}")]
    Featprog(#[from] FeatprogError),
    #[error("deployment failed: {0}")]
    Training(#[from] LearnerError),
    #[error("deployment failed: {0}")]
    Context(#[from] RelstoreError),
    #[error("deployment failed: {0}")]
    Metrics(#[from] MetricsError),
    #[error("deployment failed: {0}")]
    Labels(String),
}

impl SelectError {
    /// Failure kind in the vocabulary used for trials, for deployment errors.
    pub fn failure_kind(&self) -> Option<FailureKind> {
        match self {
            SelectError::NoSuccessfulTrial | SelectError::IncompleteTrial(_) => None,
            SelectError::Featprog(FeatprogError::Timeout { .. }) => Some(FailureKind::Timeout),
            SelectError::Featprog(_) | SelectError::Context(_) => Some(FailureKind::SqlError),
            SelectError::Training(_) | SelectError::Metrics(_) | SelectError::Labels(_) => {
                Some(FailureKind::TrainingError)
            }
        }
    }
}

/// Best trial over all rollouts; ties go to the lowest rollout index, then
/// the earliest trial.
pub fn cross_rollout_select(rollouts: &[RolloutResult]) -> Result<Champion, SelectError> {
    let candidates: Vec<(usize, usize)> =
        rollouts.iter().enumerate().flat_map(|(r, res)| (0..res.trials.len()).map(move |t| (r, t))).collect();
    let pick = argmax_earliest(candidates.iter().map(|&(r, t)| rollouts[r].trials[t].primary_score))
        .ok_or(SelectError::NoSuccessfulTrial)?;
    let (r, t) = candidates[pick];
    let rollout = &rollouts[r];
    let trial = &rollout.trials[t];
    let incomplete = || SelectError::IncompleteTrial(trial.trial_id.clone());
    let config = trial.resolved_config.clone().ok_or_else(incomplete)?;
    Ok(Champion {
        rollout_index: rollout.rollout_index,
        trial_id: trial.trial_id.clone(),
        program: trial.program.clone().ok_or_else(incomplete)?,
        model_choice: config.model_choice,
        val_score: trial.primary_score.ok_or_else(incomplete)?,
        program_hash: trial.program_hash.clone().ok_or_else(incomplete)?,
        config,
        renaming: rollout.renaming.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFinding {
    pub query: String,
    /// Row-identifier columns the query mentions.
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub findings: Vec<QueryFinding>,
    pub clean: bool,
}

/// Lexical scan of each query for row-identifier column names. The
/// mandatory `row_id` key is not a finding.
pub fn invariance_audit(program: &FeatureProgram, rowid_columns: &[String]) -> AuditReport {
    let watched: Vec<&String> = rowid_columns.iter().filter(|c| !c.eq_ignore_ascii_case("row_id")).collect();
    let findings: Vec<QueryFinding> = program
        .queries
        .iter()
        .map(|q| {
            let mentioned: BTreeSet<String> = match tokenize(&q.sql) {
                Ok(tokens) => tokens
                    .iter()
                    .filter(|t| matches!(t.kind, TokenKind::Word | TokenKind::QuotedIdent))
                    .filter_map(|t| watched.iter().find(|c| t.is_ident(c)).map(|c| c.to_string()))
                    .collect(),
                Err(_) => {
                    let lower = q.sql.to_ascii_lowercase();
                    let words: BTreeSet<&str> =
                        lower.split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).collect();
                    watched
                        .iter()
                        .filter(|c| words.contains(c.to_ascii_lowercase().as_str()))
                        .map(|c| c.to_string())
                        .collect()
                }
            };
            QueryFinding { query: q.name.clone(), columns: mentioned.into_iter().collect() }
        })
        .collect();
    let clean = findings.iter().all(|f| f.columns.is_empty());
    AuditReport { findings, clean }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPrediction {
    pub row_id: usize,
    pub entity_id: String,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub champion: Champion,
    pub task_type: TaskType,
    pub metrics: MetricBundle,
    /// Rows the deployed model was fit on (train plus val).
    pub n_fit_rows: usize,
    pub predictions: Vec<TestPrediction>,
    /// (column, normalized split gain), largest first.
    pub importances: Vec<(String, f64)>,
    pub audit: AuditReport,
    pub generated_at: String,
}

impl TestReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render(&self) -> String {
        let c = &self.champion;
        let mut out = String::new();
        let _ = writeln!(out, "CHAMPION rollout {} trial {} ({})", c.rollout_index, c.trial_id, c.model_choice);
        let _ = writeln!(out, "program hash {}", c.program_hash);
        let _ = writeln!(out, "validation score {:.6}", c.val_score);
        let _ = writeln!(out, "refit rows {}, test rows {}", self.n_fit_rows, self.predictions.len());
        let _ = writeln!(out, "\nTEST METRICS\n{}", self.metrics.render());
        let _ = writeln!(out, "\nFEATURE IMPORTANCE (split gain)");
        if self.importances.is_empty() {
            let _ = writeln!(out, "  (no splits)");
        }
        let width = self.importances.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        for (name, v) in &self.importances {
            let bar = "#".repeat((v * 40.0).round() as usize);
            let _ = writeln!(out, "  {name:<width$}  {v:>7.4}  {bar}");
        }
        let _ = writeln!(out, "\nPROGRAM");
        for q in &c.program.queries {
            let _ = writeln!(out, "-- {}\n{}\n", q.name, q.sql.trim());
        }
        let _ = writeln!(
            out,
            "INVARIANCE AUDIT: {}",
            if self.audit.clean { "clean" } else { "row identifiers referenced" }
        );
        for f in self.audit.findings.iter().filter(|f| !f.columns.is_empty()) {
            let _ = writeln!(out, "  {}: {}", f.query, f.columns.join(", "));
        }
        out
    }
}

/// Refit the champion on train plus val rows and score the test split.
///
/// The context is left bound to test.
pub fn deploy_champion(
    ctx: &mut ContextHandle,
    champion: &Champion,
    fit: &FitOptions,
    clock: &Clock,
) -> Result<TestReport, SelectError> {
    if let Some(map) = &champion.renaming {
        if ctx.renaming() != Some(map) {
            ctx.apply_renaming(map.clone())?;
        }
    }
    let task = ctx.manifest().task_type;
    let categoricals: BTreeSet<String> = champion.config.categorical_features.iter().cloned().collect();
    let timeout = Some(DEPLOY_QUERY_TIMEOUT);
    let x_train = materialize(ctx, &champion.program, Split::Train, &categoricals, timeout)?;
    let x_val = materialize(ctx, &champion.program, Split::Val, &categoricals, timeout)?;
    let x_test = materialize(ctx, &champion.program, Split::Test, &categoricals, timeout)?;

    let labels = |split| numeric_labels(&ctx.labels(split), task).map_err(SelectError::Labels);
    let mut y = labels(Split::Train)?;
    y.extend(labels(Split::Val)?);
    let y_test = labels(Split::Test)?;
    let x_fit = x_train.concat_rows(&x_val);

    let model = fit_with(&x_fit, &y, &champion.config, fit)?;
    let scores = model.predict(&x_test)?;
    let metrics = bundle_for(task, &scores, &y_test)?;

    let entities = ctx.entities(Split::Test);
    let test_labels = ctx.labels(Split::Test);
    let predictions = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| TestPrediction {
            row_id: x_test.row_ids[i],
            entity_id: entities[i].render(),
            label: test_labels[i].render(),
            score: s,
        })
        .collect();
    let mut importances: Vec<(String, f64)> = model.feature_importance().into_iter().collect();
    importances.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    Ok(TestReport {
        champion: champion.clone(),
        task_type: task,
        metrics,
        n_fit_rows: x_fit.n_rows(),
        predictions,
        importances,
        audit: invariance_audit(&champion.program, &ctx.manifest().rowid_columns),
        generated_at: clock.now_string(),
    })
}
