//! Evaluation workspace: one embedded database per rollout holding every
//! validation trial and its per-row predictions.
//!
//! Two connections share the file. The writer is private to the harness and
//! only ever runs [`Workspace::append_trial`]. The reader is what the agent
//! queries: it opens the file read-only, attaches the task database read-only
//! as `ctx`, carries its own `train_table`, and runs behind the same
//! authorizer as the context connection, so target tables stay hidden.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rusqlite::{params, Connection, OpenFlags, OptionalExtension};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relstore::guard::{classify, AccessPolicy, Classified, Guard, GuardRejection};
use crate::relstore::{
    functions, map_engine_error, quote_ident, run_query, table_columns, ContextHandle, RelstoreError, RowSet, Split,
    DEFAULT_EXPLORATION_TIMEOUT, TRAIN_TABLE,
};

pub const WORKSPACE_FILE: &str = "workspace.db";
pub const WORKSPACE_ROW_CAP: usize = 500;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS trials (
    trial_id TEXT PRIMARY KEY,
    trial_name TEXT,
    parent_trial_id TEXT,
    created_at TIMESTAMPTZ,
    split TEXT,
    model_choice TEXT,
    resolved_model_config TEXT,
    feature_query_hash TEXT,
    feature_block_names TEXT,
    primary_metric TEXT,
    primary_score DOUBLE,
    metrics_json TEXT,
    notes TEXT
);
CREATE TABLE IF NOT EXISTS eval_predictions (
    trial_id TEXT,
    row_id INTEGER,
    entity_id TEXT,
    label TEXT,
    score DOUBLE,
    predicted_class TEXT,
    split TEXT,
    eval_cutoff TIMESTAMPTZ,
    PRIMARY KEY (trial_id, row_id)
);
";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("trial id {0} already exists in the workspace")]
    DuplicateTrialId(String),
    #[error("invalid workspace record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Query(#[from] RelstoreError),
    #[error("workspace storage error: {0}")]
    Engine(#[from] rusqlite::Error),
}

/// Why a trial failed. Stored in the trial's notes as `failure_kind=<kind>; <message>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    SqlError,
    Timeout,
    TrainingError,
    /// Malformed tool arguments: program JSON, model name, or config.
    InvalidRequest,
}

impl FailureKind {
    pub const ALL: [FailureKind; 4] =
        [FailureKind::SqlError, FailureKind::Timeout, FailureKind::TrainingError, FailureKind::InvalidRequest];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::SqlError => "sql_error",
            FailureKind::Timeout => "timeout",
            FailureKind::TrainingError => "training_error",
            FailureKind::InvalidRequest => "invalid_request",
        }
    }

    pub fn note(self, message: &str) -> String {
        format!("failure_kind={}; {message}", self.as_str())
    }

    /// Recover the kind from a failed trial's notes.
    pub fn from_note(note: &str) -> Option<FailureKind> {
        let rest = note.strip_prefix("failure_kind=")?;
        let kind = rest.split(';').next()?.trim();
        FailureKind::ALL.into_iter().find(|k| k.as_str() == kind)
    }
}

impl std::fmt::Display for FailureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub trial_name: String,
    pub parent_trial_id: Option<String>,
    pub created_at: String,
    pub split: String,
    pub model_choice: String,
    pub resolved_model_config: Option<String>,
    pub feature_query_hash: Option<String>,
    pub feature_block_names: String,
    pub primary_metric: String,
    /// Oriented (higher is better); `None` for failed trials.
    pub primary_score: Option<f64>,
    pub metrics_json: Option<String>,
    pub notes: String,
}

impl TrialRecord {
    pub fn failure_kind(&self) -> Option<FailureKind> {
        FailureKind::from_note(&self.notes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub trial_id: String,
    pub row_id: i64,
    pub entity_id: String,
    pub label: String,
    pub score: f64,
    pub predicted_class: Option<String>,
    pub split: String,
    pub eval_cutoff: Option<String>,
}

pub struct Workspace {
    path: PathBuf,
    writer: Connection,
    reader: Connection,
    guard: Guard,
    query_timeout: Duration,
}

impl std::fmt::Debug for Workspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workspace").field("path", &self.path).finish_non_exhaustive()
    }
}

impl Workspace {
    /// Open (creating if needed) `workspace.db` in `dir`, exposing `ctx`'s
    /// agent-visible tables to workspace queries.
    pub fn open(dir: &Path, ctx: &ContextHandle) -> Result<Workspace, WorkspaceError> {
        let path = dir.join(WORKSPACE_FILE);
        let writer = Connection::open(&path)?;
        writer.execute_batch(SCHEMA)?;

        let flags = OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI;
        let reader = Connection::open_with_flags(&path, flags)?;
        functions::register(&reader)?;
        let ctx_uri = format!("file:{}?mode=ro", uri_escape(&ctx.manifest().database_uri.to_string_lossy()));
        reader.execute("ATTACH DATABASE ?1 AS ctx", [ctx_uri])?;
        build_reader_tables(&reader, ctx)?;

        let mut policy = AccessPolicy { hidden: ctx.hidden_tables(), ..AccessPolicy::default() };
        if let Some(r) = ctx.renaming() {
            policy.view_only.extend(r.tables.iter().map(|t| t.original.to_ascii_lowercase()));
        }
        let guard = Guard::install(&reader, policy);
        guard.set_enabled(true);
        Ok(Workspace { path, writer, reader, guard, query_timeout: DEFAULT_EXPLORATION_TIMEOUT })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn set_query_timeout(&mut self, timeout: Duration) {
        self.query_timeout = timeout;
    }

    /// Insert a trial and its predictions in one transaction.
    pub fn append_trial(&mut self, trial: &TrialRecord, preds: &[PredictionRecord]) -> Result<(), WorkspaceError> {
        if let Some(p) = preds.iter().find(|p| p.trial_id != trial.trial_id) {
            return Err(WorkspaceError::InvalidRecord(format!(
                "prediction for trial {} attached to trial {}",
                p.trial_id, trial.trial_id
            )));
        }
        if trial.primary_score.is_none() && FailureKind::from_note(&trial.notes).is_none() {
            return Err(WorkspaceError::InvalidRecord(format!(
                "trial {} has no score and no failure note",
                trial.trial_id
            )));
        }
        let tx = self.writer.transaction()?;
        let exists: Option<i64> =
            tx.query_row("SELECT 1 FROM trials WHERE trial_id = ?1", [&trial.trial_id], |r| r.get(0)).optional()?;
        if exists.is_some() {
            return Err(WorkspaceError::DuplicateTrialId(trial.trial_id.clone()));
        }
        tx.execute(
            "INSERT INTO trials VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13)",
            params![
                trial.trial_id,
                trial.trial_name,
                trial.parent_trial_id,
                trial.created_at,
                trial.split,
                trial.model_choice,
                trial.resolved_model_config,
                trial.feature_query_hash,
                trial.feature_block_names,
                trial.primary_metric,
                trial.primary_score,
                trial.metrics_json,
                trial.notes,
            ],
        )?;
        {
            let mut stmt = tx.prepare("INSERT INTO eval_predictions VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)")?;
            for p in preds {
                stmt.execute(params![
                    p.trial_id,
                    p.row_id,
                    p.entity_id,
                    p.label,
                    p.score,
                    p.predicted_class,
                    p.split,
                    p.eval_cutoff
                ])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    /// Run an agent query: read-only, capped at 500 rows without a LIMIT.
    pub fn query_workspace(&self, sql: &str) -> Result<RowSet, WorkspaceError> {
        let rejected = |r: GuardRejection| match r {
            GuardRejection::ReadOnly(m) => RelstoreError::ReadOnlyViolation(m),
            GuardRejection::Invalid(m) => RelstoreError::Sql(m),
        };
        let (sql, cap) = match classify(sql).map_err(rejected)? {
            Classified::Sql { sql, has_limit } => (sql, if has_limit { None } else { Some(WORKSPACE_ROW_CAP) }),
            Classified::ShowTables => (
                String::from(
                    "SELECT name FROM (SELECT name FROM main.sqlite_master WHERE type = 'table' \
                     UNION SELECT name FROM temp.sqlite_master WHERE type IN ('table', 'view')) ORDER BY name",
                ),
                None,
            ),
            Classified::Describe(t) => (format!("PRAGMA table_info({})", quote_ident(&t)), None),
        };
        self.guard.take_violation();
        self.guard.arm(Some(self.query_timeout));
        let out = run_query(&self.reader, &sql, cap);
        self.guard.arm(None);
        let violated = self.guard.take_violation();
        Ok(out.map_err(|e| map_engine_error(e, violated, Some(self.query_timeout)))?)
    }

    pub fn trial_count(&self) -> Result<usize, WorkspaceError> {
        let n: i64 = self.writer.query_row("SELECT COUNT(*) FROM trials", [], |r| r.get(0))?;
        Ok(n as usize)
    }

    pub fn prediction_count(&self, trial_id: &str) -> Result<usize, WorkspaceError> {
        let n: i64 =
            self.writer
                .query_row("SELECT COUNT(*) FROM eval_predictions WHERE trial_id = ?1", [trial_id], |r| r.get(0))?;
        Ok(n as usize)
    }

    /// All trials in insertion order.
    pub fn trials(&self) -> Result<Vec<TrialRecord>, WorkspaceError> {
        let mut stmt = self.writer.prepare("SELECT * FROM trials ORDER BY rowid")?;
        let rows = stmt.query_map([], |r| {
            Ok(TrialRecord {
                trial_id: r.get(0)?,
                trial_name: r.get(1)?,
                parent_trial_id: r.get(2)?,
                created_at: r.get(3)?,
                split: r.get(4)?,
                model_choice: r.get(5)?,
                resolved_model_config: r.get(6)?,
                feature_query_hash: r.get(7)?,
                feature_block_names: r.get(8)?,
                primary_metric: r.get(9)?,
                primary_score: r.get(10)?,
                metrics_json: r.get(11)?,
                notes: r.get(12)?,
            })
        })?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    pub fn predictions(&self, trial_id: &str) -> Result<Vec<PredictionRecord>, WorkspaceError> {
        let mut stmt = self.writer.prepare("SELECT * FROM eval_predictions WHERE trial_id = ?1 ORDER BY row_id")?;
        let rows = stmt.query_map([trial_id], |r| {
            Ok(PredictionRecord {
                trial_id: r.get(0)?,
                row_id: r.get(1)?,
                entity_id: r.get(2)?,
                label: r.get(3)?,
                score: r.get(4)?,
                predicted_class: r.get(5)?,
                split: r.get(6)?,
                eval_cutoff: r.get(7)?,
            })
        })?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// One line per trial; the best successful trial is starred.
    pub fn trial_history(&self) -> Result<String, WorkspaceError> {
        Ok(render_history(&self.trials()?))
    }
}

/// Trial history text for the given trials.
pub fn render_history(trials: &[TrialRecord]) -> String {
    let mut out = String::new();
    let metric = trials.first().map_or("score", |t| t.primary_metric.as_str());
    let _ = writeln!(
        out,
        "TRIAL HISTORY ({} trials; primary metric {metric}; scores are higher-is-better{})",
        trials.len(),
        if metric == "mae" { ", i.e. -MAE" } else { "" }
    );
    if trials.is_empty() {
        out.push_str("  no trials\n");
        return out;
    }
    let best = crate::select::argmax_earliest(trials.iter().map(|t| t.primary_score));
    for (i, t) in trials.iter().enumerate() {
        let score = match (t.primary_score, t.failure_kind()) {
            (Some(s), _) => format!("score={s:.6}"),
            (None, Some(k)) => format!("FAILED ({k})"),
            (None, None) => "FAILED".to_string(),
        };
        let _ = writeln!(
            out,
            "{} {}  {}  {}  {}  blocks=[{}]",
            if best == Some(i) { "*" } else { " " },
            t.trial_id,
            t.trial_name,
            t.model_choice,
            score,
            t.feature_block_names
        );
    }
    out
}

fn uri_escape(path: &str) -> String {
    path.replace('%', "%25").replace('?', "%3f").replace('#', "%23")
}

/// Temp `train_table` and, under anonymization, the synthetic-name views.
fn build_reader_tables(conn: &Connection, ctx: &ContextHandle) -> Result<(), WorkspaceError> {
    let (e, t, y) = ctx.role_names();
    let (ents, tss, labels, decl) = ctx.target_values(Split::Train);
    conn.execute_batch(&format!(
        "CREATE TEMP TABLE {TRAIN_TABLE} ({} {}, {} {}, {} {});",
        quote_ident(&e),
        decl[0].as_deref().unwrap_or(""),
        quote_ident(&t),
        decl[1].as_deref().unwrap_or(""),
        quote_ident(&y),
        decl[2].as_deref().unwrap_or(""),
    ))?;
    let tx = conn.unchecked_transaction()?;
    {
        let mut stmt = tx.prepare(&format!("INSERT INTO temp.{TRAIN_TABLE} VALUES (?1, ?2, ?3)"))?;
        for ((a, b), c) in ents.iter().zip(tss).zip(labels) {
            stmt.execute(params![a, b, c])?;
        }
    }
    tx.commit()?;
    if let Some(r) = ctx.renaming() {
        for tr in &r.tables {
            let cols: Vec<String> =
                tr.columns.iter().map(|(o, s)| format!("{} AS {}", quote_ident(o), quote_ident(s))).collect();
            conn.execute_batch(&format!(
                "CREATE TEMP VIEW {} AS SELECT {} FROM ctx.{};",
                quote_ident(&tr.synthetic),
                cols.join(", "),
                quote_ident(&tr.original)
            ))?;
        }
    }
    // Fail early if the attached context is unreadable.
    table_columns(conn, TRAIN_TABLE)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relstore::{Cell, PrimaryMetric, TargetSpec, TaskManifest, TaskType};

    pub(crate) fn small_task(dir: &Path) -> TaskManifest {
        let db = dir.join("ctx.db");
        let conn = Connection::open(&db).unwrap();
        conn.execute_batch(
            "CREATE TABLE users(user_id INTEGER PRIMARY KEY, country TEXT);
             INSERT INTO users VALUES (1,'a'),(2,'b'),(3,'a'),(4,'c');
             CREATE TABLE __target_train(user_id INTEGER, ts TIMESTAMP, label INTEGER);
             INSERT INTO __target_train VALUES (1,'2020-01-01',1),(2,'2020-01-01',0);
             CREATE TABLE __target_val(user_id INTEGER, ts TIMESTAMP, label INTEGER);
             INSERT INTO __target_val VALUES (3,'2020-02-01',1),(4,'2020-02-01',0),(1,'2020-02-01',1);
             CREATE TABLE __target_test(user_id INTEGER, ts TIMESTAMP, label INTEGER);
             INSERT INTO __target_test VALUES (2,'2020-03-01',1);",
        )
        .unwrap();
        let spec = |t: &str| TargetSpec {
            table: t.into(),
            entity_col: "user_id".into(),
            timestamp_col: "ts".into(),
            target_col: "label".into(),
        };
        TaskManifest {
            database_uri: db,
            context_tables: vec!["users".into()],
            train: spec("__target_train"),
            val: spec("__target_val"),
            test: spec("__target_test"),
            task_type: TaskType::BinaryClassification,
            primary_metric: PrimaryMetric::Auroc,
            rowid_columns: vec![],
            rng_seed: 0,
            dataset_name: None,
            task_description: None,
        }
    }

    fn trial(id: &str, score: Option<f64>) -> TrialRecord {
        TrialRecord {
            trial_id: id.into(),
            trial_name: format!("name {id}"),
            parent_trial_id: None,
            created_at: "2000-01-01 00:00:00.000000+00:00".into(),
            split: "val".into(),
            model_choice: "gbdt".into(),
            resolved_model_config: Some("{}".into()),
            feature_query_hash: Some("abc".into()),
            feature_block_names: "q".into(),
            primary_metric: "auroc".into(),
            primary_score: score,
            metrics_json: score.map(|s| format!("{{\"auroc\": {s}}}")),
            notes: if score.is_some() { String::new() } else { FailureKind::SqlError.note("no such table") },
        }
    }

    fn preds(id: &str, m: usize) -> Vec<PredictionRecord> {
        (0..m)
            .map(|i| PredictionRecord {
                trial_id: id.into(),
                row_id: i as i64,
                entity_id: format!("e{i}"),
                label: (i % 2).to_string(),
                score: i as f64 / m as f64,
                predicted_class: Some("0".into()),
                split: "val".into(),
                eval_cutoff: Some("2020-02-01".into()),
            })
            .collect()
    }

    fn open() -> (tempfile::TempDir, ContextHandle, Workspace) {
        let dir = tempfile::tempdir().unwrap();
        let ctx = ContextHandle::open(small_task(dir.path())).unwrap();
        let ws = Workspace::open(dir.path(), &ctx).unwrap();
        (dir, ctx, ws)
    }

    #[test]
    fn append_counts_and_duplicates() {
        let (_d, _ctx, mut ws) = open();
        ws.append_trial(&trial("val_0001", Some(0.7)), &preds("val_0001", 600)).unwrap();
        assert_eq!(ws.prediction_count("val_0001").unwrap(), 600);
        ws.append_trial(&trial("val_0002", None), &[]).unwrap();
        assert_eq!(ws.trial_count().unwrap(), 2);
        let n = ws.query_workspace("SELECT COUNT(*) AS n FROM eval_predictions").unwrap();
        assert_eq!(n.rows[0][0], Cell::Int(600));
        assert!(matches!(
            ws.append_trial(&trial("val_0001", Some(0.1)), &[]),
            Err(WorkspaceError::DuplicateTrialId(_))
        ));
        assert_eq!(ws.trial_count().unwrap(), 2);
    }

    #[test]
    fn cross_trial_join_and_caps() {
        let (_d, _ctx, mut ws) = open();
        ws.append_trial(&trial("val_0001", Some(0.7)), &preds("val_0001", 600)).unwrap();
        ws.append_trial(&trial("val_0003", Some(0.8)), &preds("val_0003", 600)).unwrap();
        let joined = ws
            .query_workspace(
                "SELECT COUNT(*) FROM eval_predictions p1 JOIN eval_predictions p3 ON p1.row_id = p3.row_id \
                 WHERE p1.trial_id = 'val_0001' AND p3.trial_id = 'val_0003' AND p1.entity_id = p3.entity_id AND p1.label = p3.label",
            )
            .unwrap();
        assert_eq!(joined.rows[0][0], Cell::Int(600));
        let capped = ws.query_workspace("SELECT * FROM eval_predictions").unwrap();
        assert_eq!(capped.len(), WORKSPACE_ROW_CAP);
        assert!(capped.truncated);
        let example = ws
            .query_workspace(
                "SELECT p1.entity_id, p1.label, p1.score AS score_v1, p3.score AS score_v3
                 FROM eval_predictions p1
                 JOIN eval_predictions p3 ON p1.row_id = p3.row_id
                 WHERE p1.trial_id = 'val_0001' AND p3.trial_id = 'val_0003'
                   AND ABS(p3.score - CAST(p3.label AS DOUBLE))
                     < ABS(p1.score - CAST(p1.label AS DOUBLE))
                 ORDER BY ABS(p1.score - CAST(p1.label AS DOUBLE)) DESC LIMIT 20",
            )
            .unwrap();
        assert!(example.len() <= 20);
    }

    #[test]
    fn mutations_are_rejected() {
        let (_d, _ctx, mut ws) = open();
        ws.append_trial(&trial("val_0001", Some(0.7)), &[]).unwrap();
        for sql in [
            "DELETE FROM trials",
            "UPDATE trials SET primary_score = 1",
            "INSERT INTO trials(trial_id) VALUES ('x')",
            "DROP TABLE trials",
            "CREATE TABLE t(x)",
            "ATTACH DATABASE 'x.db' AS y",
            "SELECT 1; DELETE FROM trials",
            "WITH x AS (SELECT 1) DELETE FROM trials",
        ] {
            let err = ws.query_workspace(sql).unwrap_err();
            assert!(
                matches!(
                    err,
                    WorkspaceError::Query(RelstoreError::ReadOnlyViolation(_))
                        | WorkspaceError::Query(RelstoreError::Sql(_))
                ),
                "{sql}: {err:?}"
            );
        }
        assert!(matches!(
            ws.query_workspace("DELETE FROM trials"),
            Err(WorkspaceError::Query(RelstoreError::ReadOnlyViolation(_)))
        ));
        assert_eq!(ws.trial_count().unwrap(), 1);
    }

    #[test]
    fn context_tables_visible_targets_hidden() {
        let (_d, _ctx, ws) = open();
        let users = ws.query_workspace("SELECT COUNT(*) FROM users").unwrap();
        assert_eq!(users.rows[0][0], Cell::Int(4));
        let train = ws.query_workspace("SELECT SUM(label) FROM train_table").unwrap();
        assert_eq!(train.rows[0][0], Cell::Int(1));
        for sql in ["SELECT * FROM __target_val", "SELECT * FROM ctx.__target_test"] {
            assert!(ws.query_workspace(sql).is_err(), "{sql}");
        }
    }

    #[test]
    fn history_rendering() {
        let (_d, _ctx, mut ws) = open();
        let empty = ws.trial_history().unwrap();
        assert_eq!(empty.lines().count(), 2);
        assert!(empty.contains("no trials"));
        ws.append_trial(&trial("val_0001", Some(0.7)), &[]).unwrap();
        ws.append_trial(&trial("val_0002", None), &[]).unwrap();
        ws.append_trial(&trial("val_0003", Some(0.9)), &[]).unwrap();
        let h = ws.trial_history().unwrap();
        let lines: Vec<&str> = h.lines().skip(1).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("FAILED (sql_error)"));
        assert!(lines[2].starts_with('*'));
        assert_eq!(h.matches('*').count(), 1);
    }

    #[test]
    fn failure_notes_roundtrip() {
        for k in FailureKind::ALL {
            assert_eq!(FailureKind::from_note(&k.note("boom; again")), Some(k));
        }
        assert_eq!(FailureKind::from_note("all good"), None);
    }
}
