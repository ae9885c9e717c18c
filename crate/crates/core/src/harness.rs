//! `validate_program`: materialize, fit, score, diagnose, persist, report.
//!
//! Every call appends exactly one trial to the workspace. Problems caused by
//! the submitted program or config become failed trials with a failure kind;
//! only workspace storage errors are returned as `Err`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::featprog::{
    check_anchoring, materialize, parse_program, program_hash, FeatprogError, FeatureMatrix, FeatureProgram,
    DEFAULT_QUERY_TIMEOUT,
};
use crate::learner::{fit_with, resolve_config, FitOptions, LearnerError, ModelChoice, RawModelConfig, ResolvedConfig};
use crate::metrics::{bundle_for, MetricBundle};
use crate::relstore::{Cell, ContextHandle, Split, TaskType};
pub use crate::workspace::FailureKind;
use crate::workspace::{PredictionRecord, TrialRecord, Workspace, WorkspaceError};

/// Wall-clock limit for one whole validation.
pub const VALIDATION_BUDGET: Duration = Duration::from_secs(600);
/// Best and worst examples shown per side.
pub const DIAGNOSTIC_EXAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRequest {
    pub feature_queries_json: String,
    pub model_choice: String,
    pub model_config_json: String,
    pub split: Split,
    pub trial_name: String,
    pub parent_trial_id: Option<String>,
}

impl ValidationRequest {
    pub fn new(feature_queries_json: &str, model_choice: &str, model_config_json: &str) -> ValidationRequest {
        ValidationRequest {
            feature_queries_json: feature_queries_json.to_string(),
            model_choice: model_choice.to_string(),
            model_config_json: model_config_json.to_string(),
            split: Split::Val,
            trial_name: String::new(),
            parent_trial_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub row_id: usize,
    pub entity: String,
    pub label: f64,
    pub score: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRows {
    pub name: String,
    pub rows_returned: usize,
    pub n_columns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Target rows every block was merged onto.
    pub n_rows: usize,
    pub blocks: Vec<BlockRows>,
    /// Fraction of missing values per feature column, in matrix order.
    pub missingness: Vec<(String, f64)>,
    pub constant_columns: Vec<String>,
    pub warnings: Vec<String>,
    pub best: Vec<Example>,
    pub worst: Vec<Example>,
}

impl Diagnostics {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rows after merge: {} target rows", self.n_rows);
        for b in &self.blocks {
            let _ =
                writeln!(out, "  block {}: {} rows returned, {} feature columns", b.name, b.rows_returned, b.n_columns);
        }
        out.push_str("missingness:\n");
        for (c, r) in &self.missingness {
            let _ = writeln!(out, "  {c}: {r:.3}");
        }
        if self.constant_columns.is_empty() {
            out.push_str("constant columns: none\n");
        } else {
            let _ = writeln!(out, "constant columns: {}", self.constant_columns.join(", "));
        }
        if self.warnings.is_empty() {
            out.push_str("warnings: none\n");
        } else {
            out.push_str("warnings:\n");
            for w in &self.warnings {
                let _ = writeln!(out, "  - {w}");
            }
        }
        for (title, rows) in
            [("best examples (smallest error)", &self.best), ("worst examples (largest error)", &self.worst)]
        {
            let _ = writeln!(out, "{title}:");
            for e in rows {
                let _ = writeln!(
                    out,
                    "  row_id={} entity={} label={} score={:.6} error={:.6}",
                    e.row_id, e.entity, e.label, e.score, e.error
                );
            }
        }
        out
    }
}

/// Missingness, constant columns and best/worst examples on the scored split.
/// The error of a row is `|score - label|`: probability distance to the class
/// for classification, absolute error for regression.
pub fn compute_diagnostics(
    x: &FeatureMatrix,
    scores: &[f64],
    labels: &[f64],
    entities: &[Cell],
    k: usize,
) -> Diagnostics {
    assert_eq!(scores.len(), labels.len(), "scores and labels must align");
    let n = x.n_rows();
    let mut missingness = Vec::with_capacity(x.n_cols());
    let mut constant_columns = Vec::new();
    let mut warnings = Vec::new();
    for c in &x.columns {
        let nulls = (0..n).filter(|&i| c.data.is_null(i)).count();
        missingness.push((c.name.clone(), if n == 0 { 0.0 } else { nulls as f64 / n as f64 }));
        let values = c.data.to_categorical();
        let mut present = values.iter().flatten();
        let constant = match present.next() {
            None => true,
            Some(first) => present.all(|v| v == first) && nulls == 0,
        };
        if constant {
            constant_columns.push(c.name.clone());
            warnings.push(format!("column {} is constant on the scored split and carries no signal", c.name));
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let err = |i: usize| (scores[i] - labels[i]).abs();
    order.sort_by(|&a, &b| err(a).total_cmp(&err(b)).then(a.cmp(&b)));
    let example = |i: usize| Example {
        row_id: i,
        entity: entities.get(i).map(Cell::render).unwrap_or_default(),
        label: labels[i],
        score: scores[i],
        error: err(i),
    };
    let k = k.min(10);
    let best = order.iter().take(k).map(|&i| example(i)).collect();
    let mut worst_order = order.clone();
    worst_order.sort_by(|&a, &b| err(b).total_cmp(&err(a)).then(a.cmp(&b)));
    let worst = worst_order.iter().take(k).map(|&i| example(i)).collect();
    Diagnostics {
        n_rows: n,
        blocks: x
            .blocks
            .iter()
            .map(|b| BlockRows { name: b.name.clone(), rows_returned: b.rows_returned, n_columns: b.n_columns })
            .collect(),
        missingness,
        constant_columns,
        warnings,
        best,
        worst,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub trial_id: String,
    pub status: TrialStatus,
    pub failure_kind: Option<FailureKind>,
    pub message: Option<String>,
    pub metrics: Option<MetricBundle>,
    pub primary_score: Option<f64>,
    pub diagnostics: Option<Diagnostics>,
    pub resolved_config: Option<ResolvedConfig>,
    pub config_warnings: Vec<String>,
    pub program: Option<FeatureProgram>,
    pub program_hash: Option<String>,
    pub history: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct HarnessOptions {
    pub budget: Duration,
    pub query_timeout: Duration,
    pub fit: FitOptions,
    /// Seed handed to every resolved config.
    pub seed: u64,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        HarnessOptions {
            budget: VALIDATION_BUDGET,
            query_timeout: DEFAULT_QUERY_TIMEOUT,
            fit: FitOptions::default(),
            seed: 0,
        }
    }
}

type CacheKey = (String, Split, Vec<String>);

/// Per-rollout validation state: trial numbering and the materialization cache.
#[derive(Debug)]
pub struct Harness {
    options: HarnessOptions,
    clock: Clock,
    next_trial: usize,
    cache: HashMap<CacheKey, FeatureMatrix>,
}

struct Failure {
    kind: FailureKind,
    message: String,
}

impl Failure {
    fn new(kind: FailureKind, message: impl Into<String>) -> Failure {
        Failure { kind, message: message.into() }
    }
}

struct Success {
    metrics: MetricBundle,
    diagnostics: Diagnostics,
    preds: Vec<PredictionRecord>,
}

impl Harness {
    pub fn new(ws: &Workspace, options: HarnessOptions, clock: Clock) -> Result<Harness, WorkspaceError> {
        Ok(Harness { options, clock, next_trial: ws.trial_count()? + 1, cache: HashMap::new() })
    }

    pub fn options(&self) -> &HarnessOptions {
        &self.options
    }

    /// Run one validation and record it. The context is left bound to val.
    pub fn validate_program(
        &mut self,
        ctx: &mut ContextHandle,
        ws: &mut Workspace,
        req: &ValidationRequest,
    ) -> Result<ValidationReport, WorkspaceError> {
        let trial_id = format!("val_{:04}", self.next_trial);
        let started = Instant::now();
        let task = ctx.manifest().task_type;

        let program = parse_program(&req.feature_queries_json);
        let parsed = match &program {
            Ok(p) => self.parse_rest(p.clone(), req, task),
            Err(e) => Err(Failure::new(FailureKind::InvalidRequest, format!("feature_queries_json: {e}"))),
        };
        let mut config_warnings = Vec::new();
        let mut resolved = None;
        let outcome = parsed.and_then(|(program, cfg, warnings)| {
            config_warnings = warnings;
            resolved = Some(cfg.clone());
            self.run(ctx, &trial_id, &program, &cfg, &config_warnings, started)
        });
        if ctx.bound_split() != Some(Split::Val) {
            ctx.bind_split(Split::Val)?;
        }

        let program = program.ok();
        let hash = program.as_ref().map(program_hash);
        let mut record = TrialRecord {
            trial_id: trial_id.clone(),
            trial_name: if req.trial_name.is_empty() { trial_id.clone() } else { req.trial_name.clone() },
            parent_trial_id: req.parent_trial_id.clone(),
            created_at: self.clock.now_string(),
            split: req.split.to_string(),
            model_choice: req.model_choice.clone(),
            resolved_model_config: resolved.as_ref().map(|c| c.to_json().to_string()),
            feature_query_hash: hash.clone(),
            feature_block_names: program.as_ref().map(|p| p.names().join(",")).unwrap_or_default(),
            primary_metric: ctx.manifest().primary_metric.as_str().to_string(),
            primary_score: None,
            metrics_json: None,
            notes: String::new(),
        };
        let (success, failure) = match outcome {
            Ok(mut s) => {
                record.primary_score = Some(s.metrics.oriented_score);
                record.metrics_json = Some(s.metrics.to_json().to_string());
                ws.append_trial(&record, &std::mem::take(&mut s.preds))?;
                (Some(s), None)
            }
            Err(f) => {
                record.notes = f.kind.note(&f.message);
                ws.append_trial(&record, &[])?;
                (None, Some(f))
            }
        };
        self.next_trial += 1;
        let history = ws.trial_history()?;

        let mut text = String::new();
        match &failure {
            None => {
                let _ = writeln!(text, "TRIAL {} ({}): ok", record.trial_id, record.trial_name);
            }
            Some(f) => {
                let _ = writeln!(text, "TRIAL {} ({}): FAILED [{}]", record.trial_id, record.trial_name, f.kind);
                let _ = writeln!(text, "error: {}", f.message);
            }
        }
        if let Some(s) = &success {
            let _ = writeln!(text, "\nMETRICS\n{}", s.metrics.render());
        }
        if let Some(cfg) = &resolved {
            let mut shown = cfg.to_raw();
            shown.insert("model_choice".into(), cfg.model_choice.as_str().into());
            let _ = writeln!(text, "\nRESOLVED CONFIG\n{}", serde_json::Value::Object(shown));
            for w in &config_warnings {
                let _ = writeln!(text, "  note: {w}");
            }
        }
        if let Some(s) = &success {
            let _ = write!(text, "\nDIAGNOSTICS\n{}", s.diagnostics.render());
        }
        let _ = write!(text, "\n{history}");

        Ok(ValidationReport {
            trial_id,
            status: if failure.is_none() { TrialStatus::Ok } else { TrialStatus::Failed },
            failure_kind: failure.as_ref().map(|f| f.kind),
            message: failure.map(|f| f.message),
            primary_score: success.as_ref().map(|s| s.metrics.oriented_score),
            metrics: success.as_ref().map(|s| s.metrics.clone()),
            diagnostics: success.map(|s| s.diagnostics),
            resolved_config: resolved,
            config_warnings,
            program,
            program_hash: hash,
            history,
            text,
        })
    }

    fn parse_rest(
        &self,
        program: FeatureProgram,
        req: &ValidationRequest,
        task: TaskType,
    ) -> Result<(FeatureProgram, ResolvedConfig, Vec<String>), Failure> {
        if req.split != Split::Val {
            return Err(Failure::new(FailureKind::InvalidRequest, "only the val split can be scored during search"));
        }
        let choice = ModelChoice::from_str(req.model_choice.trim()).map_err(|_| {
            Failure::new(
                FailureKind::InvalidRequest,
                format!(
                    "unknown model_choice `{}`; expected one of {}",
                    req.model_choice,
                    ModelChoice::ALL.map(|m| m.as_str()).join(", ")
                ),
            )
        })?;
        let raw = parse_config(&req.model_config_json).map_err(|m| Failure::new(FailureKind::InvalidRequest, m))?;
        let res = resolve_config(choice, &raw, task, self.options.seed)
            .map_err(|e| Failure::new(FailureKind::InvalidRequest, e.to_string()))?;
        Ok((program, res.config, res.warnings))
    }

    fn materialized(
        &mut self,
        ctx: &mut ContextHandle,
        program: &FeatureProgram,
        split: Split,
        categoricals: &BTreeSet<String>,
        deadline: Instant,
    ) -> Result<FeatureMatrix, Failure> {
        let key = (program_hash(program), split, categoricals.iter().cloned().collect::<Vec<_>>());
        if let Some(x) = self.cache.get(&key) {
            return Ok(x.clone());
        }
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            return Err(budget_exceeded(self.options.budget));
        }
        let x = materialize(ctx, program, split, categoricals, Some(remaining.min(self.options.query_timeout)))
            .map_err(featprog_failure)?;
        self.cache.insert(key, x.clone());
        Ok(x)
    }

    fn run(
        &mut self,
        ctx: &mut ContextHandle,
        trial_id: &str,
        program: &FeatureProgram,
        cfg: &ResolvedConfig,
        config_warnings: &[String],
        started: Instant,
    ) -> Result<Success, Failure> {
        let deadline = started + self.options.budget;
        let anchors = check_anchoring(program);
        if !anchors.passed() {
            return Err(Failure::new(
                FailureKind::SqlError,
                format!("anchoring check failed:\n{}", anchors.failure_text()),
            ));
        }
        let task = ctx.manifest().task_type;
        let categoricals: BTreeSet<String> = cfg.categorical_features.iter().cloned().collect();
        let x_train = self.materialized(ctx, program, Split::Train, &categoricals, deadline)?;
        let x_val = self.materialized(ctx, program, Split::Val, &categoricals, deadline)?;
        let y_train =
            numeric_labels(&ctx.labels(Split::Train), task).map_err(|m| Failure::new(FailureKind::TrainingError, m))?;
        let y_val =
            numeric_labels(&ctx.labels(Split::Val), task).map_err(|m| Failure::new(FailureKind::TrainingError, m))?;

        let model = fit_with(&x_train, &y_train, cfg, &self.options.fit).map_err(learner_failure)?;
        let scores = model.predict(&x_val).map_err(learner_failure)?;
        if Instant::now() > deadline {
            return Err(budget_exceeded(self.options.budget));
        }
        let metrics =
            bundle_for(task, &scores, &y_val).map_err(|e| Failure::new(FailureKind::TrainingError, e.to_string()))?;

        let entities = ctx.entities(Split::Val);
        let mut diagnostics = compute_diagnostics(&x_val, &scores, &y_val, &entities, DIAGNOSTIC_EXAMPLES);
        let mut warnings: Vec<String> = config_warnings.to_vec();
        for b in &x_val.blocks {
            if b.rows_returned == 0 {
                warnings.push(format!("block {} returned no rows on val; its columns are all missing", b.name));
            }
        }
        for c in &cfg.categorical_features {
            if x_val.column(c).is_none() {
                warnings.push(format!("categorical feature {c} is not a column of the feature matrix"));
            }
        }
        warnings.append(&mut diagnostics.warnings);
        diagnostics.warnings = warnings;

        let labels = ctx.labels(Split::Val);
        let cutoffs = ctx.timestamps(Split::Val);
        let preds = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| PredictionRecord {
                trial_id: trial_id.to_string(),
                row_id: i as i64,
                entity_id: entities[i].render(),
                label: labels[i].render(),
                score: s,
                predicted_class: (task == TaskType::BinaryClassification)
                    .then(|| if s >= 0.5 { "1" } else { "0" }.to_string()),
                split: Split::Val.to_string(),
                eval_cutoff: (!cutoffs[i].is_null()).then(|| cutoffs[i].render()),
            })
            .collect();
        Ok(Success { metrics, diagnostics, preds })
    }
}

fn budget_exceeded(budget: Duration) -> Failure {
    Failure::new(FailureKind::Timeout, format!("validation exceeded its {}s budget", budget.as_secs()))
}

fn featprog_failure(e: FeatprogError) -> Failure {
    match e {
        FeatprogError::Timeout { .. } => Failure::new(FailureKind::Timeout, e.to_string()),
        _ => Failure::new(FailureKind::SqlError, e.to_string()),
    }
}

fn learner_failure(e: LearnerError) -> Failure {
    Failure::new(FailureKind::TrainingError, e.to_string())
}

/// Model config from tool text: empty or `null` means defaults; otherwise a
/// JSON object.
pub fn parse_config(text: &str) -> Result<RawModelConfig, String> {
    let t = text.trim();
    if t.is_empty() {
        return Ok(RawModelConfig::new());
    }
    match serde_json::from_str::<serde_json::Value>(t) {
        Ok(serde_json::Value::Object(m)) => Ok(m),
        Ok(serde_json::Value::Null) => Ok(RawModelConfig::new()),
        Ok(_) => Err("model_config_json must be a JSON object".into()),
        Err(e) => Err(format!("model_config_json: invalid JSON: {e}")),
    }
}

/// Labels as numbers. Binary labels must be 0/1 (booleans and the strings
/// "true"/"false" are accepted).
pub fn numeric_labels(cells: &[Cell], task: TaskType) -> Result<Vec<f64>, String> {
    cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let v = match c {
                Cell::Text(s) | Cell::Timestamp(crate::relstore::Timestamp(s)) => {
                    match s.trim().to_ascii_lowercase().as_str() {
                        "true" => Some(1.0),
                        "false" => Some(0.0),
                        other => other.parse::<f64>().ok(),
                    }
                }
                other => other.as_f64(),
            };
            let v = v.ok_or_else(|| format!("label of row {i} is not numeric: {}", c.render()))?;
            if task == TaskType::BinaryClassification && v != 0.0 && v != 1.0 {
                return Err(format!("binary label of row {i} must be 0 or 1, found {}", c.render()));
            }
            Ok(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthbench::{gen_triangle_task, TriangleSpec, CYCLE3_RAW_SQL};

    struct Fixture {
        _dir: tempfile::TempDir,
        ctx: ContextHandle,
        ws: Workspace,
        harness: Harness,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let spec = TriangleSpec { n: 120, p: 0.035, ..TriangleSpec::default() };
        let task = gen_triangle_task(&spec, &dir.path().join("task")).unwrap();
        let mut ctx = ContextHandle::open(task.manifest).unwrap();
        ctx.bind_split(Split::Val).unwrap();
        let run = dir.path().join("run");
        std::fs::create_dir_all(&run).unwrap();
        let ws = Workspace::open(&run, &ctx).unwrap();
        let harness = Harness::new(&ws, HarnessOptions::default(), Clock::logical()).unwrap();
        Fixture { _dir: dir, ctx, ws, harness }
    }

    fn program(sql: &str) -> String {
        serde_json::json!([{"name": "q", "sql": sql}]).to_string()
    }

    impl Fixture {
        fn run(&mut self, req: ValidationRequest) -> ValidationReport {
            self.harness.validate_program(&mut self.ctx, &mut self.ws, &req).unwrap()
        }
    }

    #[test]
    fn cycle_feature_separates_val_and_records_predictions() {
        let mut f = fixture();
        let m = f.ctx.split_len(Split::Val);
        let r = f.run(ValidationRequest::new(&program(CYCLE3_RAW_SQL), "gbdt", "{}"));
        assert_eq!(r.status, TrialStatus::Ok, "{}", r.text);
        assert_eq!(r.trial_id, "val_0001");
        assert_eq!(r.primary_score, Some(1.0));
        assert_eq!(f.ws.trial_count().unwrap(), 1);
        assert_eq!(f.ws.prediction_count("val_0001").unwrap(), m);
        let d = r.diagnostics.unwrap();
        assert_eq!((d.best.len(), d.worst.len()), (DIAGNOSTIC_EXAMPLES, DIAGNOSTIC_EXAMPLES));
        assert!(r.text.contains("METRICS") && r.text.contains("DIAGNOSTICS") && r.text.contains("TRIAL HISTORY"));

        let preds = f.ws.predictions("val_0001").unwrap();
        let ids: Vec<i64> = preds.iter().map(|p| p.row_id).collect();
        assert_eq!(ids, (0..m as i64).collect::<Vec<_>>());
        assert!(preds.iter().all(|p| p.predicted_class.as_deref() == Some(if p.score >= 0.5 { "1" } else { "0" })));
        assert!(preds.iter().all(|p| p.eval_cutoff.as_deref() == Some("1970-01-01 00:00:00")));
    }

    #[test]
    fn failures_are_recorded_with_their_kind() {
        let mut f = fixture();
        let cases = [
            (ValidationRequest::new(&program("SELEC row_id FROM eval_table"), "gbdt", "{}"), FailureKind::SqlError),
            (ValidationRequest::new(&program("SELECT 1 AS row_id FROM R"), "gbdt", "{}"), FailureKind::SqlError),
            (
                ValidationRequest::new(
                    &program("SELECT e.row_id, p.score FROM eval_table e JOIN eval_predictions p USING (row_id)"),
                    "gbdt",
                    "{}",
                ),
                FailureKind::SqlError,
            ),
            (ValidationRequest::new("not json", "gbdt", "{}"), FailureKind::InvalidRequest),
            (ValidationRequest::new(&program(CYCLE3_RAW_SQL), "lightgbm", "{}"), FailureKind::InvalidRequest),
            (ValidationRequest::new(&program(CYCLE3_RAW_SQL), "gbdt", "[1]"), FailureKind::InvalidRequest),
            (
                ValidationRequest {
                    split: Split::Test,
                    ..ValidationRequest::new(&program(CYCLE3_RAW_SQL), "gbdt", "{}")
                },
                FailureKind::InvalidRequest,
            ),
        ];
        for (i, (req, kind)) in cases.into_iter().enumerate() {
            let r = f.run(req);
            assert_eq!(r.status, TrialStatus::Failed);
            assert_eq!(r.failure_kind, Some(kind), "case {i}: {}", r.text);
            assert!(r.text.contains("FAILED"));
            assert_eq!(f.ws.trial_count().unwrap(), i + 1);
            assert_eq!(f.ws.prediction_count(&r.trial_id).unwrap(), 0);
        }
        let trials = f.ws.trials().unwrap();
        assert!(trials.iter().all(|t| t.primary_score.is_none() && t.failure_kind().is_some()));
        assert_eq!(f.ctx.bound_split(), Some(Split::Val));
    }

    #[test]
    fn clamped_config_is_echoed() {
        let mut f = fixture();
        let r = f.run(ValidationRequest::new(&program(CYCLE3_RAW_SQL), "gbdt", r#"{"learning_rate": 9, "bogus": 1}"#));
        assert_eq!(r.status, TrialStatus::Ok);
        assert_eq!(r.resolved_config.as_ref().unwrap().learning_rate, 0.3);
        assert!(r.text.contains("\"learning_rate\":0.3"), "{}", r.text);
        assert!(r.config_warnings.iter().any(|w| w.contains("clamped")));
        assert!(r.config_warnings.iter().any(|w| w.contains("bogus")));
        let stored = &f.ws.trials().unwrap()[0];
        let cfg: serde_json::Value = serde_json::from_str(stored.resolved_model_config.as_deref().unwrap()).unwrap();
        assert_eq!(cfg["learning_rate"], 0.3);
    }

    #[test]
    fn exhausted_budget_is_a_timeout() {
        let mut f = fixture();
        f.harness.options.budget = Duration::ZERO;
        let r = f.run(ValidationRequest::new(&program(CYCLE3_RAW_SQL), "gbdt", "{}"));
        assert_eq!(r.failure_kind, Some(FailureKind::Timeout), "{}", r.text);
    }

    #[test]
    fn diagnostics_flag_constant_and_missing_columns() {
        let x = FeatureMatrix {
            row_ids: vec![0, 1, 2],
            columns: vec![
                crate::featprog::FeatureColumn {
                    name: "q__c".into(),
                    data: crate::featprog::ColumnData::Numeric(vec![Some(1.0); 3]),
                },
                crate::featprog::FeatureColumn {
                    name: "q__m".into(),
                    data: crate::featprog::ColumnData::Numeric(vec![Some(1.0), None, Some(2.0)]),
                },
            ],
            declared_categoricals: Default::default(),
            blocks: vec![],
        };
        let ents = vec![Cell::Int(7), Cell::Int(8), Cell::Int(9)];
        let d = compute_diagnostics(&x, &[0.9, 0.2, 0.6], &[1.0, 0.0, 0.0], &ents, 2);
        assert_eq!(d.constant_columns, ["q__c"]);
        assert!((d.missingness.iter().find(|m| m.0 == "q__m").unwrap().1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(d.worst[0].entity, "9");
        assert_eq!(d.best[0].entity, "7");
        assert_eq!(d.best[1].entity, "8");
    }
}
