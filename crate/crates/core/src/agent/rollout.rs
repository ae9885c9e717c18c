use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::action::Action;
use super::anonymize::anonymize_schema;
use super::policy::{Message, Policy, PolicyReply, Role};
use super::prompts::{assemble, tool_specs, PromptOptions, PromptVars, Prompts, ToolSpec};
use crate::clock::Clock;
use crate::featprog::FeatureProgram;
use crate::harness::{Harness, HarnessOptions, TrialStatus, ValidationReport, ValidationRequest};
use crate::learner::{FitOptions, ModelChoice, ResolvedConfig};
use crate::relstore::{ContextHandle, RelstoreError, RenamingMap, Split, TaskManifest, TaskType};
use crate::workspace::{FailureKind, Workspace, WorkspaceError, WORKSPACE_FILE};

pub const ROLLOUT_FILE: &str = "rollout.json";
pub const TRANSCRIPT_FILE: &str = "transcript.txt";
pub const EVAL_QUERIES_FILE: &str = "eval_queries.log";
/// Row cap for exploration query observations.
pub const EXPLORATION_ROW_CAP: usize = 200;
/// Row cap for workspace query observations.
pub const WORKSPACE_ROW_CAP: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub max_turns: u32,
    pub max_validations: Option<u32>,
    pub per_turn_timeout: Duration,
    pub no_feedback: bool,
    pub no_workspace: bool,
    pub anonymize_schema: bool,
    pub allowed_models: Option<Vec<ModelChoice>>,
    pub seed: u64,
    #[serde(skip)]
    pub fit: FitOptions,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            max_turns: 60,
            max_validations: None,
            per_turn_timeout: Duration::from_secs(900),
            no_feedback: false,
            no_workspace: false,
            anonymize_schema: false,
            allowed_models: None,
            seed: 0,
            fit: FitOptions::default(),
        }
    }
}

/// One validation as seen from the rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_id: String,
    pub model_choice: String,
    pub status: TrialStatus,
    pub failure_kind: Option<FailureKind>,
    pub primary_score: Option<f64>,
    pub program_hash: Option<String>,
    pub program: Option<FeatureProgram>,
    pub resolved_config: Option<ResolvedConfig>,
}

impl TrialSummary {
    fn from_report(r: &ValidationReport, model_choice: &str) -> TrialSummary {
        TrialSummary {
            trial_id: r.trial_id.clone(),
            model_choice: model_choice.to_string(),
            status: r.status,
            failure_kind: r.failure_kind,
            primary_score: r.primary_score,
            program_hash: r.program_hash.clone(),
            program: r.program.clone(),
            resolved_config: r.resolved_config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnLog {
    pub turn: u32,
    /// Short labels of the actions taken, in order.
    pub actions: Vec<String>,
    pub tool_calls: usize,
    /// Best oriented score over all trials so far.
    pub running_best: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TurnBudget,
    ValidationBudget,
    PolicyFinished,
    FinalAnswer,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub rollout_index: usize,
    pub workspace_path: PathBuf,
    pub task_type: TaskType,
    pub policy: String,
    pub trials: Vec<TrialSummary>,
    pub best_trial_id: Option<String>,
    pub best_score: Option<f64>,
    pub turns: Vec<TurnLog>,
    pub stop_reason: StopReason,
    /// Schema renaming in force when the schema was anonymized; programs
    /// refer to the synthetic names.
    pub renaming: Option<RenamingMap>,
    /// Set when the rollout aborted on an I/O or policy error.
    pub failure: Option<String>,
}

impl RolloutResult {
    pub fn load(path: &Path) -> std::io::Result<RolloutResult> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn validations(&self) -> usize {
        self.trials.len()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("rollout directory {0} already holds a workspace")]
    WorkspaceExists(PathBuf),
    #[error(transparent)]
    Context(#[from] RelstoreError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Append-only text artifacts of a rollout.
struct Logs {
    transcript: BufWriter<File>,
    eval_queries: BufWriter<File>,
}

impl Logs {
    fn create(dir: &Path) -> std::io::Result<Logs> {
        Ok(Logs {
            transcript: BufWriter::new(File::create(dir.join(TRANSCRIPT_FILE))?),
            eval_queries: BufWriter::new(File::create(dir.join(EVAL_QUERIES_FILE))?),
        })
    }

    fn message(&mut self, turn: u32, m: &Message) -> std::io::Result<()> {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        };
        match &m.tool_call_id {
            Some(id) => writeln!(self.transcript, "=== turn {turn} | {role} ({id}) ===")?,
            None => writeln!(self.transcript, "=== turn {turn} | {role} ===")?,
        }
        if !m.content.is_empty() {
            writeln!(self.transcript, "{}", m.content)?;
        }
        for c in &m.tool_calls {
            writeln!(self.transcript, "-> {} [{}] {}", c.name, c.id, c.arguments)?;
        }
        writeln!(self.transcript)
    }

    fn eval_query(&mut self, turn: u32, trials: usize, sql: &str, ok: bool) -> std::io::Result<()> {
        let status = if ok { "ok" } else { "error" };
        writeln!(self.eval_queries, "turn={turn} trials={trials} status={status}\n{sql}\n")
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.transcript.flush()?;
        self.eval_queries.flush()
    }
}

struct Session<'a> {
    cfg: &'a RolloutConfig,
    ctx: ContextHandle,
    ws: Workspace,
    harness: Harness,
    logs: Logs,
    trials: Vec<TrialSummary>,
    history: Vec<Message>,
    turn: u32,
}

impl Session<'_> {
    fn push(&mut self, m: Message) -> std::io::Result<()> {
        self.logs.message(self.turn, &m)?;
        self.history.push(m);
        Ok(())
    }

    fn best(&self) -> Option<(usize, f64)> {
        let i = crate::select::argmax_earliest(self.trials.iter().map(|t| t.primary_score))?;
        Some((i, self.trials[i].primary_score?))
    }

    fn validation_budget_hit(&self) -> bool {
        self.cfg.max_validations.is_some_and(|m| self.trials.len() >= m as usize)
    }

    fn validate(&mut self, req: ValidationRequest) -> Result<String, WorkspaceError> {
        let report = self.harness.validate_program(&mut self.ctx, &mut self.ws, &req)?;
        self.trials.push(TrialSummary::from_report(&report, &req.model_choice));
        Ok(report.text)
    }

    /// Run one action; returns the observation text. Only workspace write
    /// failures are fatal.
    fn dispatch(&mut self, action: &Action, tools: &[ToolSpec]) -> Result<String, AgentError> {
        if let Some((name, _)) = action.to_tool_call() {
            if !tools.iter().any(|t| t.name == name) {
                return Ok(format!("Error: tool {name} is not available in this run"));
            }
        }
        Ok(match action {
            Action::ExecuteQuery { sql } => match self.ctx.execute_exploration(sql) {
                Ok(rs) => rs.render_observation(EXPLORATION_ROW_CAP),
                Err(e) => format!("Error: {e}"),
            },
            Action::GetTableInfo { table } => match self.ctx.get_table_info(table.as_deref()) {
                Ok(info) => info.render(),
                Err(e) => format!("Error: {e}"),
            },
            Action::ValidateProgram { feature_queries_json, model_choice, model_config_json } => {
                if self.validation_budget_hit() {
                    return Ok("Error: validation budget exhausted for this run".into());
                }
                if let Some(allowed) = &self.cfg.allowed_models {
                    let ok = model_choice.parse::<ModelChoice>().map(|m| allowed.contains(&m)).unwrap_or(true);
                    if !ok {
                        let names: Vec<&str> = allowed.iter().map(|m| m.as_str()).collect();
                        return Ok(format!(
                            "Error: model_choice {model_choice} is not available in this run; available: {}",
                            names.join(", ")
                        ));
                    }
                }
                let req =
                    ValidationRequest::new(feature_queries_json.as_str(), model_choice, model_config_json.as_str());
                self.validate(req)?
            }
            Action::GetTrialHistory => self.ws.trial_history()?,
            Action::QueryEvalWorkspace { sql } => {
                let res = self.ws.query_workspace(sql);
                self.logs.eval_query(self.turn, self.trials.len(), sql, res.is_ok())?;
                match res {
                    Ok(rs) => rs.render_observation(WORKSPACE_ROW_CAP),
                    Err(e) => format!("Error: {e}"),
                }
            }
            Action::FinalText { text } => text.clone(),
        })
    }

    /// Dispatch a reply's tool calls in order, appending results.
    fn run_calls(&mut self, reply: &PolicyReply, tools: &[ToolSpec], log: &mut TurnLog) -> Result<(), AgentError> {
        for call in &reply.tool_calls {
            let obs = match Action::from_tool_call(&call.name, &call.arguments) {
                Ok(action) => {
                    log.actions.push(action.name().to_string());
                    self.dispatch(&action, tools)?
                }
                Err(msg) => {
                    log.actions.push(format!("invalid:{}", call.name));
                    format!("Error: {msg}")
                }
            };
            log.tool_calls += 1;
            self.push(Message::tool_result(call, obs))?;
            if self.validation_budget_hit() {
                break;
            }
        }
        Ok(())
    }
}

fn assistant(reply: &PolicyReply) -> Message {
    Message {
        role: Role::Assistant,
        content: reply.text.clone(),
        tool_calls: reply.tool_calls.clone(),
        tool_call_id: None,
    }
}

fn prompt_vars(ctx: &ContextHandle) -> PromptVars {
    let m = ctx.manifest();
    let (entity_col, timestamp_col, target_col) = ctx.role_names();
    let task_description = match (ctx.renaming(), &m.task_description) {
        (None, Some(d)) => d.clone(),
        _ => format!("Predict {target_col} for each {entity_col} at its {timestamp_col}."),
    };
    let dataset_name = match (ctx.renaming(), &m.dataset_name) {
        (None, Some(d)) => d.clone(),
        _ => "dataset".to_string(),
    };
    PromptVars {
        task_type: m.task_type,
        task_description,
        dataset_name,
        entity_col,
        timestamp_col,
        target_col,
        n_val: ctx.split_len(Split::Val),
    }
}

/// Pull a `{feature_queries, model_choice, model_config}` object out of a
/// final answer. Code fences and surrounding prose are tolerated.
pub fn parse_final_answer(text: &str) -> ValidationRequest {
    let parsed = text
        .find('{')
        .zip(text.rfind('}'))
        .filter(|(a, b)| a < b)
        .and_then(|(a, b)| serde_json::from_str::<Value>(&text[a..=b]).ok());
    let field = |v: &Value, keys: &[&str]| -> String {
        match keys.iter().find_map(|k| v.get(*k)) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => String::new(),
            Some(other) => other.to_string(),
        }
    };
    match parsed {
        Some(v) => ValidationRequest::new(
            &field(&v, &["feature_queries", "feature_queries_json"]),
            &field(&v, &["model_choice"]),
            &field(&v, &["model_config", "model_config_json"]),
        ),
        None => ValidationRequest::new("", "", ""),
    }
}

/// Run one search rollout in `out_dir`, which must not already hold a
/// workspace.
pub fn run_rollout(
    manifest: &TaskManifest,
    policy: &mut dyn Policy,
    cfg: &RolloutConfig,
    rollout_index: usize,
    out_dir: &Path,
) -> Result<RolloutResult, AgentError> {
    std::fs::create_dir_all(out_dir)?;
    if out_dir.join(WORKSPACE_FILE).exists() {
        return Err(AgentError::WorkspaceExists(out_dir.to_path_buf()));
    }
    let mut ctx = ContextHandle::open(manifest.clone())?;
    if cfg.anonymize_schema {
        let map = anonymize_schema(&ctx, cfg.seed)?;
        ctx.apply_renaming(map)?;
    }
    ctx.bind_split(Split::Val)?;
    let ws = Workspace::open(out_dir, &ctx)?;
    let clock = if policy.is_deterministic() { Clock::logical() } else { Clock::System };
    let options = HarnessOptions { fit: cfg.fit, seed: cfg.seed, ..HarnessOptions::default() };
    let harness = Harness::new(&ws, options, clock)?;

    let opts = PromptOptions {
        no_feedback: cfg.no_feedback,
        no_workspace: cfg.no_workspace,
        allowed_models: cfg.allowed_models.as_ref().map(|v| v.iter().map(|m| m.as_str().to_string()).collect()),
    };
    let vars = prompt_vars(&ctx);
    let prompts = assemble(&vars, &opts);
    let tools = tool_specs(&vars, &opts);
    let task_type = manifest.task_type;

    let renaming = ctx.renaming().cloned();
    let mut s = Session {
        cfg,
        ctx,
        ws,
        harness,
        logs: Logs::create(out_dir)?,
        trials: Vec::new(),
        history: Vec::new(),
        turn: 0,
    };
    let (stop_reason, failure, turns) = match drive(&mut s, policy, &prompts, &tools) {
        Ok((reason, turns)) => (reason, None, turns),
        Err((e, turns)) => (StopReason::Failure, Some(e), turns),
    };
    s.logs.flush()?;

    let best = s.best();
    let result = RolloutResult {
        rollout_index,
        workspace_path: s.ws.path().to_path_buf(),
        task_type,
        policy: policy.describe(),
        best_trial_id: best.map(|(i, _)| s.trials[i].trial_id.clone()),
        best_score: best.map(|(_, v)| v),
        trials: s.trials,
        turns,
        stop_reason,
        renaming,
        failure,
    };
    let json = serde_json::to_string_pretty(&result).expect("rollout serializes");
    std::fs::write(out_dir.join(ROLLOUT_FILE), json)?;
    Ok(result)
}

type DriveResult = Result<(StopReason, Vec<TurnLog>), (String, Vec<TurnLog>)>;

fn drive(s: &mut Session<'_>, policy: &mut dyn Policy, prompts: &Prompts, tools: &[ToolSpec]) -> DriveResult {
    let mut turns = Vec::new();
    macro_rules! check {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(e) => return Err((e.to_string(), turns)),
            }
        };
    }
    check!(s.push(Message::new(Role::System, prompts.system.clone())));
    check!(s.push(Message::new(Role::User, prompts.execute.clone())));
    let max_turns = s.cfg.max_turns.max(1);

    if s.cfg.no_feedback {
        s.turn = 1;
        let mut log = TurnLog { turn: 1, actions: Vec::new(), tool_calls: 0, running_best: None };
        let mut answer = String::new();
        for step in 0..max_turns {
            if step + 1 == max_turns && step > 0 {
                check!(s.push(Message::new(Role::User, "This is your last step. Reply with the final JSON now.")));
            }
            let reply = match policy.next_message(&s.history, tools) {
                Ok(r) => r,
                Err(e) => {
                    turns.push(log);
                    return Err((e.to_string(), turns));
                }
            };
            check!(s.push(assistant(&reply)));
            if reply.tool_calls.is_empty() {
                answer = reply.text;
                break;
            }
            if let Err(e) = s.run_calls(&reply, tools, &mut log) {
                turns.push(log);
                return Err((e.to_string(), turns));
            }
        }
        log.actions.push("final_text".into());
        let req = parse_final_answer(&answer);
        let obs = check!(s.validate(req));
        check!(s.push(Message::new(Role::User, obs)));
        log.running_best = s.best().map(|(_, v)| v);
        turns.push(log);
        return Ok((StopReason::FinalAnswer, turns));
    }

    for turn in 1..=max_turns {
        s.turn = turn;
        if turn > 1 {
            let text = if turn == max_turns { &prompts.wrapup } else { &prompts.followup };
            check!(s.push(Message::new(Role::User, text.clone())));
        }
        let reply = match policy.next_message(&s.history, tools) {
            Ok(r) => r,
            Err(e) => return Err((e.to_string(), turns)),
        };
        let mut log = TurnLog { turn, actions: Vec::new(), tool_calls: 0, running_best: None };
        let idle = reply.text.is_empty() && reply.tool_calls.is_empty();
        if !idle {
            check!(s.push(assistant(&reply)));
            if reply.tool_calls.is_empty() {
                log.actions.push("final_text".into());
            }
        }
        if let Err(e) = s.run_calls(&reply, tools, &mut log) {
            log.running_best = s.best().map(|(_, v)| v);
            turns.push(log);
            return Err((e.to_string(), turns));
        }
        log.running_best = s.best().map(|(_, v)| v);
        if !idle {
            turns.push(log);
        }
        if s.validation_budget_hit() {
            return Ok((StopReason::ValidationBudget, turns));
        }
        if policy.finished() {
            return Ok((StopReason::PolicyFinished, turns));
        }
    }
    Ok((StopReason::TurnBudget, turns))
}
