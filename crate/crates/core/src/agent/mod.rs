//! Policy-driven search loop.
//!
//! A rollout alternates policy turns with tool dispatch against the task
//! context, the validation harness and the workspace. Policies are either
//! scripted (a JSON list of actions) or a remote chat model.

mod action;
mod anonymize;
mod policy;
pub mod prompts;
mod rollout;

pub use action::{parse_script, Action, JsonText};
pub use anonymize::anonymize_schema;
pub use policy::{
    parse_completion, LlmPolicy, LlmSettings, Message, Policy, PolicyError, PolicyReply, Role, ScriptedPolicy, ToolCall,
};
pub use prompts::{PromptOptions, PromptVars, Prompts, ToolSpec};
pub use rollout::{
    parse_final_answer, run_rollout, AgentError, RolloutConfig, RolloutResult, StopReason, TrialSummary, TurnLog,
    EVAL_QUERIES_FILE, ROLLOUT_FILE, TRANSCRIPT_FILE,
};
