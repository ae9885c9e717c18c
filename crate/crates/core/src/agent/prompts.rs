//! Prompt and tool-description templates.
//!
//! Templates are plain text with `{placeholder}` tokens filled per task.
//! Ablations remove the blocks that describe a disabled capability.

use serde_json::{json, Value};

use crate::relstore::TaskType;

/// Per-task values substituted into the templates.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptVars {
    pub task_type: TaskType,
    pub task_description: String,
    pub dataset_name: String,
    pub entity_col: String,
    pub timestamp_col: String,
    pub target_col: String,
    pub n_val: usize,
}

/// Which capabilities the prompts should describe.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptOptions {
    pub no_feedback: bool,
    pub no_workspace: bool,
    /// Model names available in this run when the menu is restricted.
    pub allowed_models: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompts {
    pub system: String,
    pub execute: String,
    pub followup: String,
    pub wrapup: String,
}

/// Function-calling schema entry for one tool.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

impl ToolSpec {
    pub fn to_openai(&self) -> Value {
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            }
        })
    }
}

const EXECUTE_QUERY_DOC: &str = r#"Execute a SQL query and return results.

Args:
    query (str): The SQL query to execute.

Returns:
    For SELECT queries: list of dicts (column -> value per row).
    For non-SELECT operations: status dict with 'status' and 'message'.
    For errors: error message string starting with "Error:".

Note: SELECT queries without a LIMIT clause are automatically
capped at 200 rows."#;

const GET_TABLE_INFO_DOC: &str = r#"Get comprehensive information about table(s) in the database.

Returns schema, primary keys, foreign keys, and row counts.
If table_name is provided, returns info for that table;
otherwise returns info for all tables.

Args:
    table_name (str, optional): Name of a specific table.
        If None, returns info for all tables."#;

const VALIDATE_PROGRAM_DOC: &str = r#"Test a predictive program using a wrapped model on a data split.

Args:
    feature_queries_json: JSON string of feature queries.
        Format: [{"name": "query_name", "sql": "SELECT ..."}]
        Each query must be anchored on eval_table, return row_id,
        and produce feature columns for each target row. eval_table
        contains the split rows currently being scored, including
        row_id, {entity_col}, and {timestamp_col}. For timestamped
        source tables, feature queries must filter source records to
        occur before eval_table.{timestamp_col}.
        `train_table` is available and contains labeled training rows.
    model_choice: One of 7 learners: "gbdt", "rf", "dart", "goss",
        "xgboost", "xgb_dart", "catboost".
        - gbdt:     LightGBM standard gradient boosting
        - rf:       Random Forest via LightGBM
        - dart:     LightGBM with DART dropout regularization
        - goss:     LightGBM with gradient-based subsampling
        - xgboost:  XGBoost (second-order gradients)
        - xgb_dart: XGBoost with DART dropout
        - catboost: CatBoost (ordered boosting)
    model_config_json: JSON dict of hyperparameters (optional).
        Common keys: n_estimators, learning_rate, max_depth,
                     subsample, colsample_bytree.
        LightGBM variants also accept: min_child_samples,
                     lambda_l1, lambda_l2.
        XGBoost variants also accept: min_child_weight,
                     reg_alpha, reg_lambda.
        CatBoost also accepts: l2_leaf_reg.
        Out-of-bounds values are clamped. Unknown keys are ignored.

Returns:
    Formatted string with metrics, diagnostics, and trial history."#;

const GET_TRIAL_HISTORY_DOC: &str = r#"Get a summary of all previous validation trials.

Returns:
    Formatted string showing trial history with scores and
    approach summaries."#;

const QUERY_EVAL_WORKSPACE_DOC: &str = r#"Query the evaluation workspace to analyse trial results.

The workspace is a SQLite database with the following tables:

  trials
    trial_id TEXT, trial_name TEXT, parent_trial_id TEXT,
    created_at TIMESTAMPTZ, split TEXT, model_choice TEXT,
    resolved_model_config TEXT, feature_query_hash TEXT,
    feature_block_names TEXT, primary_metric TEXT,
    primary_score DOUBLE, metrics_json TEXT, notes TEXT


  eval_predictions
    trial_id TEXT, row_id INTEGER, entity_id TEXT, label TEXT,
    score DOUBLE, predicted_class TEXT, split TEXT,
    eval_cutoff TIMESTAMPTZ

row_id is stable across trials for the same split, so you can
join two trials on row_id to compare predictions on the same examples.

IMPORTANT: These tables are analysis artifacts only. Do NOT use
them as feature sources in your SQL feature queries.

Args:
    sql: A SELECT query to run against the workspace.

Returns:
    Query results (up to 500 rows) or an error message."#;

const CLS_HEADER: &str = "You are a data scientist building a predictive pipeline for a
ENTITY CLASSIFICATION task.

GOAL: Find a set of SQL feature queries + a model choice that
accurately predict the class label ({target_col}) for ALL entities
in the validation set.
";

const REG_HEADER: &str = "You are a data scientist building a predictive pipeline for a
ENTITY REGRESSION task.

GOAL: Find a set of SQL feature queries + a model choice that
accurately predict the numerical value ({target_col}) for ALL
entities in the validation set.
";

const TOOL_SQL: &str = "SQL tools (execute_query, get_table_info, etc.)
   -- explore and query the database";
const TOOL_VALIDATE: &str = "validate_program(feature_queries_json, model_choice, model_config_json)
   -- train and evaluate your feature pipeline on the validation split";
const TOOL_HISTORY: &str = "get_trial_history()
   -- see what you've already tried and their scores";
const TOOL_WORKSPACE: &str = "query_eval_workspace(sql)
   -- analyze the evaluation workspace (trials, eval_predictions)";

const RULES: &str = "Rules:
- Use SQL tools to explore the database. Do NOT guess table/column names.
- Start by running SHOW TABLES and PRAGMA table_info('table') to
  understand the schema.
- train_table contains labeled training examples. Use it to learn patterns.
- eval_table contains the current rows being scored (val/test input keys).
- Always anchor feature SQL on eval_table (not train_table) -- eval_table
  is swapped with the correct split at each call.
- Write SQL queries that extract features PER TARGET ROW.
- eval_table contains one row per target example, including row_id,
  {entity_col}, and {timestamp_col}.
- Each feature query must be anchored on eval_table and return row_id.
- For timestamped source tables, include temporal filters of the form
  source_time < eval_table.{timestamp_col}.
- Do not group only by {entity_col}: the same entity may appear at
  multiple prediction timestamps. Group by row_id, and merge features
  back by row_id.
";

const RULES_FEEDBACK: &str = "- Call validate_program() with your SQL feature blocks, model_choice,
  and optional model_config_json to run on the validation set.
- Iterate based on the metrics, diagnostics, and error examples returned.
";

const CLS_BULLETS: &str = "
- For BINARY classification, the model outputs probability scores (0-1).
- Think about features like: entity frequency, recency, aggregates from
  related tables.
";
const CLS_BULLET_FEEDBACK: &str = "- The validation tool returns metrics (AUROC, F1, etc.)
  + diagnostics.
";

const REG_BULLETS_HEAD: &str = "
- The model outputs a numeric value for each entity.
";
const REG_BULLET_FEEDBACK: &str = "- The validation tool returns metrics (MAE)
  + diagnostics.
";
const REG_BULLETS_TAIL: &str = "- Think about: historical averages, trends, aggregates from related
  tables.
- Primary objective for this run is MAE: minimize absolute error.
";

const MODE_INTRO: &str = "
=== WRAPPED MODEL MODE ===

Your validate_program() tool accepts:
  - feature_queries_json: SQL feature queries (same as before)
  - model_choice: one of the 7 learners below
  - model_config_json: optional JSON dict of hyperparameters
";

const MODE_INTRO_DIRECT: &str = "
=== WRAPPED MODEL MODE ===

You have no validation tool in this run. Explore the database, then
answer with your final program as a single JSON object:
  {\"feature_queries\": [{\"name\": \"query_name\", \"sql\": \"SELECT ...\"}],
   \"model_choice\": \"gbdt\",
   \"model_config\": {}}
  - feature_queries: SQL feature queries anchored on eval_table
  - model_choice: one of the 7 learners below
  - model_config: optional JSON dict of hyperparameters
";

const CLS_MENU: &str = "
Available models:
  1. \"gbdt\"     -- Standard Gradient Boosted Trees. Fast, strong default.
                   Config: n_estimators (50-500), learning_rate (0.01-0.3),
                           max_depth (2-10), min_child_samples (1-100),
                           subsample (0.5-1.0), colsample_bytree (0.5-1.0)
                   Regularization: lambda_l1 (0.0-10.0), lambda_l2 (0.0-10.0)
  2. \"rf\"       -- Random Forest (bagging; less sensitive to learning rate).
                   Config: same keys as gbdt
  3. \"dart\"     -- DART Boosting (dropout regularization).
                   Config: same keys as gbdt
  4. \"goss\"     -- GOSS (gradient-based subsampling; fast on large datasets).
                   Config: same keys as gbdt
  5. \"xgboost\"  -- XGBoost (second-order gradients; different regularization).
                   Config: n_estimators (50-500), learning_rate (0.01-0.3),
                           max_depth (2-10), min_child_weight (1-100),
                           subsample (0.5-1.0), colsample_bytree (0.5-1.0)
                   Regularization: reg_alpha (0.0-10.0), reg_lambda (0.0-10.0)
  6. \"xgb_dart\" -- XGBoost + DART dropout.
                   Config: same keys as xgboost
  7. \"catboost\" -- CatBoost (ordered boosting; robust on heterogeneous features).
                   Config: n_estimators (50-500), learning_rate (0.01-0.3),
                           max_depth (2-10), l2_leaf_reg (0.1-10.0)

Categorical features (all 7 learners):
  Add \"categorical_features\" inside model_config_json as a list of
  \"<query_name>__<col>\" names to treat columns natively as categorical.
  High-cardinality columns (>~4000 levels) should be bucketed in SQL first.

Constraints:
  - Do NOT write free-form training code, custom objectives, or ensembles.
  - Do NOT perform hyperparameter search loops -- one config per call.
  - Out-of-bounds config values are clamped automatically.
  - Omitted config fields use strong defaults.
  - The environment handles train/val splitting, fitting, and evaluation.
";

const REG_MENU: &str = "
Available models:
  1. \"gbdt\"     -- Standard Gradient Boosted Trees. Fast, strong default.
                   Config: n_estimators (50-500), learning_rate (0.01-0.3),
                           max_depth (2-10), min_child_samples (1-100),
                           subsample (0.5-1.0), colsample_bytree (0.5-1.0)
                   objective: \"regression_l1\" (MAE), \"regression_l2\" (MSE),
                              \"huber\"
                   Default: \"regression_l1\" -- directly minimises eval metric.
  2. \"rf\"       -- Random Forest (bagging; less sensitive to learning rate).
                   Config: same keys as gbdt (including objective)
  3. \"dart\"     -- DART Boosting (dropout regularization).
                   Config: same keys as gbdt (including objective)
  4. \"goss\"     -- GOSS (gradient-based subsampling; fast on large datasets).
                   Config: same keys as gbdt (including objective)
  5. \"xgboost\"  -- XGBoost (second-order gradients).
                   Config: n_estimators (50-500), learning_rate (0.01-0.3),
                           max_depth (2-10), min_child_weight (1-100),
                           subsample (0.5-1.0), colsample_bytree (0.5-1.0)
                   objective: \"reg:absoluteerror\" (MAE),
                              \"reg:squarederror\" (MSE),
                              \"reg:pseudohubererror\" (Huber)
  6. \"xgb_dart\" -- XGBoost + DART dropout.
                   Config: same keys as xgboost (including objective)
  7. \"catboost\" -- CatBoost (ordered boosting).
                   Config: n_estimators (50-500), learning_rate (0.01-0.3),
                           max_depth (2-10), l2_leaf_reg (0.1-10.0)

  For skewed targets: add \"log_transform_target\": true to
  model_config_json. The harness fits on log1p(y) and reports MAE
  back in the original scale.

Categorical features (all 7 learners):
  Add \"categorical_features\" inside model_config_json as a list of
  \"<query_name>__<col>\" names to treat columns natively as categorical.

Constraints:
  - Do NOT write free-form training code, custom objectives, or ensembles.
  - Do NOT perform hyperparameter search loops -- one config per call.
  - Out-of-bounds config values are clamped automatically.
  - The environment handles train/val splitting, fitting, and evaluation.
";

const FEEDBACK_DESCRIPTION: &str = "
The tool returns: metrics, resolved model config, row counts after merges,
missingness rates, warnings, and best/worst prediction examples.
Use this feedback to iterate on your SQL features.
";

const WORKSPACE_BLOCK: &str = "
=== EVALUATION WORKSPACE ===
After each validate_program() call, the full evaluation output is
persisted to a queryable workspace.
Use query_eval_workspace(sql) to analyse results.

Workspace tables:

  trials
    trial_id TEXT, trial_name TEXT, parent_trial_id TEXT,
    created_at TIMESTAMPTZ, split TEXT, model_choice TEXT,
    resolved_model_config TEXT, feature_query_hash TEXT,
    feature_block_names TEXT, primary_metric TEXT,
    primary_score DOUBLE, metrics_json TEXT, notes TEXT

  eval_predictions
    trial_id TEXT, row_id INTEGER, entity_id TEXT, label TEXT,
    score DOUBLE, predicted_class TEXT, split TEXT,
    eval_cutoff TIMESTAMPTZ

row_id is positionally stable across trials for the same split, so
you can join two trials on row_id to compare predictions on the same
examples.
";

const PRAGMA_NOTE: &str = "
IMPORTANT: Always run PRAGMA table_info('tablename') to verify exact
column names. Column names differ across datasets -- never assume a
column like 'id', 'type', 'date', or 'count' exists without checking.";

const EXECUTE_HEAD: &str = "Task: {task_type}
Task Description: {task_description}
Dataset: {dataset_name}

Entity column: {entity_col}
Timestamp column: {timestamp_col}
Target column: {target_col}
Validation set size: {n_val} target rows

WRAPPED MODEL MODE: You propose SQL features + a model choice.
The environment trains and evaluates.

Steps:
1. Run SHOW TABLES to see available tables
2. Run PRAGMA table_info('train_table') and inspect other tables
3. Explore data distributions (SELECT COUNT(*), sample rows, etc.)
4. Design SQL feature queries that extract per-target-row signals
   anchored on eval_table and keyed by row_id
";

const EXECUTE_VALIDATE: &str = "5. Call validate_program() with your features, model_choice, and
   optional config

Example call:
  validate_program(
    feature_queries_json='[{\"name\": \"basic_stats\",
                            \"sql\": \"SELECT ...\"}]',
    model_choice=\"gbdt\",
    model_config_json='{}'
  )

Start with gbdt and simple features. Iterate by improving SQL
features based on diagnostics.
";

const EXECUTE_DIRECT: &str = "5. Reply with your final program as the JSON object described in the
   system prompt. It is trained and scored once, after you answer.
";

const EXECUTE_WORKSPACE: &str = "
You have query_eval_workspace(sql): after each validate_program(),
analyze trials and eval_predictions as described in the system prompt.";

const FOLLOWUP: &str = "Continue improving your pipeline.
- If you haven't validated yet, call validate_program() now.
- Full evaluation results are available in the workspace after each trial.
  Use query_eval_workspace() for error analysis.
- Call get_trial_history() to see all past attempts.
- Use what you find in the workspace to guide your next SQL feature
  improvements.";

const FOLLOWUP_NO_WORKSPACE: &str = "Continue improving your pipeline.
- If you haven't validated yet, call validate_program() now.
- Call get_trial_history() to see all past attempts.";

const WRAPUP: &str = "This is your last turn. If you haven't submitted a validation yet, do so now.
Call validate_program() with your best SQL queries, model choice, and model configuration.
If you already have results, call get_trial_history() to confirm your best score.";

fn fill(template: &str, vars: &PromptVars) -> String {
    template
        .replace("{task_type}", vars.task_type.as_str())
        .replace("{task_description}", &vars.task_description)
        .replace("{dataset_name}", &vars.dataset_name)
        .replace("{entity_col}", &vars.entity_col)
        .replace("{timestamp_col}", &vars.timestamp_col)
        .replace("{target_col}", &vars.target_col)
        .replace("{n_val}", &vars.n_val.to_string())
}

fn system_prompt(vars: &PromptVars, opts: &PromptOptions) -> String {
    let cls = vars.task_type == TaskType::BinaryClassification;
    let mut s = String::from(if cls { CLS_HEADER } else { REG_HEADER });

    let mut tools = vec![TOOL_SQL];
    if !opts.no_feedback {
        tools.push(TOOL_VALIDATE);
        tools.push(TOOL_HISTORY);
        if !opts.no_workspace {
            tools.push(TOOL_WORKSPACE);
        }
    }
    s.push_str("\nYou have the following tools:\n");
    for (i, t) in tools.iter().enumerate() {
        s.push_str(&format!("{}. {t}\n", i + 1));
    }
    s.push('\n');
    s.push_str(RULES);
    if !opts.no_feedback {
        s.push_str(RULES_FEEDBACK);
    }

    if cls {
        s.push_str(CLS_BULLETS);
        if !opts.no_feedback {
            s.push_str(CLS_BULLET_FEEDBACK);
        }
    } else {
        s.push_str(REG_BULLETS_HEAD);
        if !opts.no_feedback {
            s.push_str(REG_BULLET_FEEDBACK);
        }
        s.push_str(REG_BULLETS_TAIL);
    }

    s.push_str(if opts.no_feedback { MODE_INTRO_DIRECT } else { MODE_INTRO });
    s.push_str(if cls { CLS_MENU } else { REG_MENU });
    if let Some(models) = &opts.allowed_models {
        s.push_str(&format!("\nIn this run only the following models are available: {}.\n", models.join(", ")));
    }
    if !opts.no_feedback {
        s.push_str(FEEDBACK_DESCRIPTION);
        if !opts.no_workspace {
            s.push_str(WORKSPACE_BLOCK);
        }
    }
    s.push_str(PRAGMA_NOTE);
    fill(&s, vars)
}

fn execute_prompt(vars: &PromptVars, opts: &PromptOptions) -> String {
    let mut s = String::from(EXECUTE_HEAD);
    if opts.no_feedback {
        s.push_str(EXECUTE_DIRECT);
    } else {
        s.push_str(EXECUTE_VALIDATE);
        if !opts.no_workspace {
            s.push_str(EXECUTE_WORKSPACE);
        }
    }
    fill(s.trim_end(), vars)
}

pub fn assemble(vars: &PromptVars, opts: &PromptOptions) -> Prompts {
    Prompts {
        system: system_prompt(vars, opts),
        execute: execute_prompt(vars, opts),
        followup: if opts.no_workspace { FOLLOWUP_NO_WORKSPACE } else { FOLLOWUP }.to_string(),
        wrapup: WRAPUP.to_string(),
    }
}

fn string_param(description: &str) -> Value {
    json!({"type": "string", "description": description})
}

/// Tools offered to the policy under the given options.
pub fn tool_specs(vars: &PromptVars, opts: &PromptOptions) -> Vec<ToolSpec> {
    let mut tools = vec![
        ToolSpec {
            name: "execute_query".into(),
            description: EXECUTE_QUERY_DOC.into(),
            parameters: json!({
                "type": "object",
                "properties": {"query": string_param("The SQL query to execute.")},
                "required": ["query"],
            }),
        },
        ToolSpec {
            name: "get_table_info".into(),
            description: GET_TABLE_INFO_DOC.into(),
            parameters: json!({
                "type": "object",
                "properties": {"table_name": string_param("Name of a specific table.")},
                "required": [],
            }),
        },
    ];
    if opts.no_feedback {
        return tools;
    }
    tools.push(ToolSpec {
        name: "validate_program".into(),
        description: fill(VALIDATE_PROGRAM_DOC, vars),
        parameters: json!({
            "type": "object",
            "properties": {
                "feature_queries_json": string_param("JSON string of feature queries."),
                "model_choice": string_param("One of the 7 learners."),
                "model_config_json": string_param("JSON dict of hyperparameters (optional)."),
            },
            "required": ["feature_queries_json", "model_choice"],
        }),
    });
    tools.push(ToolSpec {
        name: "get_trial_history".into(),
        description: GET_TRIAL_HISTORY_DOC.into(),
        parameters: json!({"type": "object", "properties": {}, "required": []}),
    });
    if !opts.no_workspace {
        tools.push(ToolSpec {
            name: "query_eval_workspace".into(),
            description: QUERY_EVAL_WORKSPACE_DOC.into(),
            parameters: json!({
                "type": "object",
                "properties": {"sql": string_param("A SELECT query to run against the workspace.")},
                "required": ["sql"],
            }),
        });
    }
    tools
}
