use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

/// A string argument that scripts may also give as inline JSON.
///
/// `"[{...}]"` and `[{...}]` both yield the text `[{...}]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JsonText(pub String);

impl JsonText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn from_value(v: Value) -> JsonText {
        match v {
            Value::String(s) => JsonText(s),
            Value::Null => JsonText(String::new()),
            other => JsonText(other.to_string()),
        }
    }
}

impl Serialize for JsonText {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for JsonText {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Value::deserialize(d).map(JsonText::from_value)
    }
}

/// One tool invocation or a final text answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    ExecuteQuery {
        sql: String,
    },
    GetTableInfo {
        #[serde(default)]
        table: Option<String>,
    },
    ValidateProgram {
        feature_queries_json: JsonText,
        model_choice: String,
        #[serde(default)]
        model_config_json: JsonText,
    },
    GetTrialHistory,
    QueryEvalWorkspace {
        sql: String,
    },
    FinalText {
        text: String,
    },
}

impl Action {
    /// Tool name, or `final_text` for a plain answer.
    pub fn name(&self) -> &'static str {
        match self {
            Action::ExecuteQuery { .. } => "execute_query",
            Action::GetTableInfo { .. } => "get_table_info",
            Action::ValidateProgram { .. } => "validate_program",
            Action::GetTrialHistory => "get_trial_history",
            Action::QueryEvalWorkspace { .. } => "query_eval_workspace",
            Action::FinalText { .. } => "final_text",
        }
    }

    /// Function-call form `(name, arguments_json)`; `None` for final text.
    pub fn to_tool_call(&self) -> Option<(String, String)> {
        let args = match self {
            Action::ExecuteQuery { sql } => json!({ "query": sql }),
            Action::GetTableInfo { table } => match table {
                Some(t) => json!({ "table_name": t }),
                None => json!({}),
            },
            Action::ValidateProgram { feature_queries_json, model_choice, model_config_json } => json!({
                "feature_queries_json": feature_queries_json.0,
                "model_choice": model_choice,
                "model_config_json": model_config_json.0,
            }),
            Action::GetTrialHistory => json!({}),
            Action::QueryEvalWorkspace { sql } => json!({ "sql": sql }),
            Action::FinalText { .. } => return None,
        };
        Some((self.name().to_string(), args.to_string()))
    }

    /// Parse a function call emitted by a policy. The error text is shown
    /// to the policy as the tool result.
    pub fn from_tool_call(name: &str, arguments: &str) -> Result<Action, String> {
        let args: Map<String, Value> = if arguments.trim().is_empty() {
            Map::new()
        } else {
            match serde_json::from_str::<Value>(arguments) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(format!("arguments for {name} must be a JSON object")),
                Err(e) => return Err(format!("invalid JSON in arguments for {name}: {e}")),
            }
        };
        let text = |key: &str| -> Result<String, String> {
            match args.get(key) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(format!("argument {key} of {name} must be a string")),
                None => Err(format!("missing required argument {key} for {name}")),
            }
        };
        let json_text = |key: &str| args.get(key).cloned().map(JsonText::from_value).unwrap_or_default();
        match name {
            "execute_query" => Ok(Action::ExecuteQuery { sql: text("query")? }),
            "get_table_info" => Ok(Action::GetTableInfo {
                table: match args.get("table_name") {
                    None | Some(Value::Null) => None,
                    Some(Value::String(s)) if s.trim().is_empty() => None,
                    Some(_) => Some(text("table_name")?),
                },
            }),
            "validate_program" => {
                if !args.contains_key("feature_queries_json") {
                    return Err(format!("missing required argument feature_queries_json for {name}"));
                }
                Ok(Action::ValidateProgram {
                    feature_queries_json: json_text("feature_queries_json"),
                    model_choice: text("model_choice")?,
                    model_config_json: json_text("model_config_json"),
                })
            }
            "get_trial_history" => Ok(Action::GetTrialHistory),
            "query_eval_workspace" => Ok(Action::QueryEvalWorkspace { sql: text("sql")? }),
            other => Err(format!("unknown tool {other}")),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::ExecuteQuery { sql } | Action::QueryEvalWorkspace { sql } => {
                write!(f, "{}({})", self.name(), sql)
            }
            Action::GetTableInfo { table } => write!(f, "get_table_info({})", table.as_deref().unwrap_or("")),
            Action::ValidateProgram { model_choice, .. } => write!(f, "validate_program(model_choice={model_choice})"),
            Action::GetTrialHistory => f.write_str("get_trial_history()"),
            Action::FinalText { .. } => f.write_str("final_text"),
        }
    }
}

/// Parse a script: a JSON array whose elements are single actions or arrays
/// of actions. Each element is one turn.
pub fn parse_script(text: &str) -> Result<Vec<Vec<Action>>, serde_json::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Turn {
        Many(Vec<Action>),
        One(Action),
    }
    let turns: Vec<Turn> = serde_json::from_str(text)?;
    Ok(turns
        .into_iter()
        .map(|t| match t {
            Turn::Many(v) => v,
            Turn::One(a) => vec![a],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tool_call_round_trip() {
        let actions = vec![
            Action::ExecuteQuery { sql: "SELECT 1".into() },
            Action::GetTableInfo { table: None },
            Action::GetTableInfo { table: Some("R".into()) },
            Action::ValidateProgram {
                feature_queries_json: JsonText(r#"[{"name":"a","sql":"SELECT row_id FROM eval_table"}]"#.into()),
                model_choice: "gbdt".into(),
                model_config_json: JsonText("{}".into()),
            },
            Action::GetTrialHistory,
            Action::QueryEvalWorkspace { sql: "SELECT * FROM trials".into() },
        ];
        for a in actions {
            let (name, args) = a.to_tool_call().unwrap();
            assert_eq!(Action::from_tool_call(&name, &args).unwrap(), a);
        }
        assert!(Action::FinalText { text: "x".into() }.to_tool_call().is_none());
    }

    #[test]
    fn malformed_calls_are_reported() {
        assert!(Action::from_tool_call("execute_query", "{not json").unwrap_err().contains("invalid JSON"));
        assert!(Action::from_tool_call("execute_query", "{}").unwrap_err().contains("missing required"));
        assert!(Action::from_tool_call("drop_everything", "{}").unwrap_err().contains("unknown tool"));
        let a = Action::from_tool_call(
            "validate_program",
            r#"{"feature_queries_json":[{"name":"a","sql":"x"}],"model_choice":"rf","model_config_json":{"max_depth":3}}"#,
        )
        .unwrap();
        match a {
            Action::ValidateProgram { feature_queries_json, model_config_json, .. } => {
                assert_eq!(feature_queries_json.0, r#"[{"name":"a","sql":"x"}]"#);
                assert_eq!(model_config_json.0, r#"{"max_depth":3}"#);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn script_turns_accept_single_and_grouped_actions() {
        let script = r#"[
            {"action": "execute_query", "sql": "SHOW TABLES"},
            [{"action": "get_table_info"}, {"action": "get_trial_history"}],
            {"action": "validate_program", "feature_queries_json": [{"name": "a", "sql": "s"}], "model_choice": "gbdt"},
            {"action": "final_text", "text": "done"}
        ]"#;
        let turns = parse_script(script).unwrap();
        assert_eq!(turns.iter().map(Vec::len).collect::<Vec<_>>(), [1, 2, 1, 1]);
        assert_eq!(turns[2][0].name(), "validate_program");
        let back = serde_json::to_string(&turns).unwrap();
        assert_eq!(parse_script(&back).unwrap(), turns);
    }
}
