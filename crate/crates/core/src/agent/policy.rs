use std::collections::VecDeque;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::action::{parse_script, Action};
use super::prompts::ToolSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: String,
}

/// One entry of the conversation shown to a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Message {
        Message { role, content: content.into(), tool_calls: Vec::new(), tool_call_id: None }
    }

    pub fn tool_result(call: &ToolCall, content: impl Into<String>) -> Message {
        Message {
            role: Role::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call.id.clone()),
        }
    }

    fn to_openai(&self) -> Value {
        let role = match self.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        };
        let mut m = json!({ "role": role, "content": self.content });
        if !self.tool_calls.is_empty() {
            m["tool_calls"] = self
                .tool_calls
                .iter()
                .map(
                    |c| json!({"id": c.id, "type": "function", "function": {"name": c.name, "arguments": c.arguments}}),
                )
                .collect();
        }
        if let Some(id) = &self.tool_call_id {
            m["tool_call_id"] = json!(id);
        }
        m
    }
}

/// A policy's answer for one turn: free text plus tool calls in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyReply {
    pub text: String,
    pub tool_calls: Vec<ToolCall>,
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("policy did not answer within {0:?}")]
    Timeout(Duration),
    #[error("policy transport error: {0}")]
    Transport(String),
    #[error("policy protocol error: {0}")]
    Protocol(String),
}

/// Source of agent messages.
pub trait Policy: Send {
    fn next_message(&mut self, history: &[Message], tools: &[ToolSpec]) -> Result<PolicyReply, PolicyError>;

    /// True once the policy has nothing more to say.
    fn finished(&self) -> bool {
        false
    }

    /// Short label recorded in rollout artifacts.
    fn describe(&self) -> String;

    /// Whether replies depend only on the inputs (enables the logical clock).
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Replays a fixed list of turns. Used for tests and for reproducing runs.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    turns: VecDeque<Vec<Action>>,
    served: usize,
    label: String,
}

impl ScriptedPolicy {
    pub fn new(turns: Vec<Vec<Action>>) -> ScriptedPolicy {
        ScriptedPolicy { turns: turns.into(), served: 0, label: "scripted".into() }
    }

    pub fn from_json(text: &str) -> Result<ScriptedPolicy, serde_json::Error> {
        parse_script(text).map(ScriptedPolicy::new)
    }

    pub fn from_file(path: &Path) -> std::io::Result<ScriptedPolicy> {
        let text = std::fs::read_to_string(path)?;
        let mut p =
            ScriptedPolicy::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        p.label = format!("scripted:{}", path.display());
        Ok(p)
    }

    pub fn remaining(&self) -> usize {
        self.turns.len()
    }
}

impl Policy for ScriptedPolicy {
    fn next_message(&mut self, _history: &[Message], _tools: &[ToolSpec]) -> Result<PolicyReply, PolicyError> {
        let Some(turn) = self.turns.pop_front() else {
            return Ok(PolicyReply::default());
        };
        self.served += 1;
        let mut reply = PolicyReply::default();
        for (k, action) in turn.into_iter().enumerate() {
            match action.to_tool_call() {
                Some((name, arguments)) => {
                    reply.tool_calls.push(ToolCall { id: format!("call_{}_{}", self.served, k), name, arguments })
                }
                None => {
                    if let Action::FinalText { text } = action {
                        if !reply.text.is_empty() {
                            reply.text.push('\n');
                        }
                        reply.text.push_str(&text);
                    }
                }
            }
        }
        Ok(reply)
    }

    fn finished(&self) -> bool {
        self.turns.is_empty()
    }

    fn describe(&self) -> String {
        self.label.clone()
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_max_tokens() -> u32 {
    8000
}

fn default_timeout_secs() -> u64 {
    900
}

fn default_retries() -> u32 {
    3
}

/// Policy backed by a remote model through function calling.
pub struct LlmPolicy {
    settings: LlmSettings,
    agent: ureq::Agent,
    /// Base delay between retries; doubled after each attempt.
    backoff: Duration,
}

impl LlmPolicy {
    pub fn new(settings: LlmSettings) -> LlmPolicy {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        LlmPolicy { settings, agent, backoff: Duration::from_secs(1) }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> LlmPolicy {
        self.backoff = backoff;
        self
    }

    fn request_body(&self, history: &[Message], tools: &[ToolSpec]) -> Value {
        let mut body = json!({
            "model": self.settings.model,
            "messages": history.iter().map(Message::to_openai).collect::<Vec<_>>(),
            "temperature": self.settings.temperature,
            "max_tokens": self.settings.max_tokens,
        });
        if !tools.is_empty() {
            body["tools"] = tools.iter().map(ToolSpec::to_openai).collect();
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<Value, (bool, PolicyError)> {
        let mut req = self.agent.post(&self.settings.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.settings.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err((false, PolicyError::Timeout(Duration::from_secs(self.settings.timeout_secs))))
            }
            Err(e) => return Err((true, PolicyError::Transport(e.to_string()))),
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err((true, PolicyError::Transport(format!("HTTP {status}"))));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err((false, PolicyError::Protocol(format!("HTTP {status}: {text}"))));
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| (false, PolicyError::Protocol(format!("unreadable response: {e}"))))
    }
}

/// Extract text and tool calls from a chat-completions response.
pub fn parse_completion(v: &Value) -> Result<PolicyReply, PolicyError> {
    let msg = v
        .pointer("/choices/0/message")
        .ok_or_else(|| PolicyError::Protocol("response has no choices[0].message".into()))?;
    let text = msg.get("content").and_then(Value::as_str).unwrap_or_default().to_string();
    let mut tool_calls = Vec::new();
    if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
        for (k, c) in calls.iter().enumerate() {
            let name = c
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| PolicyError::Protocol("tool call without a function name".into()))?;
            let arguments = match c.pointer("/function/arguments") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => String::new(),
            };
            let id = c.get("id").and_then(Value::as_str).map(str::to_string).unwrap_or_else(|| format!("call_{k}"));
            tool_calls.push(ToolCall { id, name: name.to_string(), arguments });
        }
    }
    Ok(PolicyReply { text, tool_calls })
}

impl Policy for LlmPolicy {
    fn next_message(&mut self, history: &[Message], tools: &[ToolSpec]) -> Result<PolicyReply, PolicyError> {
        let body = self.request_body(history, tools);
        let mut delay = self.backoff;
        let mut last = PolicyError::Transport("no attempt made".into());
        for attempt in 0..self.settings.retries.max(1) {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Ok(v) => return parse_completion(&v),
                Err((true, e)) => {
                    log::warn!("policy request failed (attempt {}): {e}", attempt + 1);
                    last = e;
                }
                Err((false, e)) => return Err(e),
            }
        }
        Err(last)
    }

    fn describe(&self) -> String {
        format!("llm:{}", self.settings.model)
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;

    /// Serve canned HTTP responses, one per connection, in order.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn settings(url: String) -> LlmSettings {
        LlmSettings {
            endpoint: url,
            model: "test-model".into(),
            api_key: Some("k".into()),
            temperature: 1.0,
            max_tokens: 8000,
            timeout_secs: 10,
            retries: 3,
        }
    }

    #[test]
    fn scripted_policy_serves_turns_then_finishes() {
        let mut p = ScriptedPolicy::from_json(
            r#"[[{"action":"execute_query","sql":"SHOW TABLES"},{"action":"get_trial_history"}],{"action":"final_text","text":"bye"}]"#,
        )
        .unwrap();
        let r = p.next_message(&[], &[]).unwrap();
        assert_eq!(r.tool_calls.len(), 2);
        assert_eq!(r.tool_calls[0].name, "execute_query");
        assert_ne!(r.tool_calls[0].id, r.tool_calls[1].id);
        assert!(!p.finished());
        let r = p.next_message(&[], &[]).unwrap();
        assert_eq!(r.text, "bye");
        assert!(p.finished());
        assert_eq!(p.next_message(&[], &[]).unwrap(), PolicyReply::default());
    }

    #[test]
    fn llm_policy_parses_calls_in_order_and_retries_transient_errors() {
        let ok = json!({"choices": [{"message": {"content": "thinking", "tool_calls": [
            {"id": "a", "type": "function", "function": {"name": "execute_query", "arguments": "{\"query\":\"SHOW TABLES\"}"}},
            {"id": "b", "type": "function", "function": {"name": "get_trial_history", "arguments": "{}"}}
        ]}}]})
        .to_string();
        let (url, server) = serve(vec![(503, "{}".into()), (200, ok)]);
        let mut policy = LlmPolicy::new(settings(url)).with_backoff(Duration::from_millis(1));
        let history = vec![Message::new(Role::System, "sys"), Message::new(Role::User, "go")];
        let tools = vec![ToolSpec { name: "execute_query".into(), description: "d".into(), parameters: json!({}) }];
        let reply = policy.next_message(&history, &tools).unwrap();
        assert_eq!(reply.text, "thinking");
        let names: Vec<&str> = reply.tool_calls.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["execute_query", "get_trial_history"]);
        let bodies = server.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["temperature"], 1.0);
        assert_eq!(sent["max_tokens"], 8000);
        assert_eq!(sent["messages"].as_array().unwrap().len(), 2);
        assert_eq!(sent["tools"][0]["function"]["name"], "execute_query");
    }

    #[test]
    fn llm_policy_gives_up_after_retries() {
        let (url, server) = serve(vec![(500, "{}".into()), (500, "{}".into()), (500, "{}".into())]);
        let mut policy = LlmPolicy::new(settings(url)).with_backoff(Duration::from_millis(1));
        let err = policy.next_message(&[Message::new(Role::User, "go")], &[]).unwrap_err();
        assert!(matches!(err, PolicyError::Transport(_)), "{err}");
        assert_eq!(server.join().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, server) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
        let mut policy = LlmPolicy::new(settings(url)).with_backoff(Duration::from_millis(1));
        let err = policy.next_message(&[Message::new(Role::User, "go")], &[]).unwrap_err();
        assert!(matches!(err, PolicyError::Protocol(_)), "{err}");
        assert_eq!(server.join().unwrap().len(), 1);
    }
}
