//! Read-only enforcement for agent-facing connections.
//!
//! Two layers: a statement-class allowlist on the leading keyword, and an
//! engine authorizer that denies every action other than reads, selects,
//! function calls and a handful of schema pragmas. The authorizer also hides
//! the raw target tables so labels of held-out splits are unreachable.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rusqlite::hooks::{AuthAction, AuthContext, Authorization};
use rusqlite::Connection;

use crate::sqllex::{self, Token};

/// Schema pragmas an agent may run (argument form only, never assignment).
pub const ALLOWED_PRAGMAS: &[&str] =
    &["table_info", "table_xinfo", "table_list", "index_list", "index_info", "index_xinfo", "foreign_key_list"];

const MUTATING_KEYWORDS: &[&str] = &[
    "insert",
    "update",
    "delete",
    "replace",
    "create",
    "drop",
    "alter",
    "attach",
    "detach",
    "vacuum",
    "reindex",
    "analyze",
    "begin",
    "commit",
    "end",
    "rollback",
    "savepoint",
    "release",
    "copy",
    "install",
    "load",
    "set",
    "upsert",
    "merge",
    "truncate",
    "grant",
    "revoke",
    "call",
    "checkpoint",
    "import",
    "export",
    "use",
];

/// A statement that passed the allowlist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classified {
    /// Run as-is on the engine.
    Sql { sql: String, has_limit: bool },
    /// `SHOW TABLES`: answered from the visible-table list.
    ShowTables,
    /// `DESCRIBE t` / `DESC t`: answered with the table's column info.
    Describe(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuardRejection {
    ReadOnly(String),
    Invalid(String),
}

/// Classify a statement against the read-only allowlist.
pub fn classify(sql: &str) -> Result<Classified, GuardRejection> {
    let tokens = sqllex::tokenize(sql).map_err(|e| GuardRejection::Invalid(e.to_string()))?;
    let stmts = sqllex::statements(&tokens);
    if stmts.is_empty() {
        return Err(GuardRejection::Invalid("empty statement".into()));
    }
    let mut classified = Vec::with_capacity(stmts.len());
    for stmt in &stmts {
        classified.push(classify_one(stmt)?);
    }
    if classified.len() > 1 {
        return Err(GuardRejection::Invalid("only a single statement is allowed per call".into()));
    }
    let c = classified.pop().expect("one statement");
    Ok(match c {
        Classified::Sql { has_limit, .. } => {
            // Drop the trailing semicolon(s) so the engine sees exactly one statement.
            let trimmed = sql.trim().trim_end_matches(';').trim_end().to_string();
            Classified::Sql { sql: trimmed, has_limit }
        }
        other => other,
    })
}

fn classify_one(stmt: &[Token]) -> Result<Classified, GuardRejection> {
    let first = &stmt[0];
    let head = first.text.to_ascii_lowercase();
    if first.kind != sqllex::TokenKind::Word && !first.is_punct('(') {
        return Err(GuardRejection::Invalid(format!("unexpected token `{}`", first.text)));
    }
    match head.as_str() {
        "select" | "with" | "values" | "(" => {
            Ok(Classified::Sql { sql: String::new(), has_limit: sqllex::has_top_level_limit(stmt) })
        }
        "explain" => Ok(Classified::Sql { sql: String::new(), has_limit: false }),
        "show" => {
            let rest: Vec<String> = stmt[1..].iter().map(|t| t.text.to_ascii_lowercase()).collect();
            match rest.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
                ["tables"] | ["all", "tables"] => Ok(Classified::ShowTables),
                _ => Err(GuardRejection::Invalid("only SHOW TABLES is supported".into())),
            }
        }
        "describe" | "desc" => match stmt.get(1) {
            Some(t) if stmt.len() == 2 => Ok(Classified::Describe(t.text.clone())),
            _ => Err(GuardRejection::Invalid("usage: DESCRIBE <table>".into())),
        },
        "pragma" => {
            if stmt.iter().any(|t| t.is_punct('=')) {
                return Err(GuardRejection::ReadOnly("PRAGMA assignments are not allowed".into()));
            }
            let name = stmt
                .get(1)
                .map(|t| t.text.to_ascii_lowercase())
                .ok_or_else(|| GuardRejection::Invalid("PRAGMA requires a name".into()))?;
            // Allow `PRAGMA main.table_info(...)` as well.
            let name = if stmt.get(2).is_some_and(|t| t.is_punct('.')) {
                stmt.get(3).map(|t| t.text.to_ascii_lowercase()).unwrap_or_default()
            } else {
                name
            };
            if ALLOWED_PRAGMAS.contains(&name.as_str()) {
                Ok(Classified::Sql { sql: String::new(), has_limit: false })
            } else {
                Err(GuardRejection::ReadOnly(format!("PRAGMA {name} is not allowed")))
            }
        }
        kw if MUTATING_KEYWORDS.contains(&kw) => {
            Err(GuardRejection::ReadOnly(format!("{} statements are not allowed", kw.to_ascii_uppercase())))
        }
        _ => Err(GuardRejection::Invalid(format!("unsupported statement `{}`", first.text))),
    }
}

/// Access rules enforced by the engine authorizer.
#[derive(Debug, Default, Clone)]
pub struct AccessPolicy {
    /// Tables that may never be read (lowercase).
    pub hidden: HashSet<String>,
    /// Tables that may only be read through a view (lowercase).
    pub view_only: HashSet<String>,
}

/// Hooks shared between a connection and its owner.
#[derive(Clone)]
pub struct Guard {
    enabled: Arc<AtomicBool>,
    violated: Arc<AtomicBool>,
    policy: Arc<Mutex<AccessPolicy>>,
    deadline: Arc<Mutex<Option<Instant>>>,
}

impl Guard {
    /// Install authorizer and progress hooks on `conn`. The guard starts disabled.
    pub fn install(conn: &Connection, policy: AccessPolicy) -> Guard {
        let guard = Guard {
            enabled: Arc::new(AtomicBool::new(false)),
            violated: Arc::new(AtomicBool::new(false)),
            policy: Arc::new(Mutex::new(policy)),
            deadline: Arc::new(Mutex::new(None)),
        };
        let enabled = guard.enabled.clone();
        let violated = guard.violated.clone();
        let policy = guard.policy.clone();
        conn.authorizer(Some(move |ctx: AuthContext<'_>| {
            if !enabled.load(Ordering::SeqCst) {
                return Authorization::Allow;
            }
            let policy = policy.lock().expect("policy lock");
            let verdict = authorize(&policy, &ctx);
            if verdict == Verdict::Write {
                violated.store(true, Ordering::SeqCst);
            }
            match verdict {
                Verdict::Allow => Authorization::Allow,
                Verdict::Hidden | Verdict::Write => Authorization::Deny,
            }
        }));
        let deadline = guard.deadline.clone();
        conn.progress_handler(
            10_000,
            Some(move || {
                let d = deadline.lock().expect("deadline lock");
                d.is_some_and(|d| Instant::now() >= d)
            }),
        );
        guard
    }

    pub fn set_enabled(&self, on: bool) {
        self.enabled.store(on, Ordering::SeqCst);
    }

    pub fn update_policy(&self, f: impl FnOnce(&mut AccessPolicy)) {
        f(&mut self.policy.lock().expect("policy lock"));
    }

    /// Arm the statement timeout; `None` disarms it.
    pub fn arm(&self, timeout: Option<Duration>) {
        *self.deadline.lock().expect("deadline lock") = timeout.map(|t| Instant::now() + t);
    }

    /// Returns and clears the write-attempt flag.
    pub fn take_violation(&self) -> bool {
        self.violated.swap(false, Ordering::SeqCst)
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Verdict {
    Allow,
    Hidden,
    Write,
}

fn authorize(policy: &AccessPolicy, ctx: &AuthContext<'_>) -> Verdict {
    match ctx.action {
        AuthAction::Select | AuthAction::Recursive | AuthAction::Function { .. } => Verdict::Allow,
        AuthAction::Read { table_name, .. } => {
            let t = table_name.to_ascii_lowercase();
            if policy.hidden.contains(&t) || (ctx.accessor.is_none() && policy.view_only.contains(&t)) {
                Verdict::Hidden
            } else {
                Verdict::Allow
            }
        }
        AuthAction::Pragma { pragma_name, .. } => {
            if ALLOWED_PRAGMAS.contains(&pragma_name.to_ascii_lowercase().as_str()) {
                Verdict::Allow
            } else {
                Verdict::Write
            }
        }
        _ => Verdict::Write,
    }
}
