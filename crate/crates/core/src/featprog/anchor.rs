//! Lexical anchoring check: a feature query must read `eval_table` and its
//! outermost SELECT list must produce a `row_id` column.

use serde::{Deserialize, Serialize};

use super::FeatureProgram;
use crate::relstore::EVAL_TABLE;
use crate::sqllex::{self, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorVerdict {
    Ok,
    MissingRowId,
    NotAnchoredOnEvalTable,
    ParseError,
}

impl AnchorVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            AnchorVerdict::Ok => "ok",
            AnchorVerdict::MissingRowId => "missing_row_id",
            AnchorVerdict::NotAnchoredOnEvalTable => "not_anchored_on_eval_table",
            AnchorVerdict::ParseError => "parse_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAnchor {
    pub name: String,
    pub verdict: AnchorVerdict,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub queries: Vec<QueryAnchor>,
}

impl AnchorReport {
    pub fn passed(&self) -> bool {
        self.queries.iter().all(|q| q.verdict == AnchorVerdict::Ok)
    }

    /// One line per failing query.
    pub fn failure_text(&self) -> String {
        self.queries
            .iter()
            .filter(|q| q.verdict != AnchorVerdict::Ok)
            .map(|q| format!("{}: {} ({})", q.name, q.verdict.as_str(), q.message))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn check_anchoring(program: &FeatureProgram) -> AnchorReport {
    let queries = program
        .queries
        .iter()
        .map(|q| {
            let (verdict, message) = check_sql(&q.sql);
            QueryAnchor { name: q.name.clone(), verdict, message }
        })
        .collect();
    AnchorReport { queries }
}

fn check_sql(sql: &str) -> (AnchorVerdict, String) {
    let tokens = match sqllex::tokenize(sql) {
        Ok(t) => t,
        Err(e) => return (AnchorVerdict::ParseError, e.to_string()),
    };
    let stmts = sqllex::statements(&tokens);
    let stmt = match stmts.as_slice() {
        [one] => *one,
        [] => return (AnchorVerdict::ParseError, "empty query".into()),
        _ => return (AnchorVerdict::ParseError, "a feature query must be a single statement".into()),
    };
    if !(stmt[0].is_word("select") || stmt[0].is_word("with")) {
        return (AnchorVerdict::ParseError, "a feature query must be a SELECT statement".into());
    }
    if !stmt.iter().any(|t| t.is_ident(EVAL_TABLE)) {
        return (
            AnchorVerdict::NotAnchoredOnEvalTable,
            "the query never references eval_table; anchor it on eval_table".into(),
        );
    }
    let Some(start) = stmt.iter().position(|t| t.depth == 0 && t.is_word("select")) else {
        return (AnchorVerdict::ParseError, "no top-level SELECT found".into());
    };
    let outputs = select_outputs(&stmt[start + 1..]);
    if outputs.iter().any(|o| o.eq_ignore_ascii_case("row_id")) {
        (AnchorVerdict::Ok, String::new())
    } else {
        (
            AnchorVerdict::MissingRowId,
            "the outermost SELECT list must return row_id (e.g. SELECT e.row_id, ... FROM eval_table e)".into(),
        )
    }
}

const CLAUSE_END: &[&str] =
    &["from", "where", "group", "having", "window", "order", "limit", "union", "intersect", "except"];

/// Output column names of a SELECT list, as far as a token scan can tell.
/// `*` and `t.*` yield nothing.
fn select_outputs(after_select: &[Token]) -> Vec<String> {
    let mut list = after_select;
    if list.first().is_some_and(|t| t.is_word("distinct") || t.is_word("all")) {
        list = &list[1..];
    }
    let end = list.iter().position(|t| t.depth == 0 && CLAUSE_END.iter().any(|kw| t.is_word(kw))).unwrap_or(list.len());
    list[..end].split(|t| t.depth == 0 && t.is_punct(',')).filter_map(output_name).collect()
}

fn output_name(item: &[Token]) -> Option<String> {
    let last = item.last()?;
    if let Some(pos) = item.iter().rposition(|t| t.depth == 0 && t.is_word("as")) {
        return item.get(pos + 1).map(|t| t.text.clone());
    }
    let ident = |t: &Token| matches!(t.kind, TokenKind::Word | TokenKind::QuotedIdent | TokenKind::Str);
    if !ident(last) {
        return None;
    }
    if item.len() == 1 {
        return Some(last.text.clone());
    }
    let prev = &item[item.len() - 2];
    if prev.is_punct('.') {
        // qualified column reference `t.col`
        return (item.len() == 3).then(|| last.text.clone());
    }
    // implicit alias: `expr alias`
    Some(last.text.clone())
}
