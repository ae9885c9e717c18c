use std::fmt;

use rusqlite::types::ValueRef;
use serde::{Deserialize, Serialize};

/// One result cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    Timestamp(Timestamp),
}

/// Timestamp cell, kept in the engine's textual form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Timestamp(pub String);

impl Cell {
    /// Convert an engine value, using the declared column type to recover
    /// booleans and timestamps that the storage layer keeps as ints/text.
    pub fn from_value(value: ValueRef<'_>, decl_type: Option<&str>) -> Cell {
        let decl = decl_type.map(|d| d.to_ascii_uppercase());
        let is_bool = decl.as_deref().is_some_and(|d| d.contains("BOOL"));
        let is_time =
            decl.as_deref().is_some_and(|d| d.contains("TIMESTAMP") || d.contains("DATE") || d.contains("TIME"));
        match value {
            ValueRef::Null => Cell::Null,
            ValueRef::Integer(i) if is_bool => Cell::Bool(i != 0),
            ValueRef::Integer(i) if is_time => Cell::Timestamp(Timestamp(i.to_string())),
            ValueRef::Integer(i) => Cell::Int(i),
            ValueRef::Real(f) => Cell::Float(f),
            ValueRef::Text(t) => {
                let s = String::from_utf8_lossy(t).into_owned();
                if is_time {
                    Cell::Timestamp(Timestamp(s))
                } else {
                    Cell::Text(s)
                }
            }
            ValueRef::Blob(b) => Cell::Text(b.iter().map(|x| format!("{x:02x}")).collect()),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Bool(b) => Some(f64::from(u8::from(*b))),
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Cell::Bool(b) => Some(i64::from(*b)),
            Cell::Int(i) => Some(*i),
            Cell::Float(f) if f.fract() == 0.0 && f.is_finite() => Some(*f as i64),
            _ => None,
        }
    }

    /// Text rendering used for entity ids and labels in the workspace.
    pub fn render(&self) -> String {
        match self {
            Cell::Null => "NULL".to_string(),
            Cell::Bool(b) => u8::from(*b).to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => format_float(*f),
            Cell::Text(s) => s.clone(),
            Cell::Timestamp(t) => t.0.clone(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Cell::Null => serde_json::Value::Null,
            Cell::Bool(b) => serde_json::Value::Bool(*b),
            Cell::Int(i) => (*i).into(),
            Cell::Float(f) => {
                serde_json::Number::from_f64(*f).map(serde_json::Value::Number).unwrap_or(serde_json::Value::Null)
            }
            Cell::Text(s) => s.clone().into(),
            Cell::Timestamp(t) => t.0.clone().into(),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Shortest round-tripping rendering of a float, with `.0` kept for integers.
pub fn format_float(f: f64) -> String {
    if f.is_finite() && f.fract() == 0.0 && f.abs() < 1e15 {
        format!("{f:.1}")
    } else {
        format!("{f}")
    }
}

/// Result of a read-only query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub truncated: bool,
}

impl RowSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.eq_ignore_ascii_case(name))
    }

    /// JSON list of `{column: value}` objects, the shape tool observations use.
    pub fn to_json_records(&self) -> serde_json::Value {
        let records = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = serde_json::Map::new();
                for (name, cell) in self.columns.iter().zip(row) {
                    obj.insert(name.clone(), cell.to_json());
                }
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::Value::Array(records)
    }

    /// Render for a tool observation: JSON records plus a truncation note.
    pub fn render_observation(&self, cap: usize) -> String {
        let mut text = serde_json::to_string(&self.to_json_records()).expect("json");
        if self.truncated {
            text.push_str(&format!("\n(result truncated to {cap} rows; add a LIMIT clause to control the row count)"));
        }
        text
    }
}
