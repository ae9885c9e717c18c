use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub decl_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnInfo>,
    pub primary_key: Vec<String>,
    pub foreign_keys: Vec<ForeignKey>,
    pub row_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaReport {
    pub tables: Vec<TableSchema>,
}

impl SchemaReport {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in &self.tables {
            let _ = writeln!(out, "TABLE {} ({} rows)", t.name, t.row_count);
            for c in &t.columns {
                let ty = if c.decl_type.is_empty() { "ANY" } else { &c.decl_type };
                let _ = writeln!(out, "  {} {}", c.name, ty);
            }
            if !t.primary_key.is_empty() {
                let _ = writeln!(out, "  PRIMARY KEY ({})", t.primary_key.join(", "));
            }
            for fk in &t.foreign_keys {
                let _ = writeln!(out, "  FOREIGN KEY ({}) REFERENCES {}({})", fk.column, fk.ref_table, fk.ref_column);
            }
        }
        if out.is_empty() {
            out.push_str("(no tables)\n");
        }
        out
    }
}
