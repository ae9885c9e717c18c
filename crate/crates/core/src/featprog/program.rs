use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FeatprogError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureQuery {
    pub name: String,
    pub sql: String,
}

/// Ordered, uniquely named feature queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureProgram {
    pub queries: Vec<FeatureQuery>,
}

impl FeatureProgram {
    pub fn new(queries: Vec<FeatureQuery>) -> Result<FeatureProgram, FeatprogError> {
        if queries.is_empty() {
            return Err(FeatprogError::EmptyProgram);
        }
        let mut seen = HashSet::new();
        for q in &queries {
            if q.name.trim().is_empty() {
                return Err(FeatprogError::InvalidQuery("query name must be nonempty".into()));
            }
            if !q.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(FeatprogError::InvalidQuery(format!(
                    "query name `{}` must contain only letters, digits and underscores",
                    q.name
                )));
            }
            if q.sql.trim().is_empty() {
                return Err(FeatprogError::InvalidQuery(format!("query `{}` has empty sql", q.name)));
            }
            if !seen.insert(q.name.as_str()) {
                return Err(FeatprogError::DuplicateName(q.name.clone()));
            }
        }
        Ok(FeatureProgram { queries })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.queries.iter().map(|q| q.name.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.queries).expect("program serializes")
    }
}

/// Parse `[{"name": ..., "sql": ...}, ...]`.
pub fn parse_program(json_text: &str) -> Result<FeatureProgram, FeatprogError> {
    let value: serde_json::Value = serde_json::from_str(json_text).map_err(|e| FeatprogError::Json(e.to_string()))?;
    parse_program_value(&value)
}

pub(crate) fn parse_program_value(value: &serde_json::Value) -> Result<FeatureProgram, FeatprogError> {
    let items = value
        .as_array()
        .ok_or_else(|| FeatprogError::Json("expected a JSON array of {\"name\", \"sql\"} objects".into()))?;
    let mut queries = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let field = |key: &str| {
            item.get(key)
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| FeatprogError::Json(format!("element {i} needs a string field `{key}`")))
        };
        queries.push(FeatureQuery { name: field("name")?, sql: field("sql")? });
    }
    FeatureProgram::new(queries)
}

/// SHA-256 over the ordered, length-prefixed (name, sql) pairs.
pub fn program_hash(program: &FeatureProgram) -> String {
    let mut h = Sha256::new();
    for q in &program.queries {
        for part in [&q.name, &q.sql] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let p = parse_program(r#"[{"name":"a","sql":"SELECT row_id, 1 AS one FROM eval_table"}]"#).unwrap();
        assert_eq!(p.len(), 1);
        let dup = r#"[{"name":"a","sql":"SELECT 1"},{"name":"a","sql":"SELECT 2"}]"#;
        assert_eq!(parse_program(dup), Err(FeatprogError::DuplicateName("a".into())));
        assert_eq!(parse_program("[]"), Err(FeatprogError::EmptyProgram));
        assert!(matches!(parse_program("{"), Err(FeatprogError::Json(_))));
    }

    #[test]
    fn hash_is_ordered_and_exact() {
        let a = FeatureQuery { name: "a".into(), sql: "SELECT 1".into() };
        let b = FeatureQuery { name: "b".into(), sql: "SELECT 2".into() };
        let p1 = FeatureProgram::new(vec![a.clone(), b.clone()]).unwrap();
        let p2 = FeatureProgram::new(vec![b.clone(), a.clone()]).unwrap();
        assert_eq!(program_hash(&p1), program_hash(&p1.clone()));
        assert_ne!(program_hash(&p1), program_hash(&p2));
        let p3 = FeatureProgram::new(vec![a, FeatureQuery { name: "b".into(), sql: "SELECT  2".into() }]).unwrap();
        assert_ne!(program_hash(&p1), program_hash(&p3));
        assert_eq!(program_hash(&p1).len(), 64);
    }

    #[test]
    fn name_sql_boundary_is_unambiguous() {
        let p1 = FeatureProgram::new(vec![FeatureQuery { name: "ab".into(), sql: "c".into() }]).unwrap();
        let p2 = FeatureProgram::new(vec![FeatureQuery { name: "a".into(), sql: "bc".into() }]).unwrap();
        assert_ne!(program_hash(&p1), program_hash(&p2));
    }
}
