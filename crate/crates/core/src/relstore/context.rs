use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::Duration;

use rusqlite::types::{Value, ValueRef};
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

use super::guard::{classify, AccessPolicy, Classified, Guard, GuardRejection};
use super::schema::{ColumnInfo, ForeignKey, SchemaReport, TableSchema};
use super::{
    functions, quote_ident, Cell, RelstoreError, RowSet, Split, TaskManifest, DEFAULT_EXPLORATION_TIMEOUT,
    EXPLORATION_ROW_CAP,
};

pub const TRAIN_TABLE: &str = "train_table";
pub const EVAL_TABLE: &str = "eval_table";

/// Synthetic names for one context table.
pub(crate) type TargetValues<'a> = (&'a [Value], &'a [Value], &'a [Value], &'a [Option<String>; 3]);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRenaming {
    pub original: String,
    pub synthetic: String,
    /// (original, synthetic) column pairs in schema order.
    pub columns: Vec<(String, String)>,
}

/// Bijection from real schema names to agent-visible synthetic names.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RenamingMap {
    pub tables: Vec<TableRenaming>,
    /// Synthetic names of the entity, timestamp and target roles.
    pub entity_col: String,
    pub timestamp_col: String,
    pub target_col: String,
}

/// Target rows of one split, cached at open in file order.
#[derive(Debug, Clone)]
struct TargetRows {
    entity: Vec<Value>,
    ts: Vec<Value>,
    label: Vec<Value>,
    decl: [Option<String>; 3],
}

/// An open, read-only view of a task's augmented context.
pub struct ContextHandle {
    conn: Connection,
    guard: Guard,
    manifest: TaskManifest,
    bound: Option<Split>,
    targets: BTreeMap<Split, TargetRows>,
    renaming: Option<RenamingMap>,
    exploration_timeout: Duration,
}

impl std::fmt::Debug for ContextHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContextHandle")
            .field("database", &self.manifest.database_uri)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

impl ContextHandle {
    pub fn open(manifest: TaskManifest) -> Result<ContextHandle, RelstoreError> {
        manifest.check_static()?;
        let path = manifest.database_uri.clone();
        if !path.is_file() {
            return Err(RelstoreError::Manifest(format!("database file not readable: {}", path.display())));
        }
        let conn = open_read_only(&path)?;
        functions::register(&conn)?;

        let existing = list_tables(&conn)?;
        let has = |name: &str| existing.iter().any(|t| t.eq_ignore_ascii_case(name));
        for t in &manifest.context_tables {
            if !has(t) {
                return Err(RelstoreError::MissingTable(t.clone()));
            }
        }
        let mut hidden: HashSet<String> = existing
            .iter()
            .filter(|t| t.to_ascii_lowercase().starts_with(super::TARGET_TABLE_PREFIX))
            .map(|t| t.to_ascii_lowercase())
            .collect();
        let mut targets = BTreeMap::new();
        for split in Split::ALL {
            let spec = manifest.target(split);
            if !has(&spec.table) {
                return Err(RelstoreError::MissingTable(spec.table.clone()));
            }
            hidden.insert(spec.table.to_ascii_lowercase());
            let cols = table_columns(&conn, &spec.table)?;
            let mut decl: [Option<String>; 3] = Default::default();
            for (i, role) in [&spec.entity_col, &spec.timestamp_col, &spec.target_col].into_iter().enumerate() {
                let col = cols
                    .iter()
                    .find(|c| c.name.eq_ignore_ascii_case(role))
                    .ok_or_else(|| RelstoreError::MissingColumn { table: spec.table.clone(), column: role.clone() })?;
                decl[i] = Some(col.decl_type.clone());
            }
            targets.insert(split, load_targets(&conn, spec, decl)?);
        }
        check_cutoffs(&conn, &manifest)?;

        let guard = Guard::install(&conn, AccessPolicy { hidden, view_only: HashSet::new() });
        let mut handle = ContextHandle {
            conn,
            guard,
            manifest,
            bound: None,
            targets,
            renaming: None,
            exploration_timeout: DEFAULT_EXPLORATION_TIMEOUT,
        };
        handle.build_train_table()?;
        handle.guard.set_enabled(true);
        Ok(handle)
    }

    pub fn manifest(&self) -> &TaskManifest {
        &self.manifest
    }

    pub fn bound_split(&self) -> Option<Split> {
        self.bound
    }

    pub fn renaming(&self) -> Option<&RenamingMap> {
        self.renaming.as_ref()
    }

    pub fn set_exploration_timeout(&mut self, timeout: Duration) {
        self.exploration_timeout = timeout;
    }

    /// Agent-visible (entity, timestamp, target) column names.
    pub fn role_names(&self) -> (String, String, String) {
        match &self.renaming {
            Some(r) => (r.entity_col.clone(), r.timestamp_col.clone(), r.target_col.clone()),
            None => (
                self.manifest.entity_col().to_string(),
                self.manifest.timestamp_col().to_string(),
                self.manifest.target_col().to_string(),
            ),
        }
    }

    /// Agent-visible context table names, in manifest order.
    pub fn context_table_names(&self) -> Vec<String> {
        match &self.renaming {
            Some(r) => r.tables.iter().map(|t| t.synthetic.clone()).collect(),
            None => self.manifest.context_tables.clone(),
        }
    }

    /// All tables an agent query may name.
    pub fn visible_tables(&self) -> Vec<String> {
        let mut v = self.context_table_names();
        v.push(TRAIN_TABLE.to_string());
        if self.bound.is_some() {
            v.push(EVAL_TABLE.to_string());
        }
        v
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.targets[&split].entity.len()
    }

    /// Labels of a split in row_id order. Privileged: never reachable via SQL
    /// for val/test.
    pub fn labels(&self, split: Split) -> Vec<Cell> {
        let t = &self.targets[&split];
        t.label.iter().map(|v| Cell::from_value(ValueRef::from(v), t.decl[2].as_deref())).collect()
    }

    pub fn entities(&self, split: Split) -> Vec<Cell> {
        let t = &self.targets[&split];
        t.entity.iter().map(|v| Cell::from_value(ValueRef::from(v), t.decl[0].as_deref())).collect()
    }

    pub fn timestamps(&self, split: Split) -> Vec<Cell> {
        let t = &self.targets[&split];
        t.ts.iter().map(|v| Cell::from_value(ValueRef::from(v), t.decl[1].as_deref())).collect()
    }

    /// Rebuild `eval_table` over `split`'s target rows, labels excluded.
    pub fn bind_split(&mut self, split: Split) -> Result<(), RelstoreError> {
        let (e, t, _) = self.role_names();
        let rows = &self.targets[&split];
        let ddl = format!(
            "DROP TABLE IF EXISTS temp.{EVAL_TABLE};
             CREATE TEMP TABLE {EVAL_TABLE} (row_id INTEGER PRIMARY KEY, {} {}, {} {});",
            quote_ident(&e),
            rows.decl[0].as_deref().unwrap_or(""),
            quote_ident(&t),
            rows.decl[1].as_deref().unwrap_or(""),
        );
        let insert = format!("INSERT INTO temp.{EVAL_TABLE} VALUES (?1, ?2, ?3)");
        self.privileged(|conn| {
            conn.execute_batch(&ddl)?;
            let tx = conn.unchecked_transaction()?;
            {
                let mut stmt = tx.prepare(&insert)?;
                for (i, (ent, ts)) in rows.entity.iter().zip(&rows.ts).enumerate() {
                    stmt.execute(rusqlite::params![i as i64, ent, ts])?;
                }
            }
            tx.commit()
        })?;
        self.bound = Some(split);
        Ok(())
    }

    fn build_train_table(&mut self) -> Result<(), RelstoreError> {
        let (e, t, y) = self.role_names();
        let rows = &self.targets[&Split::Train];
        let ddl = format!(
            "DROP TABLE IF EXISTS temp.{TRAIN_TABLE};
             CREATE TEMP TABLE {TRAIN_TABLE} ({} {}, {} {}, {} {});",
            quote_ident(&e),
            rows.decl[0].as_deref().unwrap_or(""),
            quote_ident(&t),
            rows.decl[1].as_deref().unwrap_or(""),
            quote_ident(&y),
            rows.decl[2].as_deref().unwrap_or(""),
        );
        let insert = format!("INSERT INTO temp.{TRAIN_TABLE} VALUES (?1, ?2, ?3)");
        self.privileged(|conn| {
            conn.execute_batch(&ddl)?;
            let tx = conn.unchecked_transaction()?;
            {
                let mut stmt = tx.prepare(&insert)?;
                for ((ent, ts), label) in rows.entity.iter().zip(&rows.ts).zip(&rows.label) {
                    stmt.execute(rusqlite::params![ent, ts, label])?;
                }
            }
            tx.commit()
        })?;
        Ok(())
    }

    /// Expose context tables under synthetic names only. Role columns of
    /// `train_table` and `eval_table` are renamed to the map's role names.
    pub fn apply_renaming(&mut self, map: RenamingMap) -> Result<(), RelstoreError> {
        let mut ddl = String::new();
        for t in &map.tables {
            let cols: Vec<String> =
                t.columns.iter().map(|(o, s)| format!("{} AS {}", quote_ident(o), quote_ident(s))).collect();
            ddl.push_str(&format!(
                "CREATE TEMP VIEW {} AS SELECT {} FROM main.{};\n",
                quote_ident(&t.synthetic),
                cols.join(", "),
                quote_ident(&t.original)
            ));
        }
        self.privileged(|conn| conn.execute_batch(&ddl))?;
        let originals: Vec<String> = map.tables.iter().map(|t| t.original.to_ascii_lowercase()).collect();
        self.guard.update_policy(|p| p.view_only.extend(originals));
        self.renaming = Some(map);
        self.build_train_table()?;
        if let Some(split) = self.bound {
            self.bind_split(split)?;
        }
        Ok(())
    }

    /// Raw (entity, timestamp, label) values and declared types of a split.
    pub(crate) fn target_values(&self, split: Split) -> TargetValues<'_> {
        let t = &self.targets[&split];
        (&t.entity, &t.ts, &t.label, &t.decl)
    }

    /// Tables that no agent-facing connection may read (lowercase).
    pub(crate) fn hidden_tables(&self) -> HashSet<String> {
        let mut hidden: HashSet<String> =
            Split::ALL.iter().map(|s| self.manifest.target(*s).table.to_ascii_lowercase()).collect();
        if let Ok(all) = self.privileged(list_tables) {
            hidden.extend(
                all.into_iter().map(|t| t.to_ascii_lowercase()).filter(|t| t.starts_with(super::TARGET_TABLE_PREFIX)),
            );
        }
        hidden
    }

    fn privileged<T>(&self, f: impl FnOnce(&Connection) -> rusqlite::Result<T>) -> Result<T, RelstoreError> {
        self.guard.set_enabled(false);
        let out = f(&self.conn);
        self.guard.set_enabled(true);
        Ok(out?)
    }

    fn resolve_visible(&self, name: &str) -> Result<String, RelstoreError> {
        let bare = name.trim_matches(|c| c == '"' || c == '`' || c == '[' || c == ']');
        self.visible_tables()
            .into_iter()
            .find(|t| t.eq_ignore_ascii_case(bare))
            .ok_or_else(|| RelstoreError::MissingTable(bare.to_string()))
    }

    pub fn get_table_info(&self, table: Option<&str>) -> Result<SchemaReport, RelstoreError> {
        let names = match table {
            Some(t) => vec![self.resolve_visible(t)?],
            None => self.visible_tables(),
        };
        let mut tables = Vec::with_capacity(names.len());
        for name in names {
            tables.push(self.describe_table(&name)?);
        }
        Ok(SchemaReport { tables })
    }

    fn describe_table(&self, name: &str) -> Result<TableSchema, RelstoreError> {
        let renamed =
            self.renaming.as_ref().and_then(|r| r.tables.iter().find(|t| t.synthetic.eq_ignore_ascii_case(name)));
        let physical = renamed.map_or(name, |t| t.original.as_str());
        let rename_col = |c: &str| -> String {
            renamed
                .and_then(|t| t.columns.iter().find(|(o, _)| o.eq_ignore_ascii_case(c)))
                .map_or_else(|| c.to_string(), |(_, s)| s.clone())
        };
        let rename_table = |t: &str| -> String {
            self.renaming
                .as_ref()
                .and_then(|r| r.tables.iter().find(|x| x.original.eq_ignore_ascii_case(t)))
                .map_or_else(|| t.to_string(), |x| x.synthetic.clone())
        };
        let foreign_col = |t: &str, c: &str| -> String {
            self.renaming
                .as_ref()
                .and_then(|r| r.tables.iter().find(|x| x.original.eq_ignore_ascii_case(t)))
                .and_then(|x| x.columns.iter().find(|(o, _)| o.eq_ignore_ascii_case(c)))
                .map_or_else(|| c.to_string(), |(_, s)| s.clone())
        };
        self.privileged(|conn| {
            let raw = table_columns(conn, physical)?;
            let mut columns = Vec::new();
            let mut pk: Vec<(i64, String)> = Vec::new();
            for c in raw {
                if c.pk > 0 {
                    pk.push((c.pk, rename_col(&c.name)));
                }
                columns.push(ColumnInfo { name: rename_col(&c.name), decl_type: c.decl_type });
            }
            pk.sort();
            let mut foreign_keys = Vec::new();
            let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(physical)))?;
            let mut rows = stmt.query([])?;
            while let Some(r) = rows.next()? {
                let ref_table: String = r.get("table")?;
                let from: String = r.get("from")?;
                let to: Option<String> = r.get("to")?;
                foreign_keys.push(ForeignKey {
                    column: rename_col(&from),
                    ref_column: to.map(|c| foreign_col(&ref_table, &c)).unwrap_or_default(),
                    ref_table: rename_table(&ref_table),
                });
            }
            let row_count: i64 =
                conn.query_row(&format!("SELECT COUNT(*) FROM {}", quote_ident(physical)), [], |r| r.get(0))?;
            Ok(TableSchema {
                name: name.to_string(),
                columns,
                primary_key: pk.into_iter().map(|(_, n)| n).collect(),
                foreign_keys,
                row_count: row_count as u64,
            })
        })
    }

    /// Run an agent exploration statement: read-only, capped at 200 rows
    /// without a LIMIT, bounded by the exploration timeout.
    pub fn execute_exploration(&self, sql: &str) -> Result<RowSet, RelstoreError> {
        match classify(sql).map_err(rejection)? {
            Classified::ShowTables => Ok(RowSet {
                columns: vec!["name".into()],
                rows: self.visible_tables().into_iter().map(|t| vec![Cell::Text(t)]).collect(),
                truncated: false,
            }),
            Classified::Describe(t) => {
                let name = self.resolve_visible(&t)?;
                let schema = self.describe_table(&name)?;
                Ok(RowSet {
                    columns: vec!["column_name".into(), "column_type".into()],
                    rows: schema
                        .columns
                        .into_iter()
                        .map(|c| vec![Cell::Text(c.name), Cell::Text(c.decl_type)])
                        .collect(),
                    truncated: false,
                })
            }
            Classified::Sql { sql, has_limit } => {
                let cap = if has_limit { None } else { Some(EXPLORATION_ROW_CAP) };
                self.run_guarded(&sql, cap, Some(self.exploration_timeout))
            }
        }
    }

    /// Run one feature query against the bound split with no row cap.
    pub fn run_feature_query(&self, sql: &str, timeout: Option<Duration>) -> Result<RowSet, RelstoreError> {
        let sql = match classify(sql).map_err(rejection)? {
            Classified::Sql { sql, .. } => sql,
            _ => return Err(RelstoreError::Sql("feature queries must be SELECT statements".into())),
        };
        self.run_guarded(&sql, None, timeout)
    }

    fn run_guarded(&self, sql: &str, cap: Option<usize>, timeout: Option<Duration>) -> Result<RowSet, RelstoreError> {
        self.guard.take_violation();
        self.guard.arm(timeout);
        let out = run_query(&self.conn, sql, cap);
        self.guard.arm(None);
        let violated = self.guard.take_violation();
        out.map_err(|e| map_engine_error(e, violated, timeout))
    }
}

fn rejection(r: GuardRejection) -> RelstoreError {
    match r {
        GuardRejection::ReadOnly(m) => RelstoreError::ReadOnlyViolation(m),
        GuardRejection::Invalid(m) => RelstoreError::Sql(m),
    }
}

/// Translate an engine error raised under a guard into the module's kinds.
pub(crate) fn map_engine_error(e: rusqlite::Error, violated: bool, timeout: Option<Duration>) -> RelstoreError {
    if violated {
        return RelstoreError::ReadOnlyViolation(format!("statement attempts a write or forbidden operation ({e})"));
    }
    if let rusqlite::Error::SqliteFailure(f, _) = &e {
        if f.code == rusqlite::ErrorCode::OperationInterrupted {
            return RelstoreError::Timeout(timeout.unwrap_or_default());
        }
        if f.code == rusqlite::ErrorCode::ReadOnly {
            return RelstoreError::ReadOnlyViolation(e.to_string());
        }
    }
    let msg = e.to_string();
    // The engine's deny messages name the table and column; keep them opaque
    // so hidden or renamed schema names never reach the agent.
    if msg.contains("not authorized") || (msg.starts_with("access to") && msg.contains("is prohibited")) {
        return RelstoreError::Sql("not authorized: the statement references a table that is not accessible".into());
    }
    RelstoreError::Sql(msg)
}

/// Execute `sql` and collect rows, stopping after `cap` rows.
pub(crate) fn run_query(conn: &Connection, sql: &str, cap: Option<usize>) -> rusqlite::Result<RowSet> {
    let mut stmt = conn.prepare(sql)?;
    if !stmt.readonly() {
        // Surfaces as a write attempt even when the authorizer is bypassed.
        return Err(rusqlite::Error::SqliteFailure(
            rusqlite::ffi::Error::new(rusqlite::ffi::SQLITE_READONLY),
            Some("statement is not read-only".into()),
        ));
    }
    let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
    let decls: Vec<Option<String>> = stmt.columns().iter().map(|c| c.decl_type().map(String::from)).collect();
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    let mut truncated = false;
    while let Some(r) = rows.next()? {
        if cap.is_some_and(|c| out.len() >= c) {
            truncated = true;
            break;
        }
        let mut row = Vec::with_capacity(columns.len());
        for (i, decl) in decls.iter().enumerate() {
            row.push(Cell::from_value(r.get_ref(i)?, decl.as_deref()));
        }
        out.push(row);
    }
    Ok(RowSet { columns, rows: out, truncated })
}

fn open_read_only(path: &Path) -> Result<Connection, RelstoreError> {
    let flags = OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI;
    Ok(Connection::open_with_flags(path, flags)?)
}

pub(crate) fn list_tables(conn: &Connection) -> rusqlite::Result<Vec<String>> {
    let mut stmt = conn.prepare(
        "SELECT name FROM sqlite_master WHERE type IN ('table','view') AND name NOT LIKE 'sqlite_%' ORDER BY name",
    )?;
    let names = stmt.query_map([], |r| r.get(0))?.collect();
    names
}

pub(crate) struct RawColumn {
    pub name: String,
    pub decl_type: String,
    pub pk: i64,
}

pub(crate) fn table_columns(conn: &Connection, table: &str) -> rusqlite::Result<Vec<RawColumn>> {
    let mut stmt = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(table)))?;
    let cols = stmt
        .query_map([], |r| Ok(RawColumn { name: r.get("name")?, decl_type: r.get("type")?, pk: r.get("pk")? }))?
        .collect();
    cols
}

fn load_targets(
    conn: &Connection,
    spec: &super::TargetSpec,
    decl: [Option<String>; 3],
) -> Result<TargetRows, RelstoreError> {
    let cols = format!(
        "{}, {}, {}",
        quote_ident(&spec.entity_col),
        quote_ident(&spec.timestamp_col),
        quote_ident(&spec.target_col)
    );
    let ordered = format!("SELECT {cols} FROM {} ORDER BY rowid", quote_ident(&spec.table));
    // WITHOUT ROWID tables have no rowid; fall back to storage order.
    let mut stmt = match conn.prepare(&ordered) {
        Ok(s) => s,
        Err(_) => conn.prepare(&format!("SELECT {cols} FROM {}", quote_ident(&spec.table)))?,
    };
    let mut rows = stmt.query([])?;
    let mut t = TargetRows { entity: Vec::new(), ts: Vec::new(), label: Vec::new(), decl };
    while let Some(r) = rows.next()? {
        t.entity.push(r.get(0)?);
        t.ts.push(r.get(1)?);
        t.label.push(r.get(2)?);
    }
    Ok(t)
}

/// max(train.ts) < min(val.ts) < ... using the engine's own ordering. Skipped
/// when all target timestamps are one constant (static tasks).
fn check_cutoffs(conn: &Connection, m: &TaskManifest) -> Result<(), RelstoreError> {
    let sel = |s: Split| {
        let spec = m.target(s);
        format!("SELECT {} AS ts FROM {}", quote_ident(&spec.timestamp_col), quote_ident(&spec.table))
    };
    let all = Split::ALL.map(sel).join(" UNION ALL ");
    let distinct: i64 =
        conn.query_row(&format!("SELECT COUNT(DISTINCT ts) FROM ({all}) WHERE ts IS NOT NULL"), [], |r| r.get(0))?;
    if distinct <= 1 {
        return Ok(());
    }
    for (a, b) in [(Split::Train, Split::Val), (Split::Val, Split::Test)] {
        let q = format!(
            "SELECT (SELECT MAX(ts) FROM ({})), (SELECT MIN(ts) FROM ({})), (SELECT MAX(ts) FROM ({})) < (SELECT MIN(ts) FROM ({}))",
            sel(a),
            sel(b),
            sel(a),
            sel(b)
        );
        let (hi, lo, ok): (Value, Value, Option<bool>) =
            conn.query_row(&q, [], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?;
        if ok == Some(false) {
            return Err(RelstoreError::CutoffViolation(format!(
                "max({a} timestamp) = {} is not before min({b} timestamp) = {}",
                Cell::from_value(ValueRef::from(&hi), None),
                Cell::from_value(ValueRef::from(&lo), None)
            )));
        }
    }
    Ok(())
}
