use std::collections::BTreeSet;
use std::time::Duration;

use super::{check_anchoring, BlockInfo, ColumnData, FeatprogError, FeatureColumn, FeatureMatrix, FeatureProgram};
use crate::relstore::{Cell, ContextHandle, RelstoreError, RowSet, Split};

/// Bind `split`, run every query and left-join the results onto the split's
/// row ids. The split stays bound afterwards.
///
/// Queries run one after another on the handle's single connection; the
/// column order follows program order regardless.
pub fn materialize(
    ctx: &mut ContextHandle,
    program: &FeatureProgram,
    split: Split,
    categoricals: &BTreeSet<String>,
    query_timeout: Option<Duration>,
) -> Result<FeatureMatrix, FeatprogError> {
    let anchors = check_anchoring(program);
    if !anchors.passed() {
        return Err(FeatprogError::Anchoring(anchors.failure_text()));
    }
    ctx.bind_split(split).map_err(|e| FeatprogError::Sql { query: String::new(), message: e.to_string() })?;
    let m = ctx.split_len(split);
    let mut columns = Vec::new();
    let mut blocks = Vec::with_capacity(program.len());
    for q in &program.queries {
        let rs = ctx.run_feature_query(&q.sql, query_timeout).map_err(|e| match e {
            RelstoreError::Timeout(t) => FeatprogError::Timeout { query: q.name.clone(), timeout: t },
            other => FeatprogError::Sql { query: q.name.clone(), message: other.to_string() },
        })?;
        let cols = align(&q.name, &rs, m, categoricals)?;
        blocks.push(BlockInfo { name: q.name.clone(), n_columns: cols.len(), rows_returned: rs.len() });
        columns.extend(cols);
    }
    let declared_categoricals =
        columns.iter().filter(|c| categoricals.contains(&c.name)).map(|c| c.name.clone()).collect();
    Ok(FeatureMatrix { row_ids: (0..m).collect(), columns, declared_categoricals, blocks })
}

fn align(
    query: &str,
    rs: &RowSet,
    m: usize,
    categoricals: &BTreeSet<String>,
) -> Result<Vec<FeatureColumn>, FeatprogError> {
    let rid_col = rs.column_index("row_id").ok_or_else(|| FeatprogError::MissingRowId { query: query.to_string() })?;
    // Position in the split for each result row.
    let mut slot_of_row = Vec::with_capacity(rs.len());
    let mut seen = vec![false; m];
    for row in &rs.rows {
        let cell = &row[rid_col];
        let rid = match cell {
            Cell::Int(_) | Cell::Float(_) | Cell::Bool(_) => cell.as_i64(),
            _ => None,
        }
        .ok_or_else(|| FeatprogError::RowIdOutOfRange { query: query.to_string(), value: cell.render() })?;
        if rid < 0 || rid as usize >= m {
            return Err(FeatprogError::RowIdOutOfRange { query: query.to_string(), value: rid.to_string() });
        }
        if std::mem::replace(&mut seen[rid as usize], true) {
            return Err(FeatprogError::DuplicateRowId { query: query.to_string(), row_id: rid });
        }
        slot_of_row.push(rid as usize);
    }

    let mut out: Vec<FeatureColumn> = Vec::new();
    for (j, col) in rs.columns.iter().enumerate() {
        if j == rid_col {
            continue;
        }
        let name = format!("{query}__{col}");
        if out.iter().any(|c| c.name == name) || col.eq_ignore_ascii_case("row_id") {
            return Err(FeatprogError::DuplicateColumn { query: query.to_string(), column: col.clone() });
        }
        let cells = rs.rows.iter().map(|r| &r[j]);
        let numeric = !categoricals.contains(&name)
            && rs.rows.iter().all(|r| matches!(r[j], Cell::Null | Cell::Int(_) | Cell::Float(_) | Cell::Bool(_)));
        let data = if numeric {
            let mut v = vec![None; m];
            for (slot, cell) in slot_of_row.iter().zip(cells) {
                v[*slot] = cell.as_f64();
            }
            ColumnData::Numeric(v)
        } else {
            let mut v = vec![None; m];
            for (slot, cell) in slot_of_row.iter().zip(cells) {
                v[*slot] = (!cell.is_null()).then(|| cell.render());
            }
            ColumnData::Categorical(v)
        };
        out.push(FeatureColumn { name, data });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featprog::{parse_program, FeatureQuery};
    use crate::relstore::{PrimaryMetric, TargetSpec, TaskManifest, TaskType};
    use rusqlite::Connection;
    use std::path::Path;

    fn task(dir: &Path) -> TaskManifest {
        let db = dir.join("ctx.db");
        let conn = Connection::open(&db).unwrap();
        conn.execute_batch(
            "CREATE TABLE ev(uid INTEGER, t TIMESTAMP, amt REAL, kind TEXT);
             INSERT INTO ev VALUES (1,'2020-01-01',5,'a'),(1,'2020-02-01',7,'b'),(2,'2020-01-15',1,'a'),(3,'2020-03-01',2,'c');
             CREATE TABLE __target_train(uid INTEGER, ts TIMESTAMP, y INTEGER);
             INSERT INTO __target_train VALUES (1,'2020-03-01',1),(2,'2020-03-01',0),(3,'2020-03-01',1),(4,'2020-03-01',0),(5,'2020-03-01',0);
             CREATE TABLE __target_val(uid INTEGER, ts TIMESTAMP, y INTEGER);
             INSERT INTO __target_val VALUES (1,'2020-04-01',1),(2,'2020-04-01',0);
             CREATE TABLE __target_test(uid INTEGER, ts TIMESTAMP, y INTEGER);
             INSERT INTO __target_test VALUES (1,'2020-05-01',1);",
        )
        .unwrap();
        let spec = |t: &str| TargetSpec {
            table: t.into(),
            entity_col: "uid".into(),
            timestamp_col: "ts".into(),
            target_col: "y".into(),
        };
        TaskManifest {
            database_uri: db,
            context_tables: vec!["ev".into()],
            train: spec("__target_train"),
            val: spec("__target_val"),
            test: spec("__target_test"),
            task_type: TaskType::BinaryClassification,
            primary_metric: PrimaryMetric::Auroc,
            rowid_columns: vec![],
            rng_seed: 0,
            dataset_name: None,
            task_description: None,
        }
    }

    fn prog(sql: &str) -> FeatureProgram {
        FeatureProgram::new(vec![FeatureQuery { name: "a".into(), sql: sql.into() }]).unwrap()
    }

    #[test]
    fn ones_and_left_join_nulls() {
        let dir = tempfile::tempdir().unwrap();
        let mut ctx = ContextHandle::open(task(dir.path())).unwrap();
        let none = BTreeSet::new();
        let x =
            materialize(&mut ctx, &prog("SELECT row_id, 1 AS one FROM eval_table"), Split::Train, &none, None).unwrap();
        assert_eq!(x.row_ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(x.columns[0].name, "a__one");
        assert_eq!(x.columns[0].data, ColumnData::Numeric(vec![Some(1.0); 5]));
        let x = materialize(
            &mut ctx,
            &prog("SELECT row_id, 1 AS one FROM eval_table WHERE row_id < 3"),
            Split::Train,
            &none,
            None,
        )
        .unwrap();
        assert_eq!(x.columns[0].data, ColumnData::Numeric(vec![Some(1.0), Some(1.0), Some(1.0), None, None]));
    }

    #[test]
    fn duplicate_row_id_names_query() {
        let dir = tempfile::tempdir().unwrap();
        let mut ctx = ContextHandle::open(task(dir.path())).unwrap();
        let p = prog("SELECT row_id, 1 AS one FROM eval_table UNION ALL SELECT 0, 2 FROM eval_table WHERE row_id = 0");
        let err = materialize(&mut ctx, &p, Split::Train, &BTreeSet::new(), None).unwrap_err();
        assert_eq!(err, FeatprogError::DuplicateRowId { query: "a".into(), row_id: 0 });
    }

    #[test]
    fn typing_and_declared_categoricals() {
        let dir = tempfile::tempdir().unwrap();
        let mut ctx = ContextHandle::open(task(dir.path())).unwrap();
        let p = parse_program(
            r#"[{"name":"agg","sql":"SELECT e.row_id, COUNT(ev.uid) AS n, MAX(ev.kind) AS last_kind, SUM(ev.amt) AS amt FROM eval_table e LEFT JOIN ev ON ev.uid = e.uid AND ev.t < e.ts GROUP BY e.row_id"}]"#,
        )
        .unwrap();
        let cats: BTreeSet<String> = ["agg__n".to_string()].into();
        let x = materialize(&mut ctx, &p, Split::Train, &cats, None).unwrap();
        assert_eq!(x.column_names(), vec!["agg__n", "agg__last_kind", "agg__amt"]);
        assert_eq!(
            x.column("agg__n").unwrap().data,
            ColumnData::Categorical(vec![
                Some("2".into()),
                Some("1".into()),
                Some("0".into()),
                Some("0".into()),
                Some("0".into())
            ])
        );
        assert!(x.column("agg__last_kind").unwrap().data.is_categorical());
        assert_eq!(
            x.column("agg__amt").unwrap().data,
            ColumnData::Numeric(vec![Some(12.0), Some(1.0), None, None, None])
        );
        assert_eq!(x.declared_categoricals, cats);
        assert_eq!(x.blocks[0].n_columns, 3);
    }

    #[test]
    fn workspace_tables_are_not_reachable() {
        let dir = tempfile::tempdir().unwrap();
        let mut ctx = ContextHandle::open(task(dir.path())).unwrap();
        let p = prog("SELECT e.row_id, COUNT(*) AS n FROM eval_table e, eval_predictions p GROUP BY e.row_id");
        let err = materialize(&mut ctx, &p, Split::Val, &BTreeSet::new(), None).unwrap_err();
        assert!(matches!(err, FeatprogError::Sql { ref message, .. } if message.contains("eval_predictions")), "{err}");
    }

    #[test]
    fn rejects_unanchored_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let mut ctx = ContextHandle::open(task(dir.path())).unwrap();
        let err = materialize(&mut ctx, &prog("SELECT 0 AS row_id"), Split::Val, &BTreeSet::new(), None).unwrap_err();
        assert!(matches!(err, FeatprogError::Anchoring(_)));
    }
}
