//! Synthetic benchmark tasks with known answers.
//!
//! The triangle tasks label a node 1 when it lies on a proper directed
//! 3-cycle of a random graph; self-loops make the naive three-edge walk
//! count disagree with that label. The co-occurrence task builds child rows
//! whose per-column aggregates are identical across classes, so only a
//! cross-column predicate separates them.
//!
//! Generators write a task directory holding `task.db`, `task.toml` and a
//! `fixtures/` folder with reference programs and a replay script.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::{params, Connection};
use serde_json::json;

use crate::agent::{Action, JsonText};
use crate::relstore::{PrimaryMetric, RelstoreError, TargetSpec, TaskManifest, TaskType};

pub const DB_FILE: &str = "task.db";
pub const MANIFEST_FILE: &str = "task.toml";
pub const FIXTURE_DIR: &str = "fixtures";
pub const POLICY_SCRIPT_FILE: &str = "policy_script.json";
/// Timestamp shared by every target row of the static tasks.
pub const EPOCH: &str = "1970-01-01 00:00:00";
/// Resampling attempts before a degenerate split is reported.
pub const MAX_ATTEMPTS: u32 = 10;
/// Validation budget for triangle searches.
pub const TRIANGLE_VALIDATIONS: u32 = 30;

pub const CYCLE3_RAW_SQL: &str = "WITH cycle3 AS (
  SELECT e1.src AS node_id, COUNT(*) AS cycle3_cnt
  FROM R e1
  JOIN R e2 ON e2.src = e1.dst
  JOIN R e3 ON e3.src = e2.dst AND e3.dst = e1.src
  GROUP BY e1.src
)
SELECT e.row_id, COALESCE(c.cycle3_cnt, 0) AS cycle3_cnt
FROM eval_table e
LEFT JOIN cycle3 c USING (node_id)";

pub const CYCLE3_FILTERED_SQL: &str = "WITH edges AS (
  SELECT src, dst FROM R WHERE src != dst
),
cycle3 AS (
  SELECT e1.src AS node_id, COUNT(*) AS cycle3_cnt
  FROM edges e1
  JOIN edges e2 ON e2.src = e1.dst
  JOIN edges e3 ON e3.src = e2.dst AND e3.dst = e1.src
  GROUP BY e1.src
)
SELECT e.row_id, COALESCE(c.cycle3_cnt, 0) AS cycle3_cnt
FROM eval_table e
LEFT JOIN cycle3 c USING (node_id)";

pub const AGGREGATE_SQL: &str = "SELECT e.row_id,
  COUNT(t.A) AS a_count, SUM(t.A) AS a_sum, AVG(t.A) AS a_mean,
  MIN(t.A) AS a_min, MAX(t.A) AS a_max, stddev(t.A) AS a_std,
  COUNT(t.B) AS b_count, SUM(t.B) AS b_sum, AVG(t.B) AS b_mean,
  MIN(t.B) AS b_min, MAX(t.B) AS b_max, stddev(t.B) AS b_std
FROM eval_table e
LEFT JOIN T2 t ON t.entity_id = e.entity_id
GROUP BY e.row_id";

pub const COOCCURRENCE_SQL: &str = "SELECT e.row_id,
  COALESCE(SUM(CASE WHEN t.A = 1 AND t.B = 1 THEN 1 ELSE 0 END) > 0, 0) AS ab_cooccur
FROM eval_table e
LEFT JOIN T2 t ON t.entity_id = e.entity_id
GROUP BY e.row_id";

const DEGREE_SQL: &str = "SELECT e.row_id,
  (SELECT COUNT(*) FROM R WHERE R.src = e.node_id) AS out_deg,
  (SELECT COUNT(*) FROM R WHERE R.dst = e.node_id) AS in_deg
FROM eval_table e";

const RECIPROCAL_SQL: &str = "SELECT e.row_id, COUNT(r2.src) AS reciprocal
FROM eval_table e
LEFT JOIN R r1 ON r1.src = e.node_id
LEFT JOIN R r2 ON r2.src = r1.dst AND r2.dst = r1.src
GROUP BY e.row_id";

const TWO_HOP_SQL: &str = "SELECT e.row_id, COUNT(r2.dst) AS two_hop
FROM eval_table e
LEFT JOIN R r1 ON r1.src = e.node_id
LEFT JOIN R r2 ON r2.src = r1.dst
GROUP BY e.row_id";

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("a split stayed single-class after {0} attempts")]
    DegenerateLabels(u32),
    #[error("database error: {0}")]
    Engine(#[from] rusqlite::Error),
    #[error(transparent)]
    Manifest(#[from] RelstoreError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleSpec {
    /// Nodes per graph.
    pub n: usize,
    /// Probability of each directed edge between distinct nodes.
    pub p: f64,
    /// Probability of a self-loop on each node.
    pub p_sl: f64,
    pub n_train_graphs: usize,
    pub n_val_graphs: usize,
    pub n_test_graphs: usize,
    pub seed: u64,
}

impl Default for TriangleSpec {
    fn default() -> Self {
        TriangleSpec { n: 300, p: 0.02, p_sl: 0.0, n_train_graphs: 5, n_val_graphs: 2, n_test_graphs: 2, seed: 0 }
    }
}

impl TriangleSpec {
    fn check(&self) -> Result<(), SynthError> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if self.n == 0 || self.n_train_graphs == 0 || self.n_val_graphs == 0 || self.n_test_graphs == 0 {
            return Err(SynthError::InvalidSpec("node and graph counts must be positive".into()));
        }
        if !prob(self.p) || !prob(self.p_sl) {
            return Err(SynthError::InvalidSpec("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn n_graphs(&self) -> usize {
        self.n_train_graphs + self.n_val_graphs + self.n_test_graphs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceSpec {
    /// Entities per split; rounded down to an even number.
    pub n_entities: usize,
    pub seed: u64,
}

impl Default for CooccurrenceSpec {
    fn default() -> Self {
        CooccurrenceSpec { n_entities: 200, seed: 0 }
    }
}

/// A generated task directory.
#[derive(Debug, Clone)]
pub struct GeneratedTask {
    pub dir: PathBuf,
    pub manifest_path: PathBuf,
    /// Loaded manifest, database path resolved.
    pub manifest: TaskManifest,
    /// Seed that produced the data after any degenerate-split retries.
    pub seed_used: u64,
}

impl GeneratedTask {
    pub fn fixture(&self, name: &str) -> PathBuf {
        self.dir.join(FIXTURE_DIR).join(name)
    }
}

/// Edge lists for each graph of `spec`, node ids offset by graph.
///
/// Every ordered pair draws one uniform, so for a fixed seed the non-loop
/// edges do not depend on `p_sl`.
pub fn triangle_edges(spec: &TriangleSpec, seed: u64) -> Vec<Vec<(i64, i64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.n_graphs())
        .map(|g| {
            let base = (g * spec.n) as i64;
            let mut edges = Vec::new();
            for i in 0..spec.n {
                for j in 0..spec.n {
                    let u: f64 = rng.gen();
                    let threshold = if i == j { spec.p_sl } else { spec.p };
                    if u < threshold {
                        edges.push((base + i as i64, base + j as i64));
                    }
                }
            }
            edges
        })
        .collect()
}

fn adjacency(edges: &[(i64, i64)]) -> std::collections::HashMap<i64, HashSet<i64>> {
    let mut out: std::collections::HashMap<i64, HashSet<i64>> = std::collections::HashMap::new();
    for &(a, b) in edges {
        out.entry(a).or_default().insert(b);
    }
    out
}

/// 1 for each node on a proper directed 3-cycle: distinct y, z with
/// x→y, y→z, z→x.
pub fn label_proper_cycle(nodes: &[i64], edges: &[(i64, i64)]) -> Vec<bool> {
    let out = adjacency(edges);
    let empty = HashSet::new();
    let succ = |x: i64| out.get(&x).unwrap_or(&empty);
    nodes
        .iter()
        .map(|&x| {
            succ(x)
                .iter()
                .filter(|&&y| y != x)
                .any(|&y| succ(y).iter().any(|&z| z != x && z != y && succ(z).contains(&x)))
        })
        .collect()
}

/// Number of closed three-edge walks x→y→z→x per node, loops allowed.
pub fn three_walk_count(nodes: &[i64], edges: &[(i64, i64)]) -> Vec<u64> {
    let out = adjacency(edges);
    let empty = HashSet::new();
    let succ = |x: i64| out.get(&x).unwrap_or(&empty);
    nodes
        .iter()
        .map(|&x| succ(x).iter().map(|&y| succ(y).iter().filter(|&&z| succ(z).contains(&x)).count() as u64).sum())
        .collect()
}

fn target_spec(table: &str, entity: &str) -> TargetSpec {
    TargetSpec {
        table: table.into(),
        entity_col: entity.into(),
        timestamp_col: "ts".into(),
        target_col: "label".into(),
    }
}

fn fresh_db(dir: &Path) -> Result<Connection, SynthError> {
    std::fs::create_dir_all(dir.join(FIXTURE_DIR))?;
    let path = dir.join(DB_FILE);
    for suffix in ["", "-journal", "-wal", "-shm"] {
        let p = PathBuf::from(format!("{}{suffix}", path.display()));
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    Ok(Connection::open(path)?)
}

fn write_targets(conn: &Connection, entity: &str, splits: [&[(i64, bool)]; 3]) -> Result<(), SynthError> {
    for (name, rows) in ["train", "val", "test"].into_iter().zip(splits) {
        conn.execute_batch(&format!(
            "CREATE TABLE __target_{name} ({entity} INTEGER NOT NULL, ts TIMESTAMP NOT NULL, label INTEGER NOT NULL);"
        ))?;
        let mut stmt = conn.prepare(&format!("INSERT INTO __target_{name} VALUES (?1, ?2, ?3)"))?;
        for &(id, label) in rows {
            stmt.execute(params![id, EPOCH, label as i64])?;
        }
    }
    Ok(())
}

fn finish(
    dir: &Path,
    mut manifest: TaskManifest,
    fixtures: &[(&str, String)],
    seed_used: u64,
) -> Result<GeneratedTask, SynthError> {
    manifest.database_uri = PathBuf::from(DB_FILE);
    let manifest_path = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, manifest.to_toml())?;
    for (name, text) in fixtures {
        std::fs::write(dir.join(FIXTURE_DIR).join(name), text)?;
    }
    let manifest = TaskManifest::load(&manifest_path)?;
    Ok(GeneratedTask { dir: dir.to_path_buf(), manifest_path, manifest, seed_used })
}

fn program_json(blocks: &[(&str, &str)]) -> String {
    let v: Vec<_> = blocks.iter().map(|(name, sql)| json!({"name": name, "sql": sql})).collect();
    serde_json::to_string_pretty(&v).expect("program serializes")
}

fn balanced(labels: &[bool]) -> bool {
    labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)
}

/// Write a triangle task into `dir`. Existing generator outputs are replaced.
pub fn gen_triangle_task(spec: &TriangleSpec, dir: &Path) -> Result<GeneratedTask, SynthError> {
    spec.check()?;
    let n = spec.n as i64;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = spec.seed + attempt as u64;
        let graphs = triangle_edges(spec, seed);
        let labeled: Vec<Vec<(i64, bool)>> = graphs
            .iter()
            .enumerate()
            .map(|(g, edges)| {
                let nodes: Vec<i64> = (0..n).map(|i| g as i64 * n + i).collect();
                let labels = label_proper_cycle(&nodes, edges);
                nodes.into_iter().zip(labels).collect()
            })
            .collect();
        let (tr, rest) = labeled.split_at(spec.n_train_graphs);
        let (va, te) = rest.split_at(spec.n_val_graphs);
        let splits: [Vec<(i64, bool)>; 3] = [tr.concat(), va.concat(), te.concat()];
        if !splits.iter().all(|s| balanced(&s.iter().map(|r| r.1).collect::<Vec<_>>())) {
            log::info!("triangle seed {seed} gave a single-class split; resampling");
            continue;
        }

        let mut conn = fresh_db(dir)?;
        let tx = conn.transaction()?;
        tx.execute_batch("CREATE TABLE R (src INTEGER NOT NULL, dst INTEGER NOT NULL);")?;
        {
            let mut stmt = tx.prepare("INSERT INTO R VALUES (?1, ?2)")?;
            for &(a, b) in graphs.iter().flatten() {
                stmt.execute(params![a, b])?;
            }
        }
        tx.execute_batch("CREATE INDEX r_src ON R(src); CREATE INDEX r_dst ON R(dst);")?;
        write_targets(&tx, "node_id", [&splits[0], &splits[1], &splits[2]])?;
        tx.commit()?;
        drop(conn);

        let manifest = TaskManifest {
            database_uri: PathBuf::from(DB_FILE),
            context_tables: vec!["R".into()],
            train: target_spec("__target_train", "node_id"),
            val: target_spec("__target_val", "node_id"),
            test: target_spec("__target_test", "node_id"),
            task_type: TaskType::BinaryClassification,
            primary_metric: PrimaryMetric::Auroc,
            rowid_columns: Vec::new(),
            rng_seed: seed,
            dataset_name: Some("synthetic-graph".into()),
            task_description: Some("Predict the binary label of each node from the directed edge relation R.".into()),
        };
        let fixtures = [
            ("cycle3_raw.json", program_json(&[("cycle3", CYCLE3_RAW_SQL)])),
            ("cycle3_filtered.json", program_json(&[("cycle3", CYCLE3_FILTERED_SQL)])),
            (POLICY_SCRIPT_FILE, script_json(&triangle_script())),
        ];
        return finish(dir, manifest, &fixtures, seed);
    }
    Err(SynthError::DegenerateLabels(MAX_ATTEMPTS))
}

/// Write a co-occurrence task into `dir`.
pub fn gen_cooccurrence_task(spec: &CooccurrenceSpec, dir: &Path) -> Result<GeneratedTask, SynthError> {
    let per_split = spec.n_entities / 2 * 2;
    if per_split < 2 {
        return Err(SynthError::InvalidSpec("need at least two entities per split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ids: Vec<i64> = (1..=(3 * per_split) as i64).collect();
    ids.shuffle(&mut rng);

    let mut splits: [Vec<(i64, bool)>; 3] = Default::default();
    let mut children: Vec<(i64, i64, i64)> = Vec::new();
    for (k, split) in splits.iter_mut().enumerate() {
        let mut labels: Vec<bool> = (0..per_split).map(|i| i < per_split / 2).collect();
        labels.shuffle(&mut rng);
        for (&id, label) in ids[k * per_split..(k + 1) * per_split].iter().zip(labels) {
            let mut rows = if label { [(1, 1), (0, 0)] } else { [(1, 0), (0, 1)] };
            rows.shuffle(&mut rng);
            children.extend(rows.iter().map(|&(a, b)| (id, a, b)));
            split.push((id, label));
        }
    }
    children.shuffle(&mut rng);

    let mut conn = fresh_db(dir)?;
    let tx = conn.transaction()?;
    tx.execute_batch(
        "CREATE TABLE T1 (entity_id INTEGER PRIMARY KEY);
         CREATE TABLE T2 (entity_id INTEGER NOT NULL REFERENCES T1(entity_id), A INTEGER NOT NULL, B INTEGER NOT NULL);",
    )?;
    {
        let mut stmt = tx.prepare("INSERT INTO T1 VALUES (?1)")?;
        let mut sorted: Vec<i64> = ids.clone();
        sorted.sort_unstable();
        for id in sorted {
            stmt.execute(params![id])?;
        }
        let mut stmt = tx.prepare("INSERT INTO T2 VALUES (?1, ?2, ?3)")?;
        for (id, a, b) in &children {
            stmt.execute(params![id, a, b])?;
        }
    }
    tx.execute_batch("CREATE INDEX t2_entity ON T2(entity_id);")?;
    write_targets(&tx, "entity_id", [&splits[0], &splits[1], &splits[2]])?;
    tx.commit()?;
    drop(conn);

    let manifest = TaskManifest {
        database_uri: PathBuf::from(DB_FILE),
        context_tables: vec!["T1".into(), "T2".into()],
        train: target_spec("__target_train", "entity_id"),
        val: target_spec("__target_val", "entity_id"),
        test: target_spec("__target_test", "entity_id"),
        task_type: TaskType::BinaryClassification,
        primary_metric: PrimaryMetric::Auroc,
        rowid_columns: Vec::new(),
        rng_seed: spec.seed,
        dataset_name: Some("synthetic-cooccurrence".into()),
        task_description: Some("Predict the binary label of each T1 entity from its T2 rows.".into()),
    };
    let fixtures = [
        ("aggregate_dfs.json", program_json(&[("agg", AGGREGATE_SQL)])),
        ("cooccurrence.json", program_json(&[("cooc", COOCCURRENCE_SQL)])),
        (POLICY_SCRIPT_FILE, script_json(&cooccurrence_script())),
    ];
    finish(dir, manifest, &fixtures, spec.seed)
}

fn validate(blocks: &[(&str, &str)], model: &str, config: serde_json::Value) -> Action {
    Action::ValidateProgram {
        feature_queries_json: JsonText(
            serde_json::to_string(&blocks.iter().map(|(n, s)| json!({"name": n, "sql": s})).collect::<Vec<_>>())
                .unwrap(),
        ),
        model_choice: model.into(),
        model_config_json: JsonText(config.to_string()),
    }
}

fn script_json(turns: &[Vec<Action>]) -> String {
    serde_json::to_string_pretty(turns).expect("script serializes")
}

/// A 30-validation search over the triangle task, mixing exploration,
/// failures, workspace analysis and history checks.
pub fn triangle_script() -> Vec<Vec<Action>> {
    let deg = ("degree", DEGREE_SQL);
    let recip = ("reciprocal", RECIPROCAL_SQL);
    let two = ("two_hop", TWO_HOP_SQL);
    let raw = ("cycle3", CYCLE3_RAW_SQL);
    let filt = ("cycle3", CYCLE3_FILTERED_SQL);
    let broken = ("broken", "SELEC e.row_id FROM eval_table e");
    let unanchored = ("unanchored", "SELECT 1 AS row_id, COUNT(*) AS n_edges FROM R");
    let e = json!({});
    let trials: Vec<Action> = vec![
        validate(&[deg], "gbdt", e.clone()),
        validate(&[broken], "gbdt", e.clone()),
        validate(&[deg, recip], "gbdt", e.clone()),
        validate(&[deg, recip], "xgboost", json!({"max_depth": 4})),
        validate(&[two], "gbdt", e.clone()),
        validate(&[deg, two], "rf", e.clone()),
        validate(&[unanchored], "gbdt", e.clone()),
        validate(&[deg, recip, two], "dart", e.clone()),
        validate(&[raw], "gbdt", e.clone()),
        validate(&[raw], "xgboost", e.clone()),
        validate(&[raw], "goss", e.clone()),
        Action::ValidateProgram {
            feature_queries_json: JsonText("[{\"name\": \"cycle3\", \"sql\": ".into()),
            model_choice: "gbdt".into(),
            model_config_json: JsonText("{}".into()),
        },
        validate(&[raw], "catboost", e.clone()),
        validate(&[filt], "gbdt", e.clone()),
        validate(&[filt], "gbdt", json!({"learning_rate": 9})),
        validate(&[filt, deg], "gbdt", e.clone()),
        validate(&[filt], "lightgbm", e.clone()),
        validate(&[filt], "rf", e.clone()),
        validate(&[filt], "dart", e.clone()),
        validate(&[filt], "goss", e.clone()),
        validate(&[filt], "xgboost", e.clone()),
        validate(&[filt], "xgb_dart", e.clone()),
        validate(&[filt], "catboost", e.clone()),
        validate(&[filt], "gbdt", json!({"n_estimators": 50})),
        validate(&[filt], "gbdt", json!({"max_depth": 2})),
        validate(&[filt, recip], "gbdt", e.clone()),
        validate(&[two], "xgb_dart", e.clone()),
        validate(&[deg], "catboost", e.clone()),
        validate(&[raw], "gbdt", json!({"subsample": 0.8, "colsample_bytree": 0.8})),
        validate(&[filt], "gbdt", json!({"min_child_samples": 5})),
    ];
    debug_assert_eq!(trials.len(), TRIANGLE_VALIDATIONS as usize);

    let mut turns = vec![
        vec![Action::ExecuteQuery { sql: "SHOW TABLES".into() }],
        vec![
            Action::GetTableInfo { table: None },
            Action::ExecuteQuery { sql: "PRAGMA table_info('train_table')".into() },
        ],
        vec![Action::ExecuteQuery { sql: "SELECT COUNT(*) AS n_edges, SUM(src = dst) AS n_loops FROM R".into() }],
        vec![Action::ExecuteQuery { sql: "SELECT label, COUNT(*) AS n FROM train_table GROUP BY label".into() }],
    ];
    for (i, t) in trials.into_iter().enumerate() {
        turns.push(vec![t]);
        if (i + 1) % 5 == 0 {
            turns.push(vec![
                Action::QueryEvalWorkspace {
                    sql: "SELECT trial_id, model_choice, primary_score FROM trials ORDER BY primary_score DESC LIMIT 5"
                        .into(),
                },
                Action::QueryEvalWorkspace {
                    sql: "SELECT row_id, entity_id, label, score FROM eval_predictions \
                          WHERE trial_id = (SELECT trial_id FROM trials ORDER BY created_at DESC LIMIT 1) \
                          ORDER BY ABS(score - label) DESC LIMIT 10"
                        .into(),
                },
                Action::GetTrialHistory,
            ]);
        }
    }
    turns.push(vec![Action::FinalText { text: "Best program: filtered cycle3 count with gbdt.".into() }]);
    turns
}

/// A short search over the co-occurrence task.
pub fn cooccurrence_script() -> Vec<Vec<Action>> {
    vec![
        vec![Action::ExecuteQuery { sql: "SHOW TABLES".into() }],
        vec![Action::GetTableInfo { table: Some("T2".into()) }],
        vec![validate(&[("agg", AGGREGATE_SQL)], "gbdt", json!({}))],
        vec![Action::QueryEvalWorkspace {
            sql: "SELECT label, AVG(score) AS mean_score FROM eval_predictions GROUP BY label".into(),
        }],
        vec![validate(&[("cooc", COOCCURRENCE_SQL)], "gbdt", json!({}))],
        vec![Action::GetTrialHistory],
        vec![Action::FinalText { text: "Best program: A/B co-occurrence flag.".into() }],
    ]
}
