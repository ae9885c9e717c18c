use std::path::Path;

use featsearch_core::agent::{
    parse_final_answer, run_rollout, Action, AgentError, JsonText, RolloutConfig, RolloutResult, ScriptedPolicy,
    StopReason, EVAL_QUERIES_FILE, ROLLOUT_FILE, TRANSCRIPT_FILE,
};
use featsearch_core::clock::Clock;
use featsearch_core::learner::{FitOptions, ModelChoice};
use featsearch_core::relstore::{ContextHandle, Split};
use featsearch_core::select::{cross_rollout_select, deploy_champion};
use featsearch_core::synthbench::{
    gen_triangle_task, triangle_script, GeneratedTask, TriangleSpec, CYCLE3_FILTERED_SQL, CYCLE3_RAW_SQL,
    TRIANGLE_VALIDATIONS,
};
use featsearch_core::workspace::{Workspace, WORKSPACE_FILE};
use serde_json::json;

fn small_task(dir: &Path) -> GeneratedTask {
    let spec = TriangleSpec { n: 100, p: 0.04, ..TriangleSpec::default() };
    gen_triangle_task(&spec, &dir.join("task")).unwrap()
}

fn validate(sql: &str, model: &str) -> Action {
    Action::ValidateProgram {
        feature_queries_json: JsonText(json!([{"name": "q", "sql": sql}]).to_string()),
        model_choice: model.into(),
        model_config_json: JsonText("{}".into()),
    }
}

fn trial_rows(dir: &Path) -> Vec<Vec<String>> {
    let conn = rusqlite::Connection::open(dir.join(WORKSPACE_FILE)).unwrap();
    let mut stmt = conn.prepare("SELECT * FROM trials ORDER BY trial_id").unwrap();
    let n = stmt.column_count();
    stmt.query_map([], |r| Ok((0..n).map(|i| format!("{:?}", r.get_ref(i).unwrap())).collect::<Vec<_>>()))
        .unwrap()
        .map(Result::unwrap)
        .collect()
}

fn strip_path(mut r: RolloutResult) -> RolloutResult {
    r.workspace_path = Default::default();
    r
}

#[test]
fn scripted_search_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path());
    let cfg = RolloutConfig { max_validations: Some(TRIANGLE_VALIDATIONS), ..RolloutConfig::default() };
    let out = dir.path().join("rollout_0");
    let mut policy = ScriptedPolicy::new(triangle_script());
    let r = run_rollout(&task.manifest, &mut policy, &cfg, 0, &out).unwrap();

    assert_eq!(r.trials.len(), 30);
    assert_eq!(r.stop_reason, StopReason::ValidationBudget);
    assert!(r.failure.is_none());
    let bests: Vec<f64> = r.turns.iter().map(|t| t.running_best.unwrap_or(f64::NEG_INFINITY)).collect();
    assert!(bests.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(r.best_score, Some(1.0));
    assert_eq!(r.turns.iter().map(|t| t.tool_calls).sum::<usize>(), triangle_script().iter().flatten().count() - 1 - 3);

    let n_failed = r.trials.iter().filter(|t| t.primary_score.is_none()).count();
    assert_eq!(n_failed, 4);
    for f in [WORKSPACE_FILE, ROLLOUT_FILE, TRANSCRIPT_FILE, EVAL_QUERIES_FILE] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(RolloutResult::load(&out.join(ROLLOUT_FILE)).unwrap(), r);

    let mut ctx = ContextHandle::open(task.manifest.clone()).unwrap();
    ctx.bind_split(Split::Val).unwrap();
    let ws = Workspace::open(&out, &ctx).unwrap();
    assert_eq!(ws.trial_count().unwrap(), 30);
    let history = ws.trial_history().unwrap();
    assert!(history.starts_with("TRIAL HISTORY (30 trials"), "{history}");
    assert_eq!(history.matches("FAILED").count(), n_failed);
    let transcript = std::fs::read_to_string(out.join(TRANSCRIPT_FILE)).unwrap();
    assert!(transcript.contains("ENTITY CLASSIFICATION"));
    assert!(std::fs::read_to_string(out.join(EVAL_QUERIES_FILE)).unwrap().contains("eval_predictions"));
}

#[test]
fn scripted_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path());
    let script: Vec<Vec<Action>> = triangle_script().into_iter().take(14).collect();
    let cfg = RolloutConfig::default();
    let run = |name: &str, threads: usize| {
        let out = dir.path().join(name);
        let cfg = RolloutConfig { fit: FitOptions { threads: Some(threads) }, ..cfg.clone() };
        let r = run_rollout(&task.manifest, &mut ScriptedPolicy::new(script.clone()), &cfg, 0, &out).unwrap();
        (strip_path(r), trial_rows(&out))
    };
    let (r1, t1) = run("a", 1);
    let (r2, t2) = run("b", 4);
    assert_eq!(r1, r2);
    assert_eq!(t1, t2);
    assert!(!t1.is_empty());
}

#[test]
fn idle_policy_yields_no_best() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path());
    let turns = vec![vec![Action::ExecuteQuery { sql: "SELECT COUNT(*) FROM R".into() }]; 3];
    let cfg = RolloutConfig { max_turns: 60, ..RolloutConfig::default() };
    let r = run_rollout(&task.manifest, &mut ScriptedPolicy::new(turns), &cfg, 0, &dir.path().join("r")).unwrap();
    assert_eq!(r.best_trial_id, None);
    assert_eq!(r.best_score, None);
    assert_eq!(r.turns.len(), 3);
    assert!(r.turns.iter().all(|t| t.running_best.is_none()));
}

#[test]
fn turn_budget_injects_wrapup() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path());
    let turns = vec![vec![Action::GetTrialHistory]; 10];
    let cfg = RolloutConfig { max_turns: 3, ..RolloutConfig::default() };
    let out = dir.path().join("r");
    let r = run_rollout(&task.manifest, &mut ScriptedPolicy::new(turns), &cfg, 0, &out).unwrap();
    assert_eq!(r.turns.len(), 3);
    assert_eq!(r.stop_reason, StopReason::TurnBudget);
    let transcript = std::fs::read_to_string(out.join(TRANSCRIPT_FILE)).unwrap();
    assert_eq!(transcript.matches("Continue improving your pipeline.").count(), 1);
    assert_eq!(transcript.matches("This is your last turn.").count(), 1);
}

#[test]
fn existing_workspace_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path());
    let out = dir.path().join("r");
    let cfg = RolloutConfig::default();
    run_rollout(&task.manifest, &mut ScriptedPolicy::new(vec![]), &cfg, 0, &out).unwrap();
    let err = run_rollout(&task.manifest, &mut ScriptedPolicy::new(vec![]), &cfg, 0, &out).unwrap_err();
    assert!(matches!(err, AgentError::WorkspaceExists(_)));
}

#[test]
fn no_feedback_runs_one_validation_on_the_final_answer() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path());
    let answer = json!({
        "feature_queries": [{"name": "cycle3", "sql": CYCLE3_RAW_SQL}],
        "model_choice": "gbdt",
        "model_config": {}
    });
    let turns = vec![
        vec![
            Action::ExecuteQuery { sql: "SHOW TABLES".into() },
            validate(CYCLE3_RAW_SQL, "gbdt"),
            Action::QueryEvalWorkspace { sql: "SELECT * FROM trials".into() },
        ],
        vec![Action::FinalText { text: format!("Here is my program:\n```json\n{answer}\n```") }],
    ];
    let cfg = RolloutConfig { no_feedback: true, ..RolloutConfig::default() };
    let out = dir.path().join("r");
    let r = run_rollout(&task.manifest, &mut ScriptedPolicy::new(turns), &cfg, 0, &out).unwrap();
    assert_eq!(r.turns.len(), 1);
    assert_eq!(r.trials.len(), 1);
    assert_eq!(r.best_score, Some(1.0));
    assert_eq!(r.stop_reason, StopReason::FinalAnswer);
    let transcript = std::fs::read_to_string(out.join(TRANSCRIPT_FILE)).unwrap();
    assert_eq!(transcript.matches("is not available in this run").count(), 2);

    let req = parse_final_answer("no json here");
    assert!(req.feature_queries_json.is_empty());
}

#[test]
fn ablations_gate_tools_and_models() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path());
    let turns = vec![
        vec![validate(CYCLE3_RAW_SQL, "xgboost")],
        vec![validate(CYCLE3_RAW_SQL, "gbdt")],
        vec![Action::QueryEvalWorkspace { sql: "SELECT COUNT(*) FROM trials".into() }],
    ];
    let cfg =
        RolloutConfig { no_workspace: true, allowed_models: Some(vec![ModelChoice::Gbdt]), ..RolloutConfig::default() };
    let out = dir.path().join("r");
    let r = run_rollout(&task.manifest, &mut ScriptedPolicy::new(turns), &cfg, 0, &out).unwrap();
    assert_eq!(r.trials.len(), 1);
    assert_eq!(r.trials[0].model_choice, "gbdt");
    let transcript = std::fs::read_to_string(out.join(TRANSCRIPT_FILE)).unwrap();
    assert!(transcript.contains("model_choice xgboost is not available in this run; available: gbdt"));
    assert!(transcript.contains("tool query_eval_workspace is not available"));
    assert!(!transcript.contains("=== EVALUATION WORKSPACE ==="));
}

#[test]
fn anonymized_search_deploys_under_the_same_names() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path());
    let cfg = RolloutConfig { anonymize_schema: true, seed: 3, ..RolloutConfig::default() };
    let out = dir.path().join("probe");
    let probe = vec![
        vec![Action::GetTableInfo { table: None }],
        vec![Action::ExecuteQuery { sql: "SELECT * FROM R LIMIT 1".into() }],
    ];
    let r = run_rollout(&task.manifest, &mut ScriptedPolicy::new(probe), &cfg, 0, &out).unwrap();
    let map = r.renaming.clone().unwrap();
    let transcript = std::fs::read_to_string(out.join(TRANSCRIPT_FILE)).unwrap();
    let tool_part = &transcript[transcript.find("| tool").unwrap()..];
    assert!(!tool_part.contains("src") && !tool_part.contains("node_id"), "{tool_part}");
    assert!(tool_part.contains("Error"));

    let t = &map.tables[0].synthetic;
    let col = |orig: &str| map.tables[0].columns.iter().find(|c| c.0 == orig).unwrap().1.clone();
    let (src, dst, ent) = (col("src"), col("dst"), map.entity_col.clone());
    let sql = CYCLE3_FILTERED_SQL
        .replace("FROM R", &format!("FROM {t}"))
        .replace("src", &src)
        .replace("dst", &dst)
        .replace("node_id", &ent);
    let out = dir.path().join("search");
    let r = run_rollout(&task.manifest, &mut ScriptedPolicy::new(vec![vec![validate(&sql, "gbdt")]]), &cfg, 0, &out)
        .unwrap();
    assert_eq!(r.best_score, Some(1.0), "{sql}");
    let champion = cross_rollout_select(&[r]).unwrap();
    let mut ctx = ContextHandle::open(task.manifest.clone()).unwrap();
    let report = deploy_champion(&mut ctx, &champion, &FitOptions::default(), &Clock::logical()).unwrap();
    assert_eq!(report.metrics.auroc, Some(1.0));
}

#[test]
fn deployment_refits_on_train_and_val() {
    let dir = tempfile::tempdir().unwrap();
    let task = small_task(dir.path());
    let turns = vec![vec![validate(CYCLE3_RAW_SQL, "gbdt")], vec![validate("SELEC 1", "gbdt")]];
    let r = run_rollout(
        &task.manifest,
        &mut ScriptedPolicy::new(turns),
        &RolloutConfig::default(),
        0,
        &dir.path().join("r"),
    )
    .unwrap();
    let champion = cross_rollout_select(&[r]).unwrap();
    assert_eq!(champion.trial_id, "val_0001");
    let deploy = || {
        let mut ctx = ContextHandle::open(task.manifest.clone()).unwrap();
        deploy_champion(&mut ctx, &champion, &FitOptions::default(), &Clock::logical()).unwrap()
    };
    let a = deploy();
    let b = deploy();
    assert_eq!(a.n_fit_rows, 500 + 200);
    assert_eq!(a.predictions.len(), 200);
    assert_eq!(a.metrics.auroc, Some(1.0));
    assert!(a.audit.clean);
    let bits =
        |r: &featsearch_core::select::TestReport| r.predictions.iter().map(|p| p.score.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.importances[0].0, "q__cycle3_cnt");
    assert!(a.render().contains("FEATURE IMPORTANCE"));
}
