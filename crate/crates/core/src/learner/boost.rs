use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::binning::BinMapper;
use super::model::{build_schema, encode, FittedModel};
use super::tree::{grow, BinnedData, GrowParams, RowStats};
use super::{compute_gradients, loss, LearnerError, Objective, ResolvedConfig, Tree};
use crate::featprog::FeatureMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Worker threads for histogram construction; `None` uses the global pool.
    pub threads: Option<usize>,
}

pub fn fit(x: &FeatureMatrix, y: &[f64], cfg: &ResolvedConfig) -> Result<FittedModel, LearnerError> {
    fit_with(x, y, cfg, &FitOptions::default())
}

/// Train an ensemble. Results do not depend on `opts.threads`.
pub fn fit_with(
    x: &FeatureMatrix,
    y: &[f64],
    cfg: &ResolvedConfig,
    opts: &FitOptions,
) -> Result<FittedModel, LearnerError> {
    let n = x.n_rows();
    if n == 0 || x.n_cols() == 0 {
        return Err(LearnerError::DegenerateInput(format!("{n} rows x {} columns", x.n_cols())));
    }
    if y.len() != n {
        return Err(LearnerError::DegenerateInput(format!("{} labels for {n} rows", y.len())));
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(LearnerError::TrainingError(format!("non-finite label {bad}")));
    }
    if cfg.objective == Objective::BinaryLogistic {
        if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(LearnerError::TrainingError(format!("binary labels must be 0 or 1, found {bad}")));
        }
    }
    if cfg.log_transform_target && cfg.objective != Objective::BinaryLogistic {
        if let Some(&bad) = y.iter().find(|&&v| v <= -1.0) {
            return Err(LearnerError::TransformDomain(bad));
        }
    }
    let schema = build_schema(x, &cfg.categorical_features);
    let cols = encode(&schema, x, &vec![true; schema.len()])?;
    for (c, s) in cols.iter().zip(&schema) {
        if c.iter().flatten().any(|v| !v.is_finite()) {
            return Err(LearnerError::TrainingError(format!("column {} contains non-finite values", s.name)));
        }
    }
    let labels: Vec<f64> = if cfg.log_transform_target && cfg.objective != Objective::BinaryLogistic {
        y.iter().map(|v| v.ln_1p()).collect()
    } else {
        y.to_vec()
    };

    let run = || train(schema, cols, &labels, cfg, opts.threads != Some(1));
    match opts.threads {
        Some(k) if k > 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| LearnerError::TrainingError(format!("thread pool: {e}")))?
            .install(run),
        _ => run(),
    }
}

fn base_score(objective: Objective, y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    match objective {
        Objective::BinaryLogistic => {
            let p = mean.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
        _ => mean,
    }
}

fn train(
    schema: Vec<super::ColumnSchema>,
    cols: Vec<Vec<Option<f64>>>,
    y: &[f64],
    cfg: &ResolvedConfig,
    parallel: bool,
) -> Result<FittedModel, LearnerError> {
    let n = y.len();
    let d = schema.len();
    let mappers: Vec<BinMapper> = cols.iter().map(|c| BinMapper::fit(c.iter().flatten().copied())).collect();
    let bins: Vec<Vec<u16>> = cols.iter().zip(&mappers).map(|(c, m)| c.iter().map(|&v| m.bin(v)).collect()).collect();
    let uppers: Vec<Vec<f64>> = mappers.into_iter().map(|m| m.uppers).collect();
    let data = BinnedData { bins: &bins, uppers: &uppers };
    let params = GrowParams {
        max_depth: cfg.max_depth,
        min_child_samples: cfg.min_child_samples,
        lambda_l1: cfg.lambda_l1,
        lambda_l2: cfg.lambda_l2,
    };
    let tree_out = |t: &Tree, i: usize| t.leaf_value(|f| cols[f][i]);

    let base = base_score(cfg.objective, y);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut margins = vec![base; n];
    let mut trees: Vec<Tree> = Vec::with_capacity(cfg.n_estimators as usize);
    let mut train_loss = Vec::with_capacity(cfg.n_estimators as usize);
    let mut split_gain = vec![0.0; d];

    for _ in 0..cfg.n_estimators {
        let dropped: Vec<usize> = if cfg.dart_dropout_rate > 0.0 {
            (0..trees.len()).filter(|_| rng.gen_bool(cfg.dart_dropout_rate)).collect()
        } else {
            Vec::new()
        };
        let mut dropped_sum = vec![0.0; n];
        for &k in &dropped {
            let t = &trees[k];
            for (i, s) in dropped_sum.iter_mut().enumerate() {
                *s += t.weight * tree_out(t, i);
            }
        }
        let fit_margins: Vec<f64> =
            if cfg.rf_bagging { vec![base; n] } else { margins.iter().zip(&dropped_sum).map(|(m, s)| m - s).collect() };
        let preds: Vec<f64> = fit_margins.iter().map(|&m| cfg.objective.link(m)).collect();
        let (g, h) = compute_gradients(cfg.objective, &preds, y);

        let (weight, count) = sample_rows(cfg, &g, &mut rng);
        let rows: Vec<u32> = (0..n as u32).filter(|&i| count[i as usize] > 0).collect();
        let features: Vec<usize> = {
            let k = ((cfg.colsample_bytree * d as f64).ceil() as usize).clamp(1, d);
            if k < d {
                let mut f = index::sample(&mut rng, d, k).into_vec();
                f.sort_unstable();
                f
            } else {
                (0..d).collect()
            }
        };
        let gw: Vec<f64> = g.iter().zip(&weight).map(|(a, w)| a * w).collect();
        let hw: Vec<f64> = h.iter().zip(&weight).map(|(a, w)| a * w).collect();
        let stats = RowStats { g: &gw, h: &hw, count: &count };
        let mut tree = grow(&data, &features, rows, &stats, &params, parallel);

        let k = dropped.len() as f64;
        tree.weight = if cfg.rf_bagging {
            1.0 / f64::from(cfg.n_estimators)
        } else if k > 0.0 {
            cfg.learning_rate / (k + 1.0)
        } else {
            cfg.learning_rate
        };
        for node in &tree.nodes {
            if let super::Node::Split { feature, gain, .. } = node {
                split_gain[*feature] += gain;
            }
        }
        if k > 0.0 {
            let scale = k / (k + 1.0);
            for &j in &dropped {
                trees[j].weight *= scale;
            }
            for i in 0..n {
                margins[i] = fit_margins[i] + scale * dropped_sum[i] + tree.weight * tree_out(&tree, i);
            }
        } else {
            for (i, m) in margins.iter_mut().enumerate() {
                *m += tree.weight * tree_out(&tree, i);
            }
        }
        if margins.iter().any(|m| !m.is_finite()) {
            return Err(LearnerError::TrainingError("boosting produced non-finite margins".into()));
        }
        trees.push(tree);
        train_loss.push(loss(cfg.objective, &margins, y));
    }

    Ok(FittedModel {
        schema,
        trees,
        base_score: base,
        objective: cfg.objective,
        log_transform_target: cfg.log_transform_target && cfg.objective != Objective::BinaryLogistic,
        config: cfg.clone(),
        split_gain,
        train_loss,
        train_margins: margins,
    })
}

/// Per-row gradient weights and sample counts for one boosting round.
fn sample_rows(cfg: &ResolvedConfig, g: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u32>) {
    let n = g.len();
    if cfg.rf_bagging {
        let draws = ((cfg.subsample * n as f64).round() as usize).max(1);
        let mut count = vec![0u32; n];
        for _ in 0..draws {
            count[rng.gen_range(0..n)] += 1;
        }
        return (count.iter().map(|&c| f64::from(c)).collect(), count);
    }
    if let Some((a, b)) = cfg.goss {
        let top = ((a * n as f64).round() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| g[j].abs().total_cmp(&g[i].abs()).then(i.cmp(&j)));
        let mut weight = vec![0.0; n];
        let mut count = vec![0u32; n];
        for &i in &order[..top] {
            weight[i] = 1.0;
            count[i] = 1;
        }
        let rest = &order[top..];
        let other = ((b * n as f64).round() as usize).min(rest.len());
        let amplify = (1.0 - a) / b;
        for k in index::sample(rng, rest.len(), other).into_vec() {
            weight[rest[k]] = amplify;
            count[rest[k]] = 1;
        }
        return (weight, count);
    }
    if cfg.subsample < 1.0 {
        let m = ((cfg.subsample * n as f64).floor() as usize).clamp(1, n);
        let mut weight = vec![0.0; n];
        let mut count = vec![0u32; n];
        for i in index::sample(rng, n, m).into_vec() {
            weight[i] = 1.0;
            count[i] = 1;
        }
        return (weight, count);
    }
    (vec![1.0; n], vec![1; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featprog::{ColumnData, FeatureColumn};
    use crate::learner::{resolve_config, ModelChoice};
    use crate::metrics::auroc;
    use crate::relstore::TaskType;
    use serde_json::json;
    use std::collections::BTreeSet;

    pub(crate) fn matrix(cols: Vec<(&str, ColumnData)>) -> FeatureMatrix {
        let n = cols[0].1.len();
        FeatureMatrix {
            row_ids: (0..n).collect(),
            columns: cols.into_iter().map(|(n, d)| FeatureColumn { name: n.into(), data: d }).collect(),
            declared_categoricals: BTreeSet::new(),
            blocks: vec![],
        }
    }

    fn cfg(choice: ModelChoice, task: TaskType, v: serde_json::Value) -> ResolvedConfig {
        resolve_config(choice, v.as_object().unwrap(), task, 42).unwrap().config
    }

    fn synthetic(n: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<Option<f64>> = (0..n).map(|_| Some(rng.gen_range(-2.0..2.0))).collect();
        let b: Vec<Option<f64>> =
            (0..n).map(|i| if i % 7 == 0 { None } else { Some(rng.gen_range(0.0..1.0)) }).collect();
        let c: Vec<Option<String>> = (0..n).map(|i| Some(["x", "y", "z"][i % 3].to_string())).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let s = a[i].unwrap() + b[i].unwrap_or(0.5) * 2.0 + if i % 3 == 1 { 1.0 } else { 0.0 };
                if s + rng.gen_range(-0.5..0.5) > 1.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        (
            matrix(vec![
                ("q__a", ColumnData::Numeric(a)),
                ("q__b", ColumnData::Numeric(b)),
                ("q__c", ColumnData::Categorical(c)),
            ]),
            y,
        )
    }

    #[test]
    fn constant_target_is_recovered() {
        let x = matrix(vec![("q__a", ColumnData::Numeric((0..50).map(|i| Some(i as f64)).collect()))]);
        let y = vec![3.25; 50];
        let m =
            fit(&x, &y, &cfg(ModelChoice::Gbdt, TaskType::Regression, json!({"objective": "regression_l2"}))).unwrap();
        assert!(m.predict(&x).unwrap().iter().all(|p| (p - 3.25).abs() < 1e-9));
    }

    #[test]
    fn threshold_feature_reaches_perfect_auroc() {
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 - 100.0) / 10.0).collect();
        let y: Vec<f64> = xs.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let x = matrix(vec![("q__x", ColumnData::Numeric(xs.iter().map(|&v| Some(v)).collect()))]);
        let m = fit(
            &x,
            &y,
            &cfg(ModelChoice::Gbdt, TaskType::BinaryClassification, json!({"max_depth": 2, "n_estimators": 100})),
        )
        .unwrap();
        let p = m.predict(&x).unwrap();
        assert_eq!(auroc(&p, &y).unwrap(), 1.0);
        // Oracle: the best single threshold on x separates the classes exactly.
        let best =
            xs.iter().map(|&t| xs.iter().zip(&y).filter(|(&v, &l)| (v > t) == (l == 1.0)).count()).max().unwrap();
        assert_eq!(best, xs.len());
    }

    #[test]
    fn gbdt_training_loss_is_monotone() {
        let (x, y) = synthetic(400, 1);
        for obj in [json!({}), json!({"learning_rate": 0.3, "max_depth": 4})] {
            let m = fit(&x, &y, &cfg(ModelChoice::Gbdt, TaskType::BinaryClassification, obj)).unwrap();
            assert!(m.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", &m.train_loss[..5]);
        }
        let yr: Vec<f64> = y.iter().enumerate().map(|(i, v)| v * 3.0 + (i % 5) as f64).collect();
        let m =
            fit(&x, &yr, &cfg(ModelChoice::Gbdt, TaskType::Regression, json!({"objective": "regression_l2"}))).unwrap();
        assert!(m.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn deterministic_across_threads_and_variants() {
        let (x, y) = synthetic(300, 2);
        for choice in ModelChoice::ALL {
            let c = cfg(
                choice,
                TaskType::BinaryClassification,
                json!({"subsample": 0.8, "colsample_bytree": 0.7, "n_estimators": 60}),
            );
            let a = fit_with(&x, &y, &c, &FitOptions { threads: Some(1) }).unwrap();
            let b = fit_with(&x, &y, &c, &FitOptions { threads: Some(4) }).unwrap();
            assert_eq!(a, b, "{choice}");
            let pa = a.predict(&x).unwrap();
            assert_eq!(pa, b.predict(&x).unwrap());
            assert!(auroc(&pa, &y).unwrap() > 0.8, "{choice}");
            assert!(a.trees.len() <= 60);
        }
    }

    #[test]
    fn predictions_match_fitter_margins() {
        let (x, y) = synthetic(200, 3);
        let m = fit(&x, &y, &cfg(ModelChoice::Gbdt, TaskType::BinaryClassification, json!({}))).unwrap();
        assert_eq!(m.predict_margin(&x).unwrap(), m.train_margins);
    }

    #[test]
    fn column_permutation_does_not_change_predictions() {
        let (x, y) = synthetic(200, 4);
        let c = cfg(ModelChoice::Gbdt, TaskType::BinaryClassification, json!({"colsample_bytree": 0.6}));
        let p1 = fit(&x, &y, &c).unwrap().predict(&x).unwrap();
        let xp = x.permute_columns(&[2, 0, 1]);
        let p2 = fit(&xp, &y, &c).unwrap().predict(&xp).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn all_null_row_scores_finitely_and_unseen_levels_are_missing() {
        let (x, y) = synthetic(200, 5);
        let m = fit(&x, &y, &cfg(ModelChoice::Gbdt, TaskType::BinaryClassification, json!({}))).unwrap();
        let nulls = matrix(vec![
            ("q__a", ColumnData::Numeric(vec![None])),
            ("q__b", ColumnData::Numeric(vec![None])),
            ("q__c", ColumnData::Categorical(vec![Some("never-seen".into())])),
        ]);
        let p = m.predict(&nulls).unwrap();
        assert!(p[0].is_finite() && (0.0..=1.0).contains(&p[0]));
        let missing_col = matrix(vec![("q__a", ColumnData::Numeric(vec![Some(1.0)]))]);
        assert!(m.predict(&missing_col).unwrap()[0].is_finite());
    }

    #[test]
    fn log_transform_domain_and_inverse() {
        let x = matrix(vec![("q__a", ColumnData::Numeric(vec![Some(1.0), Some(2.0)]))]);
        let c = cfg(ModelChoice::Gbdt, TaskType::Regression, json!({"log_transform_target": true}));
        assert_eq!(fit(&x, &[1.0, -2.0], &c), Err(LearnerError::TransformDomain(-2.0)));
        let mut m = fit(&x, &[0.0, 0.0], &c).unwrap();
        m.trees.clear();
        m.base_score = 0.0;
        assert_eq!(m.predict(&x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn importances() {
        let (x, y) = synthetic(200, 6);
        let mut x1 = x.clone();
        x1.columns.truncate(1);
        let m = fit(&x1, &y, &cfg(ModelChoice::Gbdt, TaskType::BinaryClassification, json!({}))).unwrap();
        assert_eq!(m.feature_importance()["q__a"], 1.0);
        let mut x2 = x.clone();
        x2.columns.push(FeatureColumn { name: "q__k".into(), data: ColumnData::Numeric(vec![Some(1.0); 200]) });
        let m = fit(&x2, &y, &cfg(ModelChoice::Gbdt, TaskType::BinaryClassification, json!({}))).unwrap();
        let imp = m.feature_importance();
        assert_eq!(imp["q__k"], 0.0);
        assert!((imp.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let x = matrix(vec![("q__a", ColumnData::Numeric(vec![]))]);
        let c = cfg(ModelChoice::Gbdt, TaskType::Regression, json!({}));
        assert!(matches!(fit(&x, &[], &c), Err(LearnerError::DegenerateInput(_))));
        let inf = matrix(vec![("q__a", ColumnData::Numeric(vec![Some(f64::INFINITY)]))]);
        assert!(matches!(fit(&inf, &[1.0], &c), Err(LearnerError::TrainingError(_))));
    }

    #[test]
    fn model_roundtrips_through_json() {
        let (x, y) = synthetic(100, 7);
        let m =
            fit(&x, &y, &cfg(ModelChoice::Dart, TaskType::BinaryClassification, json!({"n_estimators": 50}))).unwrap();
        let back = FittedModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    }
}
