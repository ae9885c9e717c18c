use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LearnerError, Objective};
use crate::relstore::TaskType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Gbdt,
    Rf,
    Dart,
    Goss,
    Xgboost,
    XgbDart,
    Catboost,
}

impl ModelChoice {
    pub const ALL: [ModelChoice; 7] = [
        ModelChoice::Gbdt,
        ModelChoice::Rf,
        ModelChoice::Dart,
        ModelChoice::Goss,
        ModelChoice::Xgboost,
        ModelChoice::XgbDart,
        ModelChoice::Catboost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelChoice::Gbdt => "gbdt",
            ModelChoice::Rf => "rf",
            ModelChoice::Dart => "dart",
            ModelChoice::Goss => "goss",
            ModelChoice::Xgboost => "xgboost",
            ModelChoice::XgbDart => "xgb_dart",
            ModelChoice::Catboost => "catboost",
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelChoice {
    type Err = LearnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        ModelChoice::ALL.into_iter().find(|m| m.as_str() == t).ok_or_else(|| LearnerError::UnknownModel(s.to_string()))
    }
}

/// Hyperparameters exactly as submitted.
pub type RawModelConfig = serde_json::Map<String, Value>;

/// A bounded numeric key and the canonical field it sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfigBound {
    pub key: &'static str,
    pub target: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub integer: bool,
}

const fn bound(key: &'static str, target: &'static str, lo: f64, hi: f64, integer: bool) -> ConfigBound {
    ConfigBound { key, target, lo, hi, integer }
}

/// Every bounded key of the model menu. Canonical keys come first; aliases
/// after them, so a canonical key wins when both are given.
pub const BOUNDS: &[ConfigBound] = &[
    bound("n_estimators", "n_estimators", 50.0, 500.0, true),
    bound("learning_rate", "learning_rate", 0.01, 0.3, false),
    bound("max_depth", "max_depth", 2.0, 10.0, true),
    bound("min_child_samples", "min_child_samples", 1.0, 100.0, true),
    bound("subsample", "subsample", 0.5, 1.0, false),
    bound("colsample_bytree", "colsample_bytree", 0.5, 1.0, false),
    bound("lambda_l1", "lambda_l1", 0.0, 10.0, false),
    bound("lambda_l2", "lambda_l2", 0.0, 10.0, false),
    bound("min_child_weight", "min_child_samples", 1.0, 100.0, true),
    bound("reg_alpha", "lambda_l1", 0.0, 10.0, false),
    bound("reg_lambda", "lambda_l2", 0.0, 10.0, false),
    bound("l2_leaf_reg", "lambda_l2", 0.1, 10.0, false),
];

/// Fully resolved model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub model_choice: ModelChoice,
    pub n_estimators: u32,
    pub learning_rate: f64,
    pub max_depth: u32,
    pub min_child_samples: u32,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub objective: Objective,
    pub log_transform_target: bool,
    pub categorical_features: Vec<String>,
    pub rf_bagging: bool,
    /// Per-tree drop probability; 0 disables DART.
    pub dart_dropout_rate: f64,
    /// GOSS top fraction `a` and other fraction `b`; `None` disables GOSS.
    pub goss: Option<(f64, f64)>,
    pub seed: u64,
}

impl ResolvedConfig {
    /// Canonical keys, suitable for feeding back into `resolve_config`.
    pub fn to_raw(&self) -> RawModelConfig {
        let mut m = RawModelConfig::new();
        m.insert("n_estimators".into(), self.n_estimators.into());
        m.insert("learning_rate".into(), self.learning_rate.into());
        m.insert("max_depth".into(), self.max_depth.into());
        m.insert("min_child_samples".into(), self.min_child_samples.into());
        m.insert("subsample".into(), self.subsample.into());
        m.insert("colsample_bytree".into(), self.colsample_bytree.into());
        m.insert("lambda_l1".into(), self.lambda_l1.into());
        m.insert("lambda_l2".into(), self.lambda_l2.into());
        m.insert("objective".into(), self.objective.as_str().into());
        m.insert("log_transform_target".into(), self.log_transform_target.into());
        m.insert("categorical_features".into(), self.categorical_features.clone().into());
        m
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// A resolved config plus the warnings raised while resolving it.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub config: ResolvedConfig,
    pub warnings: Vec<String>,
}

const OTHER_KEYS: &[&str] = &["objective", "log_transform_target", "categorical_features"];

pub fn resolve_config(
    choice: ModelChoice,
    raw: &RawModelConfig,
    task: TaskType,
    seed: u64,
) -> Result<Resolution, LearnerError> {
    let mut warnings = Vec::new();
    let mut cfg = ResolvedConfig {
        model_choice: choice,
        n_estimators: 200,
        learning_rate: 0.05,
        max_depth: 6,
        min_child_samples: 20,
        subsample: 1.0,
        colsample_bytree: 1.0,
        lambda_l1: 0.0,
        lambda_l2: 0.0,
        objective: match task {
            TaskType::BinaryClassification => Objective::BinaryLogistic,
            TaskType::Regression => Objective::RegressionL1,
        },
        log_transform_target: false,
        categorical_features: Vec::new(),
        rf_bagging: choice == ModelChoice::Rf,
        dart_dropout_rate: if matches!(choice, ModelChoice::Dart | ModelChoice::XgbDart) { 0.1 } else { 0.0 },
        goss: (choice == ModelChoice::Goss).then_some((0.2, 0.1)),
        seed,
    };

    let mut keys: Vec<&String> = raw.keys().collect();
    keys.sort();
    for key in keys {
        if !BOUNDS.iter().any(|b| b.key == key) && !OTHER_KEYS.contains(&key.as_str()) {
            warnings.push(format!("unknown key {key} ignored"));
        }
    }

    let mut set_targets: Vec<&str> = Vec::new();
    for b in BOUNDS {
        let Some(v) = raw.get(b.key) else { continue };
        let Some(x) = v.as_f64().filter(|_| !v.is_boolean()) else {
            warnings.push(format!("{} must be a number; default kept", b.key));
            continue;
        };
        if set_targets.contains(&b.target) {
            warnings.push(format!("{} ignored: {} already set", b.key, b.target));
            continue;
        }
        set_targets.push(b.target);
        let mut y = if b.integer { x.round() } else { x };
        if y < b.lo || y > b.hi {
            y = y.clamp(b.lo, b.hi);
            warnings.push(format!("{} = {x} clamped to {y}", b.key));
        }
        match b.target {
            "n_estimators" => cfg.n_estimators = y as u32,
            "learning_rate" => cfg.learning_rate = y,
            "max_depth" => cfg.max_depth = y as u32,
            "min_child_samples" => cfg.min_child_samples = y as u32,
            "subsample" => cfg.subsample = y,
            "colsample_bytree" => cfg.colsample_bytree = y,
            "lambda_l1" => cfg.lambda_l1 = y,
            "lambda_l2" => cfg.lambda_l2 = y,
            other => unreachable!("unmapped target {other}"),
        }
    }

    if let Some(v) = raw.get("objective") {
        match v.as_str() {
            Some(s) => {
                let (obj, note) = parse_objective(s);
                match obj {
                    Some(o) if o.task() != task => {
                        return Err(LearnerError::ObjectiveMismatch {
                            objective: s.to_string(),
                            task: task.as_str().to_string(),
                        })
                    }
                    Some(o) => cfg.objective = o,
                    None => warnings.push(format!("unknown objective {s}; default {} kept", cfg.objective.as_str())),
                }
                if let Some(n) = note {
                    warnings.push(n);
                }
            }
            None => warnings.push("objective must be a string; default kept".into()),
        }
    }

    if let Some(v) = raw.get("log_transform_target") {
        match v.as_bool() {
            Some(flag) if flag && task == TaskType::BinaryClassification => {
                warnings.push("log_transform_target ignored for classification".into())
            }
            Some(flag) => cfg.log_transform_target = flag,
            None => warnings.push("log_transform_target must be true or false; default kept".into()),
        }
    }

    if let Some(v) = raw.get("categorical_features") {
        match v.as_array().map(|a| a.iter().map(|x| x.as_str().map(str::to_string)).collect::<Option<Vec<_>>>()) {
            Some(Some(mut names)) => {
                names.sort();
                names.dedup();
                cfg.categorical_features = names;
            }
            _ => warnings.push("categorical_features must be a list of column names; ignored".into()),
        }
    }

    Ok(Resolution { config: cfg, warnings })
}

fn parse_objective(s: &str) -> (Option<Objective>, Option<String>) {
    let t = s.trim().to_ascii_lowercase();
    match t.as_str() {
        "binary" | "binary_logistic" | "binary:logistic" | "logistic" | "binary_logloss" | "cross_entropy"
        | "logloss" => (Some(Objective::BinaryLogistic), None),
        "regression_l1" | "l1" | "mae" | "reg:absoluteerror" | "absoluteerror" => (Some(Objective::RegressionL1), None),
        "regression_l2" | "l2" | "mse" | "regression" | "reg:squarederror" | "squarederror" | "rmse" => {
            (Some(Objective::RegressionL2), None)
        }
        "huber" | "reg:pseudohubererror" => {
            (Some(Objective::RegressionL1), Some(format!("objective {s} is not supported; using regression_l1")))
        }
        _ => (None, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn raw(v: Value) -> RawModelConfig {
        v.as_object().unwrap().clone()
    }

    fn resolve(choice: &str, v: Value) -> Resolution {
        resolve_config(choice.parse().unwrap(), &raw(v), TaskType::BinaryClassification, 7).unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(resolve("gbdt", json!({"learning_rate": 0.5})).config.learning_rate, 0.3);
        assert_eq!(resolve("catboost", json!({"l2_leaf_reg": 3.0})).config.lambda_l2, 3.0);
        let r = resolve("gbdt", json!({"max_depth": 15, "foo": 1}));
        assert_eq!(r.config.max_depth, 10);
        assert!(r.warnings.iter().any(|w| w == "unknown key foo ignored"));
    }

    #[test]
    fn defaults_and_variants() {
        let g = resolve("gbdt", json!({})).config;
        assert_eq!((g.n_estimators, g.learning_rate, g.max_depth, g.min_child_samples), (200, 0.05, 6, 20));
        assert_eq!(g.objective, Objective::BinaryLogistic);
        assert!(resolve("rf", json!({})).config.rf_bagging);
        assert_eq!(resolve("xgb_dart", json!({})).config.dart_dropout_rate, 0.1);
        assert_eq!(resolve("goss", json!({})).config.goss, Some((0.2, 0.1)));
        let x = resolve("xgboost", json!({"min_child_weight": 3.4, "reg_alpha": 2, "reg_lambda": 20})).config;
        assert_eq!((x.min_child_samples, x.lambda_l1, x.lambda_l2), (3, 2.0, 10.0));
    }

    #[test]
    fn canonical_key_beats_alias() {
        let r = resolve("xgboost", json!({"lambda_l2": 1.0, "reg_lambda": 5.0}));
        assert_eq!(r.config.lambda_l2, 1.0);
        assert!(r.warnings.iter().any(|w| w.contains("reg_lambda ignored")));
    }

    #[test]
    fn objectives() {
        let reg = |v| resolve_config(ModelChoice::Gbdt, &raw(v), TaskType::Regression, 0);
        assert_eq!(reg(json!({})).unwrap().config.objective, Objective::RegressionL1);
        assert_eq!(reg(json!({"objective": "reg:squarederror"})).unwrap().config.objective, Objective::RegressionL2);
        let h = reg(json!({"objective": "huber"})).unwrap();
        assert_eq!(h.config.objective, Objective::RegressionL1);
        assert!(!h.warnings.is_empty());
        assert!(matches!(reg(json!({"objective": "binary"})), Err(LearnerError::ObjectiveMismatch { .. })));
        let c = resolve_config(ModelChoice::Gbdt, &raw(json!({"objective": "mae"})), TaskType::BinaryClassification, 0);
        assert!(matches!(c, Err(LearnerError::ObjectiveMismatch { .. })));
        assert!(reg(json!({"log_transform_target": true})).unwrap().config.log_transform_target);
    }

    fn arb_raw() -> impl Strategy<Value = RawModelConfig> {
        let keys: Vec<&'static str> = BOUNDS.iter().map(|b| b.key).collect();
        proptest::collection::btree_map(proptest::sample::select(keys), -50.0f64..600.0, 0..8)
            .prop_map(|m| m.into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect())
    }

    proptest! {
        #[test]
        fn clamping_is_idempotent(r in arb_raw(), choice in proptest::sample::select(ModelChoice::ALL.to_vec())) {
            let once = resolve_config(choice, &r, TaskType::Regression, 3).unwrap().config;
            let twice = resolve_config(choice, &once.to_raw(), TaskType::Regression, 3).unwrap();
            prop_assert_eq!(&once, &twice.config);
            prop_assert!(twice.warnings.is_empty());
        }
    }
}
