use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LearnerError, Objective, ResolvedConfig, Tree};
use crate::featprog::{ColumnData, FeatureMatrix};
use crate::relstore::format_float;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// Levels in first-appearance order; a level's code is its index.
    Categorical {
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
}

/// A trained ensemble. Immutable after fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// Training columns in canonical (name) order; tree features index this.
    pub schema: Vec<ColumnSchema>,
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub objective: Objective,
    pub log_transform_target: bool,
    pub config: ResolvedConfig,
    /// Total split gain per schema column.
    pub split_gain: Vec<f64>,
    /// Mean training loss after each boosting iteration.
    pub train_loss: Vec<f64>,
    /// Training margins as tracked by the boosting loop.
    #[serde(skip)]
    pub train_margins: Vec<f64>,
}

/// Schema for a training matrix: columns sorted by name, categorical when
/// the data is textual or the name is declared.
pub(crate) fn build_schema(x: &FeatureMatrix, declared: &[String]) -> Vec<ColumnSchema> {
    let mut cols: Vec<_> = x.columns.iter().collect();
    cols.sort_by(|a, b| a.name.cmp(&b.name));
    cols.into_iter()
        .map(|c| {
            let categorical =
                c.data.is_categorical() || declared.contains(&c.name) || x.declared_categoricals.contains(&c.name);
            let kind = if categorical {
                let mut levels: Vec<String> = Vec::new();
                let mut seen = HashMap::new();
                for v in c.data.to_categorical().into_iter().flatten() {
                    if !seen.contains_key(&v) {
                        seen.insert(v.clone(), levels.len());
                        levels.push(v);
                    }
                }
                ColumnKind::Categorical { levels }
            } else {
                ColumnKind::Numeric
            };
            ColumnSchema { name: c.name.clone(), kind }
        })
        .collect()
}

/// Encode `x` against `schema`: numeric values as-is, categorical values as
/// level codes. Unknown levels and absent columns become missing.
pub(crate) fn encode(
    schema: &[ColumnSchema],
    x: &FeatureMatrix,
    used: &[bool],
) -> Result<Vec<Vec<Option<f64>>>, LearnerError> {
    let n = x.n_rows();
    schema
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let Some(data) = x.column(&col.name).map(|c| &c.data) else {
                return Ok(vec![None; n]);
            };
            match (&col.kind, data) {
                (ColumnKind::Numeric, ColumnData::Numeric(v)) => Ok(v.clone()),
                (ColumnKind::Numeric, ColumnData::Categorical(v)) => {
                    if v.iter().all(Option::is_none) || !used[j] {
                        Ok(vec![None; n])
                    } else {
                        Err(LearnerError::SchemaMismatch(col.name.clone()))
                    }
                }
                (ColumnKind::Categorical { levels }, data) => {
                    let codes: HashMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
                    let text = match data {
                        ColumnData::Categorical(v) => v.clone(),
                        ColumnData::Numeric(v) => v.iter().map(|x| x.map(format_float)).collect(),
                    };
                    Ok(text.iter().map(|t| t.as_deref().and_then(|t| codes.get(t)).map(|&c| c as f64)).collect())
                }
            }
        })
        .collect()
}

impl FittedModel {
    /// Which schema columns some tree splits on.
    fn used_columns(&self) -> Vec<bool> {
        let mut used = vec![false; self.schema.len()];
        for t in &self.trees {
            for n in &t.nodes {
                if let super::Node::Split { feature, .. } = n {
                    used[*feature] = true;
                }
            }
        }
        used
    }

    /// Raw ensemble output before the link function / inverse transform.
    pub fn predict_margin(&self, x: &FeatureMatrix) -> Result<Vec<f64>, LearnerError> {
        for c in &x.columns {
            if !self.schema.iter().any(|s| s.name == c.name) {
                log::warn!("column {} was not seen in training and is ignored", c.name);
            }
        }
        let cols = encode(&self.schema, x, &self.used_columns())?;
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| {
                let mut m = self.base_score;
                for t in &self.trees {
                    m += t.weight * t.leaf_value(|f| cols[f][i]);
                }
                m
            })
            .collect())
    }

    /// Probabilities for classification; values in the label scale for regression.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, LearnerError> {
        let margins = self.predict_margin(x)?;
        Ok(margins.into_iter().map(|m| self.finish(m)).collect())
    }

    pub(crate) fn finish(&self, margin: f64) -> f64 {
        match self.objective {
            Objective::BinaryLogistic => super::sigmoid(margin),
            _ if self.log_transform_target => margin.exp_m1(),
            _ => margin,
        }
    }

    /// Split gain per column, normalized to sum to 1 when any split exists.
    pub fn feature_importance(&self) -> BTreeMap<String, f64> {
        let total: f64 = self.split_gain.iter().sum();
        self.schema
            .iter()
            .zip(&self.split_gain)
            .map(|(c, &g)| (c.name.clone(), if total > 0.0 { g / total } else { 0.0 }))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<FittedModel, serde_json::Error> {
        serde_json::from_str(text)
    }
}
