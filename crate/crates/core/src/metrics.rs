//! Task metrics and report aggregates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relstore::TaskType;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("AUROC needs both classes in the labels")]
    SingleClass,
    #[error("metric inputs are empty")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("task keys differ between scores and baselines")]
    KeyMismatch,
    #[error("baseline for `{0}` is not positive")]
    NonpositiveBaseline(String),
}

/// Metrics for one scored split. `oriented_score` is higher-is-better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_at_half: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_at_half: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    pub oriented_score: f64,
}

impl MetricBundle {
    /// Metrics as a name → value JSON object.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("metrics serialize")
    }

    /// Stable `name=value` rendering in a fixed key order.
    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        for (k, v) in [
            ("auroc", self.auroc),
            ("f1_at_half", self.f1_at_half),
            ("accuracy_at_half", self.accuracy_at_half),
            ("mae", self.mae),
        ] {
            if let Some(v) = v {
                parts.push(format!("{k}={v:.6}"));
            }
        }
        parts.push(format!("oriented_score={:.6}", self.oriented_score));
        parts.join(" ")
    }
}

/// Mann-Whitney AUROC via average ranks; ties count one half.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y > 0.5).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] > 0.5).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn mae(predictions: &[f64], labels: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(predictions, labels)?;
    let total: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum();
    Ok(total / predictions.len() as f64)
}

/// AUROC plus F1 and accuracy at a 0.5 threshold.
pub fn binary_bundle(scores: &[f64], labels: &[f64]) -> Result<MetricBundle, MetricsError> {
    let auc = auroc(scores, labels)?;
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        let pred = s >= 0.5;
        let truth = y > 0.5;
        match (pred, truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
        if pred == truth {
            correct += 1;
        }
    }
    let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
    Ok(MetricBundle {
        auroc: Some(auc),
        f1_at_half: Some(f1),
        accuracy_at_half: Some(correct as f64 / labels.len() as f64),
        mae: None,
        oriented_score: auc,
    })
}

pub fn regression_bundle(predictions: &[f64], labels: &[f64]) -> Result<MetricBundle, MetricsError> {
    let m = mae(predictions, labels)?;
    Ok(MetricBundle { auroc: None, f1_at_half: None, accuracy_at_half: None, mae: Some(m), oriented_score: -m })
}

/// The bundle matching a task's primary metric.
pub fn bundle_for(task: TaskType, scores: &[f64], labels: &[f64]) -> Result<MetricBundle, MetricsError> {
    match task {
        TaskType::BinaryClassification => binary_bundle(scores, labels),
        TaskType::Regression => regression_bundle(scores, labels),
    }
}

/// Mean over tasks of score / baseline.
pub fn normalized_average(
    task_scores: &BTreeMap<String, f64>,
    baseline_scores: &BTreeMap<String, f64>,
) -> Result<f64, MetricsError> {
    if task_scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if !task_scores.keys().eq(baseline_scores.keys()) {
        return Err(MetricsError::KeyMismatch);
    }
    let mut total = 0.0;
    for (k, s) in task_scores {
        let b = baseline_scores[k];
        if b <= 0.0 || b.is_nan() {
            return Err(MetricsError::NonpositiveBaseline(k.clone()));
        }
        total += s / b;
    }
    Ok(total / task_scores.len() as f64)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// O(n^2) pairwise AUROC, kept as the reference for the rank-based version.
pub fn auroc_pairwise(scores: &[f64], labels: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(scores, labels)?;
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        if yi <= 0.5 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj > 0.5 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    if pairs == 0.0 {
        return Err(MetricsError::SingleClass);
    }
    Ok(wins / pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.7, 0.1], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.9, 0.4, 0.6], &[1.0, 1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.9], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.3, 0.2], &[1.0, 1.0]), Err(MetricsError::SingleClass));
        assert!((mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 5.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(mae(&[], &[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn bundle_on_perfect_scores() {
        let b = binary_bundle(&[0.9, 0.1, 0.9, 0.1], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!((b.auroc, b.f1_at_half, b.accuracy_at_half), (Some(1.0), Some(1.0), Some(1.0)));
        let r = regression_bundle(&[1.0, 2.0], &[1.5, 2.0]).unwrap();
        assert_eq!(r.oriented_score, -0.25);
    }

    #[test]
    fn normalized() {
        let s: BTreeMap<String, f64> = [("a".to_string(), 0.5), ("b".to_string(), 2.0)].into();
        let b: BTreeMap<String, f64> = [("a".to_string(), 1.0), ("b".to_string(), 2.0)].into();
        assert_eq!(normalized_average(&s, &b).unwrap(), 0.75);
        let c: BTreeMap<String, f64> = [("a".to_string(), 1.0)].into();
        assert_eq!(normalized_average(&s, &c), Err(MetricsError::KeyMismatch));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..12).prop_map(|v| v as f64 / 4.0), n),
                proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0)], n),
            )
        })
    }

    proptest! {
        #[test]
        fn rank_auroc_matches_pairwise((scores, mut labels) in instance()) {
            labels[0] = 0.0;
            labels[1] = 1.0;
            let fast = auroc(&scores, &labels).unwrap();
            let slow = auroc_pairwise(&scores, &labels).unwrap();
            prop_assert!((fast - slow).abs() <= 1e-12);
        }

        #[test]
        fn auroc_invariant_under_increasing_map((scores, mut labels) in instance()) {
            labels[0] = 1.0;
            labels[1] = 0.0;
            let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&mapped, &labels).unwrap());
        }

        #[test]
        fn mae_symmetric_nonnegative(p in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let y: Vec<f64> = p.iter().map(|v| v * 0.5 + 1.0).collect();
            let a = mae(&p, &y).unwrap();
            prop_assert_eq!(a, mae(&y, &p).unwrap());
            prop_assert!(a >= 0.0);
            prop_assert_eq!(mae(&p, &p).unwrap(), 0.0);
        }
    }
}
