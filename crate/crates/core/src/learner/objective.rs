use serde::{Deserialize, Serialize};

use crate::relstore::TaskType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    BinaryLogistic,
    RegressionL1,
    RegressionL2,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::BinaryLogistic => "binary_logistic",
            Objective::RegressionL1 => "regression_l1",
            Objective::RegressionL2 => "regression_l2",
        }
    }

    pub fn task(self) -> TaskType {
        match self {
            Objective::BinaryLogistic => TaskType::BinaryClassification,
            Objective::RegressionL1 | Objective::RegressionL2 => TaskType::Regression,
        }
    }

    /// Map a raw ensemble margin to the prediction the gradients are taken at.
    pub fn link(self, margin: f64) -> f64 {
        match self {
            Objective::BinaryLogistic => sigmoid(margin),
            _ => margin,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// First and second derivatives of the loss with respect to the margin.
/// For the logistic objective `predictions` are probabilities.
pub fn compute_gradients(objective: Objective, predictions: &[f64], labels: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(predictions.len(), labels.len(), "gradient inputs must align");
    let mut g = Vec::with_capacity(labels.len());
    let mut h = Vec::with_capacity(labels.len());
    for (&p, &y) in predictions.iter().zip(labels) {
        let (gi, hi) = match objective {
            Objective::BinaryLogistic => (p - y, (p * (1.0 - p)).max(1e-16)),
            Objective::RegressionL2 => (p - y, 1.0),
            Objective::RegressionL1 => {
                let d = p - y;
                (
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    },
                    1.0,
                )
            }
        };
        g.push(gi);
        h.push(hi);
    }
    (g, h)
}

/// Mean training loss at the given margins.
pub fn loss(objective: Objective, margins: &[f64], labels: &[f64]) -> f64 {
    let n = labels.len().max(1) as f64;
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&f, &y)| match objective {
            // log(1 + e^f) - y f, computed stably
            Objective::BinaryLogistic => {
                let softplus = if f > 0.0 { f + (-f).exp().ln_1p() } else { f.exp().ln_1p() };
                softplus - y * f
            }
            Objective::RegressionL2 => 0.5 * (f - y) * (f - y),
            Objective::RegressionL1 => (f - y).abs(),
        })
        .sum();
    total / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn analytic_examples() {
        let (g, h) = compute_gradients(Objective::BinaryLogistic, &[0.7], &[1.0]);
        assert!((g[0] + 0.3).abs() < 1e-15 && (h[0] - 0.21).abs() < 1e-15);
        assert_eq!(compute_gradients(Objective::RegressionL2, &[2.0], &[5.0]), (vec![-3.0], vec![1.0]));
        assert_eq!(compute_gradients(Objective::RegressionL1, &[4.0], &[4.0]).0, vec![0.0]);
    }

    #[test]
    fn logistic_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-4;
        for _ in 0..20 {
            let f: f64 = rng.gen_range(-4.0..4.0);
            let y = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            let l = |m: f64| loss(Objective::BinaryLogistic, &[m], &[y]);
            let fd_g = (l(f + eps) - l(f - eps)) / (2.0 * eps);
            let fd_h = (l(f + eps) - 2.0 * l(f) + l(f - eps)) / (eps * eps);
            let (g, h) = compute_gradients(Objective::BinaryLogistic, &[sigmoid(f)], &[y]);
            assert!((g[0] - fd_g).abs() < 1e-6, "g {} vs {}", g[0], fd_g);
            assert!((h[0] - fd_h).abs() < 1e-6, "h {} vs {}", h[0], fd_h);
        }
    }
}
