//! Shared fixtures for the criterion benches.

use std::collections::BTreeSet;
use std::path::Path;

use featsearch_core::featprog::{ColumnData, FeatureColumn, FeatureMatrix};
use featsearch_core::synthbench::{gen_triangle_task, GeneratedTask, TriangleSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` rows of `n_cols` numeric features with a noisy linear binary label.
pub fn synthetic_binary(n: usize, n_cols: usize, seed: u64) -> (FeatureMatrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..n_cols).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let y = (0..n)
        .map(|i| {
            let s: f64 = cols.iter().enumerate().map(|(j, c)| c[i] / (j + 1) as f64).sum();
            if s + rng.gen_range(-0.3..0.3) > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let columns = cols
        .into_iter()
        .enumerate()
        .map(|(j, c)| FeatureColumn {
            name: format!("b__x{j}"),
            data: ColumnData::Numeric(c.into_iter().map(Some).collect()),
        })
        .collect();
    let x =
        FeatureMatrix { row_ids: (0..n).collect(), columns, declared_categoricals: BTreeSet::new(), blocks: vec![] };
    (x, y)
}

/// Default-sized triangle task in `dir`.
pub fn triangle_task(dir: &Path) -> GeneratedTask {
    gen_triangle_task(&TriangleSpec::default(), dir).expect("triangle task generates")
}
