use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use featsearch_bench::synthetic_binary;
use featsearch_core::learner::{fit_with, resolve_config, FitOptions, ModelChoice};
use featsearch_core::metrics::auroc;
use featsearch_core::relstore::TaskType;
use serde_json::json;

fn fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    let raw = json!({"n_estimators": 100});
    for choice in [ModelChoice::Gbdt, ModelChoice::Goss, ModelChoice::Xgboost] {
        let cfg = resolve_config(choice, raw.as_object().unwrap(), TaskType::BinaryClassification, 0).unwrap().config;
        for n in [1_000, 10_000] {
            let (x, y) = synthetic_binary(n, 8, 1);
            for threads in [1, 4] {
                let opts = FitOptions { threads: Some(threads) };
                group.bench_with_input(BenchmarkId::new(format!("{choice}/t{threads}"), n), &n, |b, _| {
                    b.iter(|| fit_with(&x, &y, &cfg, &opts).unwrap())
                });
            }
        }
    }
    group.finish();
}

fn predict(c: &mut Criterion) {
    let (x, y) = synthetic_binary(10_000, 8, 2);
    let cfg = resolve_config(ModelChoice::Gbdt, &Default::default(), TaskType::BinaryClassification, 0).unwrap().config;
    let model = fit_with(&x, &y, &cfg, &FitOptions::default()).unwrap();
    c.bench_function("predict/gbdt/10000", |b| b.iter(|| model.predict(&x).unwrap()));
}

fn auroc_rank(c: &mut Criterion) {
    let (x, y) = synthetic_binary(100_000, 1, 3);
    let featsearch_core::featprog::ColumnData::Numeric(s) = &x.columns[0].data else { unreachable!() };
    let scores: Vec<f64> = s.iter().map(|v| v.unwrap()).collect();
    c.bench_function("auroc/100000", |b| b.iter(|| auroc(&scores, &y).unwrap()));
}

criterion_group!(benches, fit, predict, auroc_rank);
criterion_main!(benches);
