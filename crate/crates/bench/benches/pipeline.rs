use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, Criterion};
use featsearch_bench::triangle_task;
use featsearch_core::clock::Clock;
use featsearch_core::featprog::{materialize, parse_program};
use featsearch_core::harness::{Harness, HarnessOptions, ValidationRequest};
use featsearch_core::relstore::{ContextHandle, Split};
use featsearch_core::synthbench::{CYCLE3_FILTERED_SQL, CYCLE3_RAW_SQL};
use featsearch_core::workspace::Workspace;
use serde_json::json;

fn pipeline(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let task = triangle_task(&dir.path().join("task"));
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);

    for (name, sql) in [("raw", CYCLE3_RAW_SQL), ("filtered", CYCLE3_FILTERED_SQL)] {
        let program = parse_program(&json!([{"name": "cycle3", "sql": sql}]).to_string()).unwrap();
        let mut ctx = ContextHandle::open(task.manifest.clone()).unwrap();
        group.bench_function(format!("materialize/{name}/train"), |b| {
            b.iter(|| materialize(&mut ctx, &program, Split::Train, &BTreeSet::new(), None).unwrap())
        });
    }

    let req = ValidationRequest::new(&json!([{"name": "cycle3", "sql": CYCLE3_RAW_SQL}]).to_string(), "gbdt", "{}");
    let mut ctx = ContextHandle::open(task.manifest.clone()).unwrap();
    ctx.bind_split(Split::Val).unwrap();
    let ws_dir = dir.path().join("ws");
    std::fs::create_dir(&ws_dir).unwrap();
    let mut ws = Workspace::open(&ws_dir, &ctx).unwrap();
    group.bench_function("validate_program/raw", |b| {
        b.iter(|| {
            // A fresh harness per call keeps its materialization cache cold.
            let mut h = Harness::new(&ws, HarnessOptions::default(), Clock::logical()).unwrap();
            h.validate_program(&mut ctx, &mut ws, &req).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
