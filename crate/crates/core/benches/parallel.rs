use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use flowlab_core::contentprep::DecodedBody;
use flowlab_core::features::extract_batch;
use flowlab_core::forest::{train_forest, Category, ForestConfig, Labeled};
use flowlab_core::pipeline::synthweb::{generate, render, Template};
use flowlab_core::Exec;

fn corpus() -> Vec<(DecodedBody, Category)> {
    let spec = generate(9, 300, 200, 5);
    spec.pages
        .iter()
        .map(|p| {
            let cat = if p.template == Template::Malicious { Category::Malicious } else { Category::Benign };
            (DecodedBody::plain(render(p).into_bytes(), "text/html"), cat)
        })
        .collect()
}

fn modes() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn extraction(c: &mut Criterion) {
    let bodies: Vec<DecodedBody> = corpus().into_iter().map(|(b, _)| b).collect();
    let mut g = c.benchmark_group("extract_batch");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| b.iter(|| extract_batch(&bodies, exec)));
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let data = corpus();
    let bodies: Vec<DecodedBody> = data.iter().map(|(b, _)| b.clone()).collect();
    let samples: Vec<Labeled> = extract_batch(&bodies, Exec::Parallel)
        .into_iter()
        .zip(data.iter().map(|(_, c)| *c))
        .map(|(fv, c)| Labeled::new(fv, c))
        .collect();
    let cfg = ForestConfig { n_trees: 32, ..ForestConfig::default() };
    let mut g = c.benchmark_group("train_forest");
    g.sample_size(20);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| train_forest(&samples, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, extraction, training);
criterion_main!(benches);
