use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use scar_bench::fixture;
use scar_core::{ModelKind, Solver};

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for model in [ModelKind::Qp, ModelKind::Mlr, ModelKind::Mf, ModelKind::Lda] {
        let (data, cfg) = fixture(model);
        let solver = Solver::new(cfg, &data).unwrap();
        let x = solver.init().unwrap();
        group.bench_function(model.name(), |b| {
            b.iter_batched(
                || x.clone(),
                |mut y| solver.step(&mut y).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, steps);
criterion_main!(benches);
