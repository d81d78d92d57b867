use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use r2sl_bench::synthetic;
use r2sl_core::latent::{e_step, fit, gd_step, log_likelihood, m_step, LatentConfig, RegionalLatentModel};

fn latent(c: &mut Criterion) {
    let data = synthetic(20_000, 1).expect("synthetic data");
    let dims = data.meta.dims;
    let config = LatentConfig { m: 3, ..Default::default() };
    let model = RegionalLatentModel::initialize(&data.records, &dims, config.clone());
    let resp = e_step(&model, &data.records).unwrap();

    c.bench_function("log_likelihood/20k", |b| {
        b.iter(|| log_likelihood(black_box(&model), &data.records).unwrap())
    });
    c.bench_function("e_step/20k", |b| b.iter(|| e_step(black_box(&model), &data.records).unwrap()));
    c.bench_function("m_step/20k", |b| {
        b.iter_batched(
            || model.clone(),
            |mut m| m_step(&mut m, &data.records, &resp),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("gd_step/20k", |b| {
        b.iter_batched(
            || model.clone(),
            |mut m| gd_step(&mut m, &data.records, &resp).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("20k", |b| b.iter(|| fit(&data.records, &dims, config.clone()).unwrap()));
    group.finish();
}

criterion_group!(benches, latent);
criterion_main!(benches);
