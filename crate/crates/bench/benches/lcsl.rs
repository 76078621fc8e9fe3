use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lcsl_core::rng::stream_rng;
use lcsl_core::{fit, log_marginal_likelihood, optimize_hyperparameters, recommend_dose, PenaltySpec, Scenario};
use std::hint::black_box;

fn likelihood(c: &mut Criterion) {
    let mut group = c.benchmark_group("log_marginal_likelihood");
    for n in [50, 200, 400] {
        let data = Scenario::Linear.sample_dataset(n, &mut stream_rng(1, 0)).unwrap();
        let model = optimize_hyperparameters(&data, 1, &mut stream_rng(1, 1)).unwrap();
        let (x, y, hp) = (
            model.inputs().clone(),
            model.targets().clone(),
            model.hyperparameters().clone(),
        );
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| log_marginal_likelihood(black_box(&x), black_box(&y), black_box(&hp)).unwrap())
        });
    }
    group.finish();
}

fn hyperparameter_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("optimize_hyperparameters");
    group.sample_size(10);
    for n in [50, 200] {
        let data = Scenario::Parabola.sample_dataset(n, &mut stream_rng(2, 0)).unwrap();
        group.bench_with_input(BenchmarkId::new("restarts_10", n), &n, |b, _| {
            b.iter(|| optimize_hyperparameters(black_box(&data), 10, &mut stream_rng(2, 1)).unwrap())
        });
    }
    group.finish();
}

fn dose_search(c: &mut Criterion) {
    let data = Scenario::Piecewise.sample_dataset(200, &mut stream_rng(3, 0)).unwrap();
    let tuned = optimize_hyperparameters(&data, 2, &mut stream_rng(3, 1)).unwrap();
    let model = fit(&data, tuned.hyperparameters().clone()).unwrap();
    let patient = vec![0.1; data.covariate_dim()];
    let penalty = PenaltySpec::from_percentile(95).unwrap();
    let mut group = c.benchmark_group("recommend_dose");
    for refine in [false, true] {
        group.bench_function(if refine { "grid50_refined" } else { "grid50" }, |b| {
            b.iter(|| recommend_dose(black_box(&model), black_box(&patient), penalty, 50, refine).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, likelihood, hyperparameter_search, dose_search);
criterion_main!(benches);
