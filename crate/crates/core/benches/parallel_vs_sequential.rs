//! Parallel and sequential execution of the three data-parallel workloads:
//! one higher-order reservoir step, a small hyperparameter sweep and a batch
//! of perturbed rollouts. Without the `parallel` feature both variants run
//! sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hqrc::data::{synth_series, SplitSpec, SynthSpec};
use hqrc::experiment::{
    perturbation_study, prepare, run_train, sweep_with, validate, ExperimentConfig, ModelSpec,
    PreparedData, Span,
};
use hqrc::par::Execution;
use hqrc::reservoir::{HigherOrderReservoir, HqrcConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn data() -> PreparedData {
    let spec = SynthSpec {
        n_time: 300,
        ..SynthSpec::default()
    };
    let (series, mask) = synth_series(&spec).unwrap();
    let split = SplitSpec::at(200, series.n_time).unwrap();
    prepare(
        &series,
        &mask,
        &split,
        5,
        &ExperimentConfig::default().region,
    )
    .unwrap()
}

fn reservoir_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("hqrc_step");
    for (name, exec) in MODES {
        let cfg = HqrcConfig {
            execution: exec,
            ..HqrcConfig::default()
        };
        let mut model = HigherOrderReservoir::new(&cfg, 5).unwrap();
        let u = [0.2, 0.4, 0.6, 0.8, 0.5];
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                model.drive(black_box(&u)).unwrap();
            })
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let data = data();
    let cfg = ExperimentConfig {
        washout: 20,
        horizon: 40,
        eval_starts: vec![20],
        ..ExperimentConfig::default()
    };
    let grid: Vec<ModelSpec> = [0.3, 0.5, 0.7, 0.9]
        .iter()
        .map(|&alpha| {
            ModelSpec::Hqrc(HqrcConfig {
                n_qubits: 4,
                v_nodes: 5,
                alpha,
                execution: Execution::Sequential,
                ..HqrcConfig::default()
            })
        })
        .collect();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sweep_with(&grid, exec, ModelSpec::label, |s| validate(s, &data, &cfg)))
        });
    }
    group.finish();
}

fn perturbations(c: &mut Criterion) {
    let data = data();
    let spec = ModelSpec::Hqrc(HqrcConfig {
        n_qubits: 4,
        v_nodes: 5,
        execution: Execution::Sequential,
        ..HqrcConfig::default()
    });
    let (trained, _) = run_train(&spec, &data, 20).unwrap();
    let mut group = c.benchmark_group("perturbation_draws");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                perturbation_study(&trained, &data, Span::Test, 20, 40, 1e-3, 8, 1, exec).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, reservoir_step, sweep, perturbations);
criterion_main!(benches);
