use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use crowd_sched::eval::{generate_synthetic, SyntheticSpec};
use crowd_sched::exec::Execution;
use crowd_sched::platform::{PlatformConfig, Pool};
use crowd_sched::predictor::{featurize_pool, kfold_cv, train, training_set, TrainConfig, TrainingTarget};
use crowd_sched::scheduler::{schedule_project, ScheduleMode};
use crowd_sched::similarity::SimilarityWeights;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn pipeline(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticSpec {
        task_count: 1500,
        ..SyntheticSpec::planted()
    })
    .unwrap();
    let pool = Pool::new(&data.dataset, &SimilarityWeights::uniform(), PlatformConfig::default()).unwrap();
    let set = training_set(&pool, TrainingTarget::TaskFailure, Execution::Sequential).unwrap();
    let cfg = TrainConfig {
        max_epochs: 5,
        kfold_k: 4,
        ..Default::default()
    };
    let model = train(&set, &cfg).unwrap().model;

    let mut g = c.benchmark_group("featurize");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| featurize_pool(black_box(&pool), e).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("schedule_static");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| {
                schedule_project(&pool, &model, black_box(data.dataset.tasks()), ScheduleMode::Static, e).unwrap()
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("kfold_cv");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| kfold_cv(black_box(&set), &cfg, e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
