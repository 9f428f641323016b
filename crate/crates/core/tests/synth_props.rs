use std::collections::BTreeMap;

use crowd_sched::eval::{generate_synthetic, PlantedFailure, SyntheticSpec};
use crowd_sched::exec::Execution;
use crowd_sched::platform::{PlatformConfig, Pool};
use crowd_sched::predictor::featurize_pool;
use crowd_sched::similarity::SimilarityWeights;
use crowd_sched::task::write_csv;

#[test]
fn daily_arrivals_average_to_rate() {
    let spec = SyntheticSpec {
        task_count: 2000,
        arrival_rate: 13.0,
        failure: PlantedFailure::Constant { probability: 0.5 },
        ..Default::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let mut per_day: BTreeMap<i64, f64> = BTreeMap::new();
    let last = data.dataset.tasks().iter().map(|t| t.registration_start).max().unwrap();
    for d in 0..last {
        per_day.insert(d, 0.0);
    }
    for t in data.dataset.tasks() {
        if t.registration_start < last {
            *per_day.get_mut(&t.registration_start).unwrap() += 1.0;
        }
    }
    let n = per_day.len() as f64;
    assert!(n >= 100.0);
    let mean = per_day.values().sum::<f64>() / n;
    let var = per_day.values().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!((mean - 13.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn mean_open_count_near_rate_times_lifetime() {
    let spec = SyntheticSpec {
        task_count: 3000,
        failure: PlantedFailure::Constant { probability: 0.5 },
        ..Default::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let pool = Pool::new(&data.dataset, &SimilarityWeights::uniform(), PlatformConfig::default()).unwrap();
    let counts: Vec<f64> = (30..200).map(|d| pool.open_count_on(d, None) as f64).collect();
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    // the registration window is 90% of a 14-day mean lifetime
    assert!((150.0..=200.0).contains(&mean), "mean open {mean}");
}

#[test]
fn constant_failure_ratio() {
    let data = generate_synthetic(&SyntheticSpec::constant(0.75, 5000)).unwrap();
    let failed = data.dataset.tasks().iter().filter(|t| t.outcome().failed).count() as f64 / 5000.0;
    assert!((failed - 0.75).abs() <= 0.02, "{failed}");
    assert!(data.truth.iter().all(|g| g.phi == 0.75));
}

#[test]
fn truth_features_match_pool_features() {
    let data = generate_synthetic(&SyntheticSpec {
        task_count: 400,
        ..SyntheticSpec::planted()
    })
    .unwrap();
    let pool = Pool::new(&data.dataset, &SimilarityWeights::uniform(), PlatformConfig::default()).unwrap();
    let features = featurize_pool(&pool, Execution::Sequential).unwrap();
    for (f, g) in features.iter().zip(&data.truth) {
        assert_eq!(*f, g.features);
        assert_eq!(g.phi, SyntheticSpec::planted().failure.eval(f, &data.scales));
    }
}

#[test]
fn byte_identical_outputs_per_seed() {
    let spec = SyntheticSpec {
        task_count: 500,
        ..SyntheticSpec::planted()
    };
    let bytes = || {
        let d = generate_synthetic(&spec).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_csv(&d.dataset, &mut a).unwrap();
        d.write_truth_csv(&mut b).unwrap();
        (a, b)
    };
    assert_eq!(bytes(), bytes());
}

#[test]
fn spec_from_toml() {
    let spec: SyntheticSpec = toml::from_str(
        r#"
        task_count = 50
        arrival_rate = 5.0
        seed = 3
        [failure]
        kind = "nonlinear"
        steepness = 2.0
        open_tasks_weight = 1.0
        similarity_weight = 0.0
        prize_weight = 0.0
        duration_curvature = 0.0
        offset = 0.0
        floor = 0.05
        "#,
    )
    .unwrap();
    assert_eq!(spec.task_count, 50);
    let d = generate_synthetic(&spec).unwrap();
    assert!(d.truth.iter().all(|g| (0.05..=0.95).contains(&g.phi)));
    let c: SyntheticSpec = toml::from_str("[failure]\nkind = \"constant\"\nprobability = 0.3").unwrap();
    assert_eq!(c.failure, PlantedFailure::Constant { probability: 0.3 });
}
