mod common;

use crowd_sched::exec::Execution;
use crowd_sched::platform::{PlatformConfig, Pool};
use crowd_sched::predictor::{featurize_pool, Activation, MlpModel, NormStats, DEFAULT_LAYER_DIMS};
use crowd_sched::scheduler::{schedule_project, RollingSchedule, ScheduleMode};
use crowd_sched::similarity::SimilarityWeights;
use crowd_sched::task::{Dataset, TaskRecord};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(seed: u64, n: usize) -> (Pool, MlpModel, Vec<TaskRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = common::random_corpus(&mut rng, n);
    let pool = Pool::new(
        &Dataset::new(corpus.clone()).unwrap(),
        &SimilarityWeights::uniform(),
        PlatformConfig::default(),
    )
    .unwrap();
    let mut model = MlpModel::init(
        &DEFAULT_LAYER_DIMS,
        Activation::Tanh,
        Activation::Sigmoid,
        &mut rng,
        seed,
    )
    .unwrap();
    let features = featurize_pool(&pool, Execution::Sequential).unwrap();
    model.set_norm_stats(NormStats::fit(&features));
    (pool, model, corpus)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn greedy_never_worse_and_bounded(seed in any::<u64>(), n in 2usize..35) {
        let (pool, model, corpus) = setup(seed, n);
        for mode in [ScheduleMode::Static, ScheduleMode::Rolling] {
            let s = schedule_project(&pool, &model, &corpus, mode, Execution::Sequential).unwrap();
            prop_assert_eq!(s.decisions.len(), n);
            for d in &s.decisions {
                prop_assert!(d.p_chosen() <= d.predictions[0]);
                prop_assert!(d.predictions.iter().all(|p| *p >= d.p_chosen()));
                let off = d.chosen_day - d.planned_day;
                prop_assert!((0..=2).contains(&off));
                let first_min = d.predictions.iter().position(|p| *p == d.p_chosen()).unwrap();
                prop_assert_eq!(first_min as u8, d.chosen_offset);
            }
            prop_assert!(s.mean_after <= s.mean_before);
            prop_assert!(s.makespan_after - s.makespan_before <= 2);
        }
    }

    #[test]
    fn static_mode_ignores_processing_order(seed in any::<u64>(), n in 2usize..35) {
        let (pool, model, corpus) = setup(seed, n);
        let a = schedule_project(&pool, &model, &corpus, ScheduleMode::Static, Execution::Sequential).unwrap();
        let mut shuffled = corpus.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let b = schedule_project(&pool, &model, &shuffled, ScheduleMode::Static, Execution::Parallel).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn session_replay_is_deterministic(seed in any::<u64>(), n in 2usize..25, choices in proptest::collection::vec(0u8..3, 25)) {
        let (pool, model, corpus) = setup(seed, n);
        let run = || {
            let mut s = RollingSchedule::new(pool.clone(), corpus.clone());
            for &c in choices.iter().take(n) {
                s.decide(&model, Some(c)).unwrap();
            }
            s.schedule()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(&a, &b);
        let identity = {
            let mut s = RollingSchedule::new(pool.clone(), corpus.clone());
            while !s.is_finished() {
                s.decide(&model, Some(0)).unwrap();
            }
            s.schedule()
        };
        prop_assert_eq!(identity.mean_after, identity.mean_before);
    }
}

#[test]
fn argmin_session_equals_rolling_schedule() {
    let (pool, model, corpus) = setup(77, 30);
    let auto = schedule_project(&pool, &model, &corpus, ScheduleMode::Rolling, Execution::Sequential).unwrap();
    let mut s = RollingSchedule::new(pool.clone(), corpus.clone());
    while let Some(next) = s.next(&model).unwrap() {
        s.decide(&model, Some(next.recommended_offset)).unwrap();
    }
    assert_eq!(s.schedule(), auto);
}

#[test]
fn sessions_do_not_share_pool_state() {
    let (pool, model, corpus) = setup(5, 20);
    let mut a = RollingSchedule::new(pool.clone(), corpus.clone());
    let mut b = RollingSchedule::new(pool.clone(), corpus.clone());
    a.decide(&model, Some(2)).unwrap();
    b.decide(&model, Some(0)).unwrap();
    let first = &a.tasks()[0].task_id;
    let moved = a.pool().get(first).unwrap().record.registration_start;
    let kept = b.pool().get(first).unwrap().record.registration_start;
    assert_eq!(moved, kept + 2);
    assert_eq!(pool.get(first).unwrap().record.registration_start, kept);
}
