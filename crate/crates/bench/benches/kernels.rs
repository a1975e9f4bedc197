use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ssml_core::montecarlo::trial_rng;
use ssml_core::runstats::{run_mean, run_waiting_distribution, RunQuery};
use ssml_core::{
    bestcase_certification_trial, haar_random_unitary, run_trial, ssml_step, LearnerState,
    SsmlConfig, StateVector, Target,
};

fn closed_forms(c: &mut Criterion) {
    let q = RunQuery::new(0.99, 100).unwrap();
    c.bench_function("run_mean", |b| b.iter(|| run_mean(black_box(&q))));
    let mut group = c.benchmark_group("markov_survival");
    for k in [5u64, 50] {
        let q = RunQuery::new(0.9, k).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(k), &q, |b, q| {
            b.iter(|| run_waiting_distribution(black_box(q), 50 * k as usize).unwrap())
        });
    }
    group.finish();
}

fn learner(c: &mut Criterion) {
    let mut group = c.benchmark_group("ssml_step");
    for d in [2usize, 8] {
        let cfg = SsmlConfig::new(d, 100, 1);
        let mut rng = trial_rng(1, 0, 0);
        let psi = StateVector::basis(d, 0).unwrap();
        let mut state = LearnerState::new(haar_random_unitary(d, &mut rng).unwrap());
        group.bench_function(BenchmarkId::from_parameter(d), |b| {
            b.iter(|| ssml_step(&mut state, &psi, &cfg, &mut rng).unwrap())
        });
    }
    group.finish();

    let cfg = SsmlConfig::new(2, 40, 1);
    let mut trial = 0;
    c.bench_function("trial_d2_mh40", |b| {
        b.iter(|| {
            trial += 1;
            let mut rng = trial_rng(1, 0, trial);
            run_trial(&cfg, &Target::Haar, &[], &mut rng).unwrap()
        })
    });
    c.bench_function("bernoulli_trial_p0.99_mh100", |b| {
        let mut rng = trial_rng(2, 0, 0);
        b.iter(|| bestcase_certification_trial(100, 0.99, u64::MAX, &mut rng).unwrap())
    });
}

criterion_group!(benches, closed_forms, learner);
criterion_main!(benches);
