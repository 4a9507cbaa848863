use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hcalab::agents::{a2c_update, hca_value_update, reinforce_update, CreditFunction, RolloutCollector};
use hcalab::envs::frozenlake_4x4;
use hcalab::hindsight::{exact_hindsight, exact_transition_hindsight, train_credit_model, CreditModel};
use hcalab::mdp::{evaluate_policy, exact_policy_gradient};
use hcalab::PolicyTable;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn update_rules(c: &mut Criterion) {
    let lake = frozenlake_4x4(true, 0.0, 0.99);
    let pi = PolicyTable::for_mdp(&lake);
    let v = evaluate_policy(&lake, &pi, 1e-10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = RolloutCollector::new(8, 100)
        .unwrap()
        .collect(&lake, &pi, 32, &mut rng)
        .unwrap();
    let mut model = CreditModel::new(16, 4);
    train_credit_model(&mut model, &pi, &batch.credit_samples(), 0.5).unwrap();
    let learned = CreditFunction::Learned {
        model: &model,
        clip: None,
    };
    let clipped = CreditFunction::Learned {
        model: &model,
        clip: Some(3.0),
    };

    let mut g = c.benchmark_group("update_rules");
    g.bench_function("reinforce", |b| {
        b.iter(|| reinforce_update(black_box(&batch), &pi, 0.99, None).unwrap())
    });
    g.bench_function("a2c", |b| {
        b.iter(|| a2c_update(black_box(&batch), &pi, &v, 0.99, 0.0).unwrap())
    });
    g.bench_function("hca_value", |b| {
        b.iter(|| hca_value_update(black_box(&batch), &pi, &v, &learned, 0.99).unwrap())
    });
    g.bench_function("hca_value_clip", |b| {
        b.iter(|| hca_value_update(black_box(&batch), &pi, &v, &clipped, 0.99).unwrap())
    });
    g.finish();
}

fn oracles(c: &mut Criterion) {
    let lake = frozenlake_4x4(true, 0.0, 0.9);
    let pi = PolicyTable::for_mdp(&lake);
    let mut g = c.benchmark_group("oracles");
    g.bench_function("exact_policy_gradient", |b| {
        b.iter(|| exact_policy_gradient(black_box(&lake), &pi, 200).unwrap())
    });
    g.bench_function("exact_hindsight_32", |b| {
        b.iter(|| exact_hindsight(black_box(&lake), &pi, 32).unwrap())
    });
    g.bench_function("exact_transition_hindsight_32", |b| {
        b.iter(|| exact_transition_hindsight(black_box(&lake), &pi, 32).unwrap())
    });
    g.finish();
}

fn credit_training(c: &mut Criterion) {
    let lake = frozenlake_4x4(true, 0.0, 0.99);
    let pi = PolicyTable::for_mdp(&lake);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples = RolloutCollector::new(8, 100)
        .unwrap()
        .collect(&lake, &pi, 32, &mut rng)
        .unwrap()
        .credit_samples();
    let mut model = CreditModel::new(16, 4);
    c.bench_function("train_credit_model", |b| {
        b.iter(|| train_credit_model(&mut model, &pi, black_box(&samples), 0.5).unwrap())
    });
}

criterion_group!(benches, update_rules, oracles, credit_training);
criterion_main!(benches);
