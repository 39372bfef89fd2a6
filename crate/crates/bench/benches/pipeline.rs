use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

use marlcc_bench::fixture;
use marlcc_core::agents::{run_episode, ActionPicker};
use marlcc_core::evaluation::run_all_agents;
use marlcc_core::marlcc::{calibrate_threshold, OosObjective};
use marlcc_core::seeding::stream;
use marlcc_core::training::train_step;
use marlcc_core::{eta, Interval};

fn rollouts(c: &mut Criterion) {
    let (model, data) = fixture(4);
    let ep = &data.train[0];
    let mut rng = stream(0, "bench");
    for net in &model.agents {
        c.bench_function(&format!("greedy_rollout/{}", net.kind.name()), |b| {
            b.iter(|| run_episode(&model.store, net, &model.config.agents, black_box(ep), ActionPicker::Greedy, &mut rng))
        });
    }
    c.bench_function("all_agents_with_fusion", |b| {
        b.iter(|| run_all_agents(&model, black_box(ep), ActionPicker::Greedy, &mut rng))
    });
}

fn training(c: &mut Criterion) {
    let (mut model, data) = fixture(4);
    let mut rng = stream(0, "bench");
    let mut i = 0;
    c.bench_function("train_step", |b| {
        b.iter(|| {
            i = (i + 1) % data.train.len();
            train_step(&mut model, &data.train[i], &mut rng).unwrap()
        })
    });
}

fn conflict(c: &mut Criterion) {
    let mut rng = stream(0, "bench");
    let finals: Vec<Interval> = (0..3)
        .map(|_| {
            let a: f64 = rng.random();
            Interval::new(a * 0.5, 0.5 + a * 0.5)
        })
        .collect();
    c.bench_function("eta/3", |b| b.iter(|| eta(black_box(&finals))));
    let samples: Vec<(f64, bool)> = (0..1000).map(|_| (rng.random(), rng.random_bool(0.5))).collect();
    c.bench_function("calibrate/1000", |b| b.iter(|| calibrate_threshold(black_box(&samples), OosObjective::F1)));
}

criterion_group!(benches, rollouts, training, conflict);
criterion_main!(benches);
