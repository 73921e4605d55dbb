use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mrdqn::evaluation::{buy_and_hold, run_policy, vectorized_rollout};
use mrdqn::{ActionSpace, EnvConfig, WeightVector};
use mrdqn_bench::{random_net, random_walk};

fn rollouts(c: &mut Criterion) {
    let lookback = 30;
    let w = WeightVector::uniform();
    let cfg = EnvConfig {
        mode: ActionSpace::LSP,
        lookback,
        window: 20,
        fee: 0.0,
    };
    let mut group = c.benchmark_group("rollout");
    group.sample_size(20);
    for steps in [1_000usize, 10_000] {
        let series = random_walk(steps + lookback + 1, 7);
        let range = series.full_range();
        let net = random_net(ActionSpace::LSP, lookback, &[64, 64], 7);
        group.bench_with_input(BenchmarkId::new("naive", steps), &steps, |b, _| {
            b.iter(|| run_policy(&net, &series, range, &w, 0.95, &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("vectorized", steps), &steps, |b, _| {
            b.iter(|| vectorized_rollout(&net, &series, range, &w, 0.95, &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("buy_and_hold", steps), &steps, |b, _| {
            b.iter(|| buy_and_hold(&series, range, &w, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, rollouts);
criterion_main!(benches);
