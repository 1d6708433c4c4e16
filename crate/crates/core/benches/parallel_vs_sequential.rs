use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use abcem::exec::ExecPolicy;
use abcem::montecarlo::run_monte_carlo_with;
use abcem::presets::preset;
use abcem::run_simulation_with;

const POLICIES: [(&str, ExecPolicy); 2] = [
    ("sequential", ExecPolicy::Sequential),
    ("parallel", ExecPolicy::Parallel),
];

fn agent_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("cross_agents");
    group.sample_size(10);
    for n in [100_000usize, 1_000_000] {
        let mut config = preset("cross-theta2").unwrap();
        config.num_agents = n;
        config.num_steps = 20;
        for (name, policy) in POLICIES {
            group.bench_with_input(BenchmarkId::new(name, n), &config, |b, cfg| {
                b.iter(|| run_simulation_with(cfg, policy).unwrap())
            });
        }
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("fw_runs");
    group.sample_size(10);
    let mut config = preset("dca-hpm").unwrap();
    config.num_steps = 2000;
    for (name, policy) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| run_monte_carlo_with(&config, 16, policy, &|_, _| Ok(())).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, agent_sweep, monte_carlo);
criterion_main!(benches);
