use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use edmm_sim::{replay, CostParams};
use edmm_sim_bench::{strategies, workloads};

fn bench_replay(c: &mut Criterion) {
    let params = CostParams::default();
    for trace in workloads() {
        let mut group = c.benchmark_group(format!("replay/{}", trace.name));
        group.throughput(Throughput::Elements(trace.events.len() as u64));
        for config in strategies() {
            group.bench_with_input(
                BenchmarkId::from_parameter(config.label()),
                &config,
                |b, config| b.iter(|| replay(&trace, config, &params).unwrap()),
            );
        }
        group.finish();
    }
}

fn bench_generators(c: &mut Criterion) {
    c.bench_function("gen/churn", |b| {
        b.iter(|| edmm_sim::generators::gen_churn(7, 500, 128, 4))
    });
    c.bench_function("gen/server", |b| {
        b.iter(|| edmm_sim::generators::gen_server(7, 2000, 4096))
    });
}

criterion_group!(benches, bench_replay, bench_generators);
criterion_main!(benches);
