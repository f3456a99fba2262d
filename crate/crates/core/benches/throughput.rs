use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hqv_core::chaos_oracle::{CellExponents, ChaosOracle};
use hqv_core::gaussian::GridSpec;
use hqv_core::harness;
use hqv_core::hermite::HermiteRankSimulator;
use hqv_core::{Execution, ModelParams};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn field_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("hermite_rank_256x256");
    group.sample_size(20);
    let p = ModelParams::from_slice(2, &[0.7, 0.6]).unwrap();
    let sim = HermiteRankSimulator::new(&p, &GridSpec::new(vec![256, 256]).unwrap()).unwrap();
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sim.simulate(7, exec))
        });
    }
    group.finish();
}

fn replica_campaign(c: &mut Criterion) {
    let mut group = c.benchmark_group("unit_variance_64_replicas_4096");
    group.sample_size(10);
    let p = ModelParams::from_slice(2, &[0.7]).unwrap();
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| harness::unit_variance(&p, &[4096], 64, 1, exec).unwrap())
        });
    }
    group.finish();
}

fn far_field_table(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle_far_field_256");
    group.sample_size(10);
    let ex = CellExponents::for_component(0.85, 3, 1);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            // A fresh oracle each time so the table cache does not hide the work.
            b.iter(|| {
                let oracle = ChaosOracle::new(exec);
                oracle.displacement_integrals(ex, 256).iter().sum::<f64>()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, field_sampling, replica_campaign, far_field_table);
criterion_main!(benches);
