use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use levy_ou::levy::{LevyMeasure, LevyTriplet, SmallJumpScheme};
use levy_ou::matrix::SquareMatrix;
use levy_ou::ou::{coupling_frequency, simulate_many, OUModel};
use levy_ou::rng::{Execution, RandomStream};

fn model() -> OUModel {
    let nu = LevyMeasure::gaussian(1.0, vec![0.0, 0.0], 1.0).unwrap();
    OUModel::new(SquareMatrix::diagonal(&[-1.0, -0.5]).unwrap(), LevyTriplet::pure_jump(nu)).unwrap()
}

fn executions() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::sequential()), ("parallel", Execution::parallel(0))]
}

fn bench_simulate(c: &mut Criterion) {
    let m = model();
    let stream = RandomStream::new(1);
    let mut g = c.benchmark_group("simulate_many");
    for (name, exec) in executions() {
        g.bench_with_input(BenchmarkId::new(name, 50_000), &exec, |b, exec| {
            b.iter(|| simulate_many(&m, &[1.0, 1.0], 2.0, SmallJumpScheme::default(), 50_000, &stream, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_coupling(c: &mut Criterion) {
    let m = model();
    let stream = RandomStream::new(2);
    let mut g = c.benchmark_group("coupling_frequency");
    for (name, exec) in executions() {
        g.bench_with_input(BenchmarkId::new(name, 50_000), &exec, |b, exec| {
            b.iter(|| coupling_frequency(&m, &[2.0, 0.0], &[0.0, 0.0], 1.0, 2.0, 50_000, &stream, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_simulate, bench_coupling);
criterion_main!(benches);
