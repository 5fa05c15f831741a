//! Sequential versus parallel throughput of the batch entry points.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pairsim::analytic::sweep_steady_state;
use pairsim::bounds::{run_suite, BoundCase};
use pairsim::simulator::{CellPair, Protocol};
use pairsim::{BundledCurve, CellParams, Execution};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn sweep(c: &mut Criterion) {
    let cell2 = CellParams::from_ah_mohm(3.0, 150.0).unwrap();
    let q = grid(400, 0.5, 1.0);
    let r = grid(400, 1.0, 2.0);
    let mut group = c.benchmark_group("steady_state_sweep_400x400");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sweep_steady_state(cell2, black_box(&q), black_box(&r), 3.0, 1.2, exec).unwrap())
        });
    }
    group.finish();
}

fn bound_suite(c: &mut Criterion) {
    let ocv = BundledCurve::NmcGrLike.curve();
    let (v_min, v_max) = ocv.voltage_window();
    let cases: Vec<BoundCase> = (0..16)
        .map(|k| {
            let q1 = 2.0 + 0.15 * k as f64;
            let c1 = CellParams::from_ah_mohm(q1, 40.0 + 2.0 * k as f64).unwrap();
            let c2 = CellParams::from_ah_mohm(3.0, 50.0).unwrap();
            BoundCase {
                pair: CellPair::shared(c1, c2, ocv.clone()),
                initial_soc: [0.3, 0.5],
                protocol: Protocol::cccv(3.0, v_max, 0.6, v_min, 1),
                dt: 1.0,
            }
        })
        .collect();
    let mut group = c.benchmark_group("bound_suite_16_cases");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_suite(black_box(&cases), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sweep, bound_suite);
criterion_main!(benches);
