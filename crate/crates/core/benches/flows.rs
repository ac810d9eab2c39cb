use clwn_core::checks::{annulus_test_schedule, test_field};
use clwn_core::driving::{DrivingSpec, Schedule};
use clwn_core::ode::OdeOptions;
use clwn_core::surface_flow::{evolve_triples, integrate_seeds, test_schedule};
use clwn_core::{Complex64, Exec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn seeds(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::new(-4.0 + 8.0 * k as f64 / n as f64, 0.3 + (k % 7) as f64 * 0.4))
        .collect()
}

fn seed_flows(c: &mut Criterion) {
    let field = annulus_test_schedule().realize(0.5).unwrap();
    let opts = OdeOptions::with_tol(1e-9);
    let zs = seeds(64);
    let mut g = c.benchmark_group("annulus_seed_flows");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| field.forward_flows(black_box(&zs), 0.5, &opts, exec).unwrap())
        });
    }
    g.finish();

    let (_, tl) = evolve_triples(&test_schedule(0.004, 1e-3, 5)).unwrap();
    let zs = seeds(32);
    let mut g = c.benchmark_group("surface_seed_replay");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| integrate_seeds(&tl, black_box(&zs), exec).unwrap())
        });
    }
    g.finish();
}

fn grid_evals(c: &mut Criterion) {
    let ctx = test_field(6).unwrap();
    let grid: Vec<Complex64> = (0..32)
        .flat_map(|i| (1..=32).map(move |j| Complex64::new(-3.0 + 6.0 * i as f64 / 31.0, 0.1 * j as f64)))
        .collect();
    let mut g = c.benchmark_group("field_grid_eval");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(black_box(&grid), |&z| ctx.eval(z).map(|v| v.value).ok()))
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("sle_monte_carlo");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let ends = exec.map_range(2000, |i| {
                    let spec = DrivingSpec::Sle {
                        kappa: 4.0,
                        drift: Schedule::default(),
                        seed: i as u64,
                        dt: 1e-3,
                        start: 0.0,
                    };
                    spec.realize(1.0).unwrap().value(1.0)
                });
                black_box(ends.iter().map(|x| x * x).sum::<f64>())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, seed_flows, grid_evals, monte_carlo);
criterion_main!(benches);
