//! Replication-parallel vs sequential execution of the benchmark
//! estimator — the workload the parallel feature exists for.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};

use vrpg_core::benchmark::solve_tilted;
use vrpg_core::exec::{map_replications, map_replications_seq};
use vrpg_core::instances::{make_quadratic_instance, solve_population, Noise, ProblemInstance};
use vrpg_core::prox::{ConstraintSet, Regularizer};
use vrpg_core::seeding::substream_rng;

fn setup() -> (ProblemInstance, Regularizer, DVector<f64>) {
    let d = 5;
    let inst = make_quadratic_instance(
        DMatrix::identity(d, d),
        DVector::from_vec(vec![0.5, -0.5, 1.0, -1.0, 0.25]),
        DMatrix::identity(d, d) * 0.01,
    )
    .unwrap()
    .with_label("bench-orthant");
    let reg = Regularizer::Indicator(ConstraintSet::orthant(d));
    let x_star = solve_population(&inst, &reg, 1e-10).unwrap();
    (inst, reg, x_star)
}

fn rep_body(inst: &ProblemInstance, reg: &Regularizer, x_star: &DVector<f64>, n: usize, rep: usize) -> f64 {
    let mut rng = substream_rng(17, &inst.label, n, rep);
    let samples: Vec<Noise> = (0..n).map(|_| inst.sample(&mut rng)).collect();
    let sol = solve_tilted(inst, reg, x_star, &samples, 1e-10).unwrap();
    n as f64 * (sol.point - x_star).norm_squared()
}

fn bench_estimator(c: &mut Criterion) {
    let (inst, reg, x_star) = setup();
    let n = 2_000;
    let reps = 64;
    let mut group = c.benchmark_group("delta_sq_replications");
    group.bench_function(BenchmarkId::new("sequential", reps), |b| {
        b.iter(|| {
            let v = map_replications_seq(reps, |r| rep_body(&inst, &reg, &x_star, n, r));
            std::hint::black_box(v.iter().sum::<f64>())
        })
    });
    group.bench_function(BenchmarkId::new("parallel", reps), |b| {
        b.iter(|| {
            let v = map_replications(reps, |r| rep_body(&inst, &reg, &x_star, n, r));
            std::hint::black_box(v.iter().sum::<f64>())
        })
    });
    group.finish();
}

criterion_group!(benches, bench_estimator);
criterion_main!(benches);
