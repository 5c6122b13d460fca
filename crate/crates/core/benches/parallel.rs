//! Parallel vs single-worker timings of the data-parallel kernels.
//!
//! `cargo bench -p proxbridge` compares the rayon pool against a one-worker
//! pool; `--no-default-features` builds the plain sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use proxbridge::env::{rollout, ActionSampler, BehaviorSpec, EnvSpec};
use proxbridge::numerics::{kernel_matrix, KernelSpec};
use proxbridge::ope::{Design, Estimator, EstimatorConfig, BaselineMode};
use proxbridge::par;
use proxbridge::policy::{PolicyClass, PolicyKind};

fn bench(c: &mut Criterion) {
    let d = rollout(
        &EnvSpec::default(),
        ActionSampler::Behavior(&BehaviorSpec::default()),
        40,
        25,
        0.9,
        1,
    )
    .unwrap();
    let design = Design::new(&d, BaselineMode::Proximal, 2).unwrap();
    let kernel = KernelSpec::Gaussian { bandwidth: 1.0 };
    let class = PolicyClass::new(PolicyKind::GaussianLinear, 1, Default::default()).unwrap();
    let zeta = [0.1, -0.3, -0.7, 0.2];
    let est = Estimator::new(&d, &EstimatorConfig::default()).unwrap();
    let workers = [("parallel", 0), ("sequential", 1)];

    let mut g = c.benchmark_group("kernel_matrix_n1000");
    for (name, threads) in workers {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(threads, || kernel_matrix(&kernel, &design.critic)))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("closed_form_fit_n1000");
    g.sample_size(20);
    for (name, threads) in workers {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(threads, || est.fit_closed_form(&class, &zeta).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
