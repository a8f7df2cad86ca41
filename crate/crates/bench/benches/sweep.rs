use criterion::{criterion_group, criterion_main, Criterion};
use onestep::par::Execution;
use onestep_bench::experiments::work_precision_sweep;
use onestep_bench::Brusselator;

fn sweep(c: &mut Criterion) {
    let mut p = Brusselator::default().with_points(64).with_diffusion(0.0);
    p.tf = 1.0;
    let reference = vec![1.0; p.dim()];
    let mut g = c.benchmark_group("erk_sweep");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| work_precision_sweep(&p, &reference, Execution::Parallel)));
    g.bench_function("sequential", |b| b.iter(|| work_precision_sweep(&p, &reference, Execution::Sequential)));
    g.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
