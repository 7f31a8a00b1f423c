use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use robust_verify::envs;
use robust_verify::explore::{label_points, sample_uniform};
use robust_verify::inn::InputNormalizer;
use robust_verify::net::NetworkSpec;
use robust_verify::par;
use robust_verify::rng::substream;
use robust_verify::verify::{maximize_uncertainty, BnbConfig};
use robust_verify::ImpreciseNet;

fn both<R>(c: &mut Criterion, group: &str, f: impl Fn() -> R) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("mode", "sequential"), |b| b.iter(|| par::sequential(&f)));
    g.bench_function(BenchmarkId::new("mode", "parallel"), |b| b.iter(&f));
    g.finish();
}

fn labeling(c: &mut Criterion) {
    let oracle = envs::lookup("water_tanks", None).unwrap();
    let pts = sample_uniform(oracle.input_box(), 2000, &mut substream(1, &[]));
    both(c, "label_2000_water_tanks", || label_points(oracle.as_ref(), pts.clone(), 1).unwrap());
}

fn branch_and_bound(c: &mut Criterion) {
    let oracle = envs::lookup("water_tanks", None).unwrap();
    let spec = NetworkSpec::new(2, vec![50, 50]).unwrap();
    let norm = InputNormalizer::for_box(oracle.input_box());
    let inn = ImpreciseNet::init_random(&spec, 3, 2, Some(norm)).unwrap();
    let cfg = BnbConfig {
        batch: 16,
        tolerance: 1e-3,
        ..BnbConfig::default()
    };
    both(c, "max_uncertainty_batch16", || {
        maximize_uncertainty(&inn, oracle.input_box(), &cfg).unwrap()
    });
}

criterion_group!(benches, labeling, branch_and_bound);
criterion_main!(benches);
