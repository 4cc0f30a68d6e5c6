use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use alpha_smc::exec::Execution;
use alpha_smc::filter::run;
use alpha_smc::graph::ConnectivitySpec;
use alpha_smc::model::{make_builtin, BuiltinModel};
use alpha_smc::rng::StreamKey;

fn filter_paths(c: &mut Criterion) {
    let model = make_builtin(&BuiltinModel::from_tag("tracking").unwrap().with_horizon(20)).unwrap();
    let n = 2000;
    let specs = [
        ConnectivitySpec::Complete,
        ConnectivitySpec::FixedRegular { c: 20, graph_seed: 1 },
        ConnectivitySpec::LocalExchange { c: 21 },
        ConnectivitySpec::PerStepRandomRows { c: 20 },
    ];
    let mut group = c.benchmark_group("filter_n2000_t20");
    group.sample_size(10);
    group.throughput(Throughput::Elements((n * 21) as u64));
    for spec in &specs {
        let conn = spec.resolve(n).unwrap();
        for (label, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(spec.kind_name(), label), &exec, |b, &exec| {
                let key = StreamKey::new(7, 0);
                b.iter(|| run(&model, n, &conn, &key, &[], exec).unwrap().last.log_z_hat());
            });
        }
    }
    group.finish();
}

criterion_group!(benches, filter_paths);
criterion_main!(benches);
