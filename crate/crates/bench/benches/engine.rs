use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gign_core::{init_state, run, Distribution, InitialCondition, Model, RunControl};

fn model(n: usize) -> Model {
    Model {
        n_servers: n,
        interarrival: Distribution::exponential(2.0 * n as f64).unwrap(),
        service: Distribution::erlang(2, 2.0).unwrap(),
        patience: Some(Distribution::exponential(1.0).unwrap()),
    }
}

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("engine");
    for n in [10usize, 100, 1000] {
        // about 2·10⁴ arrivals per run
        let horizon = 1e4 / n as f64;
        let probe = {
            let mut s = init_state(model(n), &InitialCondition::empty(), 1).unwrap();
            run(&mut s, &RunControl::new(horizon), &mut []).unwrap().events
        };
        group.throughput(Throughput::Elements(probe));
        for audit in [false, true] {
            let label = if audit { "audited" } else { "plain" };
            group.bench_with_input(BenchmarkId::new(label, n), &n, |b, &n| {
                b.iter(|| {
                    let mut s = init_state(model(n), &InitialCondition::empty(), 1).unwrap();
                    let mut ctl = RunControl::new(horizon);
                    ctl.audit = audit;
                    run(&mut s, &ctl, &mut []).unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = steps
}
criterion_main!(benches);
