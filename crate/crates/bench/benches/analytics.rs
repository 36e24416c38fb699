use btcwatch_core::analytics::{analyze, duration_cdf, AnalysisInputs, PopulationParams, DEFAULT_WINDOW_MS};
use btcwatch_core::prober::classify_all;
use btcwatch_core::synth::{generate, CorpusSpec};
use criterion::{criterion_group, criterion_main, Criterion};

fn bench_analytics(c: &mut Criterion) {
    let corpus = generate(&CorpusSpec {
        connections: 50_000,
        ips: 6_000,
        txs: 3_000,
        ..CorpusSpec::default()
    });
    let classes = classify_all(&corpus.probes);
    let mut group = c.benchmark_group("analytics");
    group.sample_size(10);
    group.bench_function("duration_cdf/50k", |b| {
        b.iter(|| duration_cdf(&corpus.log.connections, None, &classes, 1000).unwrap())
    });
    let inputs = AnalysisInputs {
        log: corpus.log.clone(),
        probes: corpus.probes.clone(),
        asn: corpus.asn.clone(),
        tor: corpus.tor_list(),
        population: PopulationParams::default(),
        window_ms: DEFAULT_WINDOW_MS,
    };
    group.bench_function("analyze/50k", |b| b.iter(|| analyze(&inputs).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_analytics);
criterion_main!(benches);
