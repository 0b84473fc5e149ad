use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use flexlog::corpus::synthetic_spec;
use flexlog::models::{train, ModelConfig, ModelKind, TrainConfig};
use flexlog::templates::{AelConfig, DrainConfig, Miner, TemplateParser};
use flexlog::textprep::{normalize, prepare};
use flexlog::PrepConfig;
use flexlog_bench::fixture;

fn textprep(c: &mut Criterion) {
    let (corpus, _) = fixture(2000, 1);
    let cfg = PrepConfig::default();
    let key = synthetic_spec().event_key;
    c.bench_function("normalize 2000 lines", |b| {
        b.iter(|| corpus.lines().map(|l| normalize(black_box(l), &cfg).len()).sum::<usize>())
    });
    c.bench_function("prepare 2000 lines", |b| {
        b.iter(|| prepare(black_box(&corpus), &key, PrepConfig::default()).unwrap())
    });
}

fn models(c: &mut Criterion) {
    let (corpus, p) = fixture(600, 2);
    let tc = TrainConfig {
        max_epochs: 2,
        patience: 1,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train two epochs, 600 lines");
    group.sample_size(10);
    for kind in ModelKind::ALL {
        group.bench_function(kind.id(), |b| {
            b.iter(|| train(&ModelConfig::new(kind), &p.vocab, &p.cfg, &p.train, &tc).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("predict 600 lines");
    group.sample_size(10);
    for kind in ModelKind::ALL {
        let m = train(&ModelConfig::new(kind), &p.vocab, &p.cfg, &p.train, &tc).unwrap();
        group.bench_function(kind.id(), |b| b.iter(|| m.predict_lines(corpus.lines()).unwrap()));
    }
    group.finish();
}

fn templates(c: &mut Criterion) {
    let (corpus, _) = fixture(2000, 3);
    let spec = synthetic_spec();
    for miner in [Miner::Drain(DrainConfig::default()), Miner::Ael(AelConfig::default())] {
        c.bench_function(&format!("{} fit 2000 lines", miner.name()), |b| {
            b.iter(|| TemplateParser::fit(black_box(&corpus), &spec, &miner).unwrap())
        });
    }
}

criterion_group!(benches, textprep, models, templates);
criterion_main!(benches);
