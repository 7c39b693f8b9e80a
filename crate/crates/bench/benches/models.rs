use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use fcurve_core::dataset::{parse_review_log, write_review_log};
use fcurve_core::synth::{generate, GroundTruth, SynthSpec};
use fcurve_core::train::{gradient, initial_state, sgd_train, Hyperparameters};
use fcurve_core::{FeatureExtractor, ModelKind};

fn data() -> fcurve_core::synth::SynthDataset {
    generate(&SynthSpec {
        num_users: 20,
        num_words: 50,
        events_per_pair: 2,
        ground_truth: GroundTruth::c_hlr_plus(),
        ..Default::default()
    })
    .unwrap()
}

fn predict_and_gradient(c: &mut Criterion) {
    let data = data();
    let lexicons = data.lexicons();
    let event = &data.events[0];
    for kind in [ModelKind::Hlr, ModelKind::HlrPlus, ModelKind::NHlrPlus] {
        let hyper = Hyperparameters::defaults_for(kind);
        let extractor = FeatureExtractor::fit(&data.events, &lexicons, kind.default_flags());
        let state = initial_state(kind, extractor, &hyper);
        let fv = state.features.extract(event, &lexicons);
        c.bench_function(&format!("predict/{kind}"), |b| {
            b.iter(|| state.predict(black_box(&fv), black_box(event.delta_days)).unwrap())
        });
        c.bench_function(&format!("gradient/{kind}"), |b| {
            b.iter(|| gradient(&state, black_box(&fv), black_box(event), &hyper).unwrap())
        });
        c.bench_function(&format!("extract/{kind}"), |b| {
            b.iter(|| state.features.extract(black_box(event), &lexicons))
        });
    }
}

fn ingest(c: &mut Criterion) {
    let data = data();
    let mut csv = Vec::new();
    write_review_log(&mut csv, &data.events).unwrap();
    let mut group = c.benchmark_group("ingest");
    group.throughput(Throughput::Bytes(csv.len() as u64));
    group.bench_function("parse_review_log", |b| {
        b.iter(|| parse_review_log(black_box(csv.as_slice()), Some("en"), None).unwrap())
    });
    group.finish();
}

fn train_epoch(c: &mut Criterion) {
    let data = data();
    let lexicons = data.lexicons();
    let mut group = c.benchmark_group("train_epoch");
    group.throughput(Throughput::Elements(data.events.len() as u64));
    group.sample_size(20);
    for kind in [ModelKind::HlrPlus, ModelKind::NHlrPlus] {
        let mut hyper = Hyperparameters::defaults_for(kind);
        hyper.epochs = 1;
        group.bench_function(kind.as_str(), |b| {
            b.iter_batched(
                || data.events.clone(),
                |events| sgd_train(&events, kind, &lexicons, &hyper).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, predict_and_gradient, ingest, train_epoch);
criterion_main!(benches);
