use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use negspan_bench::{config, corpus_of_len, sentence_of_len, span_model};
use negspan_core::encoder::Mode;
use negspan_core::infer::{decode_spans, resolve_conflicts};
use negspan_core::metrics::bound_montecarlo;
use negspan_core::train::{negative_candidates, regime_negatives, sample_negatives, sentence_loss, Regime};
use negspan_core::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scoring(c: &mut Criterion) {
    let mut group = c.benchmark_group("score_spans");
    for n in [10, 25, 50] {
        let corpus = corpus_of_len(1, n, 3);
        let model = span_model(&corpus, 256);
        let tokens = corpus.sentences[0].tokens().to_vec();
        group.bench_with_input(BenchmarkId::from_parameter(n), &tokens, |b, t| {
            b.iter(|| model.span_table(black_box(t)).unwrap())
        });
    }
    group.finish();
}

fn decoding(c: &mut Criterion) {
    let corpus = corpus_of_len(1, 50, 3);
    let model = span_model(&corpus, 256);
    let table = model.span_table(corpus.sentences[0].tokens()).unwrap();
    c.bench_function("decode_and_resolve/50", |b| {
        b.iter(|| resolve_conflicts(&decode_spans(black_box(&table), model.labels())))
    });
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    let s = sentence_of_len(20);
    let corpus = corpus_of_len(1, 20, 7);
    for regime in [Regime::Sampled, Regime::Full] {
        let mut model = span_model(&corpus, 64);
        let cfg = config(regime, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        group.bench_function(regime.name(), |b| {
            b.iter(|| {
                let negatives = regime_negatives(regime, &s, cfg.lambda, None, &mut rng);
                let mut tape = Tape::new();
                let loss = sentence_loss(&mut tape, &model, &s, regime, &negatives, Mode::Train { seed: 1 }).unwrap();
                let grads = tape.backward(loss).unwrap();
                model.params.adam_step(&tape.param_grads(&grads), &cfg.adam).unwrap();
            })
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let s = sentence_of_len(50);
    let cands = negative_candidates(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("sample_negatives/50", |b| {
        b.iter(|| sample_negatives(black_box(&cands), 50, 0.35, &mut rng))
    });
    c.bench_function("bound_montecarlo/10k", |b| {
        b.iter(|| bound_montecarlo(20, 3, 0.35, 10_000, 5).unwrap())
    });
}

criterion_group!(benches, scoring, decoding, training_step, sampling);
criterion_main!(benches);
