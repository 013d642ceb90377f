mod common;

use common::checks::random_loss_gradients;
use common::{grad_check, GradReport};
use negspan_core::corpus::{AnnotatedSentence, Corpus, EntitySpan, Sentence};
use negspan_core::encoder::{Encoder, EncoderConfig, Mode, Vocab};
use negspan_core::numcore::{ParamStore, Tensor};
use negspan_core::spanscorer::{ScorerConfig, SpanScorer};
use negspan_core::tagbaseline::Tagger;
use negspan_core::train::{negative_candidates, oracle_adjusted_negatives, span_loss_var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn assert_close(what: &str, r: &GradReport) {
    assert!(r.checked > 0);
    assert!(r.max_rel < TOL, "{what}: max relative error {:.3e} at {}", r.max_rel, r.worst);
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn primitive_compositions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5 {
        let (m, k, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(2..=4));
        let mut store = ParamStore::new();
        store.insert("a", random(m, k, &mut rng)).unwrap();
        store.insert("b", random(k, n, &mut rng)).unwrap();
        store.insert("c", random(1, n, &mut rng)).unwrap();
        store.insert("d", random(m, n, &mut rng)).unwrap();
        store.insert("e", random(3, k, &mut rng)).unwrap();
        let r = grad_check(&mut store, |t, s| {
            let a = t.param(s, "a")?;
            let b = t.param(s, "b")?;
            let c = t.param(s, "c")?;
            let d = t.param(s, "d")?;
            let e = t.param(s, "e")?;
            let ab = t.matmul(a, b)?;
            let z = t.add(ab, c)?;
            let th = t.tanh(z)?;
            let sg = t.sigmoid(d)?;
            let prod = t.mul(th, sg)?;
            let diff = t.sub(prod, d)?;
            let wide = t.concat_columns(&[diff, th])?;
            let sm = t.softmax_rows(wide)?;
            let lg = t.log(sm)?;
            let rows = t.embedding_lookup(e, &[2, 0, 2])?;
            let ae = t.matmul_transposed(a, rows)?;
            let stacked = t.concat_rows(&[ae, ae])?;
            let dropped = t.dropout(stacked, 0.3, 5)?;
            let lsm = t.log_softmax_rows(dropped)?;
            let pick = t.pick(lsm, &[(0, 1), (1, 0)])?;
            let s1 = t.sum(lg)?;
            let s2 = t.mean(pick)?;
            let s3 = t.scale(s2, 0.7)?;
            let both = t.concat_columns(&[s1, s3])?;
            t.sum(both)
        });
        assert_close(&format!("trial {trial}"), &r);
    }
}

fn tiny_corpus() -> Corpus {
    let s = |toks: &[&str], spans: &[(usize, usize, &str)], hidden: &[(usize, usize, &str)]| {
        let mk = |v: &[(usize, usize, &str)]| {
            v.iter()
                .map(|&(i, j, l)| EntitySpan::new(i, j, l).unwrap())
                .collect::<Vec<_>>()
        };
        AnnotatedSentence::new(Sentence::new(toks.iter().copied()).unwrap(), mk(spans), mk(hidden)).unwrap()
    };
    Corpus::new(vec![
        s(&["Ann", "saw", "New", "York", "today"], &[(1, 1, "PER")], &[(3, 4, "LOC")]),
        s(&["Bob", "left"], &[(1, 1, "PER")], &[]),
    ])
}

fn small_encoder(c: &Corpus, dropout: f64) -> Encoder {
    Encoder::new(
        EncoderConfig {
            embed_dim: 3,
            hidden_dim: 4,
            dropout,
        },
        Vocab::from_corpus(c),
    )
    .unwrap()
}

#[test]
fn span_loss_through_encoder_and_scorer() {
    let c = tiny_corpus();
    for (dropout, mode) in [(0.0, Mode::Eval), (0.4, Mode::Train { seed: 3 })] {
        let enc = small_encoder(&c, dropout);
        for bias in [false, true] {
            let scorer = SpanScorer::new(
                ScorerConfig {
                    scoring_dim: 3,
                    bias,
                    max_span_len: None,
                },
                4,
                c.labels().len(),
            )
            .unwrap();
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            enc.init_params(&mut store, &mut rng).unwrap();
            scorer.init_params(&mut store, &mut rng).unwrap();
            if bias {
                for name in ["scorer.v_bias", "scorer.u_bias"] {
                    for v in store.get_mut(name).unwrap() {
                        *v = rng.gen_range(-0.5..0.5);
                    }
                }
            }
            let s = &c.sentences[0];
            for negatives in [negative_candidates(s), oracle_adjusted_negatives(s), vec![(2, 2), (1, 5)]] {
                let r = grad_check(&mut store, |t, st| {
                    let h = enc.encode(t, st, s.tokens(), mode)?;
                    span_loss_var(t, &scorer, st, h, s.gold(), &negatives, c.labels())
                });
                assert_close("span loss", &r);
            }
        }
    }
}

#[test]
fn tagging_losses_through_encoder() {
    let c = tiny_corpus();
    let enc = small_encoder(&c, 0.4);
    let tagger = Tagger::new(c.labels(), 4).unwrap();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    enc.init_params(&mut store, &mut rng).unwrap();
    tagger.init_params(&mut store, &mut rng).unwrap();
    let s = &c.sentences[0];
    let z = tagger.encode_tags(s.len(), s.gold()).unwrap();
    for hidden in [&[][..], s.hidden()] {
        let r = grad_check(&mut store, |t, st| {
            let h = enc.encode(t, st, s.tokens(), Mode::Train { seed: 8 })?;
            tagger.loss(t, st, h, &z, hidden)
        });
        assert_close("tagging loss", &r);
    }
}

#[test]
fn random_small_models_and_sentences() {
    random_loss_gradients(12, 77).unwrap();
}
