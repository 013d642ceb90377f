//! Oracle checks shared by the named integration tests and the acceptance
//! harness. Each returns a short description of the first disagreement.

use negspan_core::corpus::{bio_to_spans, spans_to_tags, AnnotatedSentence, Corpus, EntitySpan, Sentence};
use negspan_core::encoder::{Encoder, EncoderConfig, Mode, Vocab};
use negspan_core::metrics::{bound_exact, bound_montecarlo, entity_f1, BoundReport};
use negspan_core::numcore::ParamStore;
use negspan_core::spanscorer::{enumerate_spans, ScorerConfig, SpanScorer, SCORER_U_BIAS, SCORER_V_BIAS};
use negspan_core::tagbaseline::Tagger;
use negspan_core::train::negative_candidates;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{conlleval, grad_check, ChunkCounts};

pub const LABELS: [&str; 3] = ["PER", "LOC", "ORG"];

/// Non-overlapping spans over `n` tokens.
pub fn random_spans(rng: &mut impl Rng, n: usize) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut pos = 1;
    while pos <= n {
        if rng.gen_bool(0.4) {
            let end = (pos + rng.gen_range(0..3)).min(n);
            let label = *LABELS.choose(rng).unwrap();
            spans.push(EntitySpan::new(pos, end, label).unwrap());
            pos = end + 1;
        } else {
            pos += 1;
        }
    }
    spans
}

/// Arbitrary, possibly ill-formed tag sequences.
pub fn random_tags(rng: &mut impl Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| match rng.gen_range(0..3) {
            0 => "O".to_string(),
            1 => format!("B-{}", LABELS.choose(rng).unwrap()),
            _ => format!("I-{}", LABELS.choose(rng).unwrap()),
        })
        .collect()
}

/// Span set -> tags -> span set must be the identity.
pub fn round_trip(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.gen_range(1..=25);
        let spans = random_spans(&mut rng, n);
        let tags = spans_to_tags(n, &spans).map_err(|e| format!("case {case}: {e}"))?;
        let back = bio_to_spans(&tags).map_err(|e| format!("case {case}: {e}"))?;
        if back != spans {
            return Err(format!("case {case}: {spans:?} came back as {back:?}"));
        }
    }
    Ok(())
}

fn to4(x: f64) -> i64 {
    (x * 1e4).round() as i64
}

fn agree(ours: (f64, f64, f64), theirs: &ChunkCounts) -> bool {
    to4(ours.0) == to4(theirs.precision())
        && to4(ours.1) == to4(theirs.recall())
        && to4(ours.2) == to4(theirs.f1())
}

/// Scores `pairs` random (guess, gold) tag sequences with `entity_f1` and the
/// conlleval port, one pair at a time and all together.
pub fn f1_matches_conlleval(pairs: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    let (mut preds, mut golds) = (Vec::new(), Vec::new());
    for k in 0..pairs {
        let n = rng.gen_range(1..=20);
        let guess = random_tags(&mut rng, n);
        let gold = random_tags(&mut rng, n);
        let p = bio_to_spans(&guess).map_err(|e| e.to_string())?;
        let g = bio_to_spans(&gold).map_err(|e| e.to_string())?;
        let r = entity_f1(std::slice::from_ref(&p), std::slice::from_ref(&g)).map_err(|e| e.to_string())?;
        let reference = conlleval(&[(guess.clone(), gold.clone())]);
        if !agree((r.precision, r.recall, r.f1), &reference) {
            return Err(format!(
                "pair {k}: {guess:?} vs {gold:?} gives P/R/F {:.4}/{:.4}/{:.4}, conlleval {:.4}/{:.4}/{:.4}",
                r.precision,
                r.recall,
                r.f1,
                reference.precision(),
                reference.recall(),
                reference.f1()
            ));
        }
        preds.push(p);
        golds.push(g);
        all.push((guess, gold));
    }
    let r = entity_f1(&preds, &golds).map_err(|e| e.to_string())?;
    let reference = conlleval(&all);
    if !agree((r.precision, r.recall, r.f1), &reference) {
        return Err(format!(
            "aggregate F1 {:.6} vs conlleval {:.6}",
            r.f1,
            reference.f1()
        ));
    }
    Ok(())
}

pub struct GridCell {
    pub report: BoundReport,
    pub exact: f64,
}

impl GridCell {
    pub fn within(&self, tol: f64) -> bool {
        (self.report.empirical - self.exact).abs() < tol
    }

    pub fn above_bound(&self) -> bool {
        self.report.bound.is_none_or(|b| self.report.empirical >= b)
    }
}

/// Non-selection frequencies over n in {5, 10, 20, 50}, m in {1, n/2, n}.
pub fn sampling_grid(lambda: f64, trials: u64, seed: u64) -> Vec<GridCell> {
    let mut out = Vec::new();
    for n in [5usize, 10, 20, 50] {
        for m in [1, n / 2, n] {
            let report = bound_montecarlo(n, m, lambda, trials, seed + n as u64 * 100 + m as u64)
                .expect("valid grid point");
            let exact = bound_exact(n, m, lambda).expect("valid grid point");
            out.push(GridCell { report, exact });
        }
    }
    out
}

/// Worst relative gradient error over `trials` random small models and
/// sentences (dimensions at most 4, at most 5 tokens), covering the span loss
/// and both tagging losses, with and without dropout.
pub fn random_loss_gradients(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["ann", "bob", "saw", "new", "york", "left", "today"];
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let n = rng.gen_range(1..=5);
        let tokens: Vec<&str> = (0..n).map(|_| *words.choose(&mut rng).unwrap()).collect();
        let (mut gold, mut hidden) = (Vec::new(), Vec::new());
        for s in random_spans(&mut rng, n) {
            if rng.gen_bool(0.3) {
                hidden.push(s)
            } else {
                gold.push(s)
            }
        }
        let sentence = AnnotatedSentence::new(Sentence::new(tokens).unwrap(), gold, hidden).unwrap();
        let corpus = Corpus::with_labels(vec![sentence], LABELS.iter().map(|l| l.to_string()).collect())
            .map_err(|e| e.to_string())?;
        let s = &corpus.sentences[0];
        let hidden_dim = 2 * rng.gen_range(1..=2);
        let (dropout, mode) = if rng.gen_bool(0.5) {
            (0.0, Mode::Eval)
        } else {
            (0.4, Mode::Train { seed: rng.gen() })
        };
        let enc = Encoder::new(
            EncoderConfig {
                embed_dim: rng.gen_range(1..=4),
                hidden_dim,
                dropout,
            },
            Vocab::from_corpus(&corpus),
        )
        .map_err(|e| e.to_string())?;
        let bias = rng.gen_bool(0.5);
        let scorer = SpanScorer::new(
            ScorerConfig {
                scoring_dim: rng.gen_range(1..=4),
                bias,
                max_span_len: None,
            },
            enc.output_dim(),
            LABELS.len(),
        )
        .map_err(|e| e.to_string())?;
        let tagger = Tagger::new(corpus.labels(), enc.output_dim()).map_err(|e| e.to_string())?;
        let mut store = ParamStore::new();
        enc.init_params(&mut store, &mut rng).map_err(|e| e.to_string())?;
        scorer.init_params(&mut store, &mut rng).map_err(|e| e.to_string())?;
        tagger.init_params(&mut store, &mut rng).map_err(|e| e.to_string())?;
        if bias {
            for name in [SCORER_V_BIAS, SCORER_U_BIAS] {
                for v in store.get_mut(name).unwrap() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        }
        let mut negatives = negative_candidates(s);
        negatives.retain(|_| rng.gen_bool(0.6));
        if negatives.is_empty() {
            negatives = enumerate_spans(n, None)
                .into_iter()
                .filter(|sp| s.gold().iter().all(|g| g.bounds() != *sp))
                .take(1)
                .collect();
        }
        let labels = corpus.labels();
        let span = grad_check(&mut store, |t, st| {
            let h = enc.encode(t, st, s.tokens(), mode)?;
            negspan_core::train::span_loss_var(t, &scorer, st, h, s.gold(), &negatives, labels)
        });
        let z = tagger.encode_tags(n, s.gold()).map_err(|e| e.to_string())?;
        let plain = grad_check(&mut store, |t, st| {
            let h = enc.encode(t, st, s.tokens(), mode)?;
            tagger.loss(t, st, h, &z, &[])
        });
        let adjusted = grad_check(&mut store, |t, st| {
            let h = enc.encode(t, st, s.tokens(), mode)?;
            tagger.loss(t, st, h, &z, s.hidden())
        });
        for (what, r) in [("span", span), ("tagging", plain), ("adjusted tagging", adjusted)] {
            if r.checked == 0 {
                return Err(format!("trial {trial}: {what} loss checked no parameters"));
            }
            if r.max_rel > worst {
                worst = r.max_rel;
            }
            if r.max_rel >= 1e-4 {
                return Err(format!(
                    "trial {trial}: {what} loss relative error {:.3e} at {}",
                    r.max_rel, r.worst
                ));
            }
        }
    }
    Ok(worst)
}
