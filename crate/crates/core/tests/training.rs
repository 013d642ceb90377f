use negspan_core::corpus::{gen_synthetic, mask_entities, SynthConfig};
use negspan_core::encoder::EncoderConfig;
use negspan_core::spanscorer::ScorerConfig;
use negspan_core::train::{regime_negatives, train_model, Regime, TrainConfig};
use negspan_core::{Corpus, Error, Model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(sentences: usize, seed: u64) -> Corpus {
    gen_synthetic(
        &SynthConfig {
            sentences,
            max_len: 12,
            ..SynthConfig::default()
        },
        seed,
    )
    .unwrap()
}

fn small(regime: Regime, epochs: usize) -> TrainConfig {
    TrainConfig {
        regime,
        epochs,
        encoder: EncoderConfig {
            embed_dim: 8,
            hidden_dim: 8,
            dropout: 0.4,
        },
        scorer: ScorerConfig {
            scoring_dim: 8,
            ..ScorerConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn saved(m: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    m.save(&mut out).unwrap();
    out
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let c = corpus(30, 1);
    let a = train_model(&c, None, &small(Regime::Sampled, 2)).unwrap();
    let b = train_model(&c, None, &small(Regime::Sampled, 2)).unwrap();
    assert_eq!(saved(&a.model), saved(&b.model));
    let other = train_model(&c, None, &TrainConfig { seed: 2, ..small(Regime::Sampled, 2) }).unwrap();
    assert_ne!(saved(&a.model), saved(&other.model));
}

#[test]
fn loss_falls_over_epochs_in_every_regime() {
    let c = mask_entities(&corpus(40, 2), 0.3, 5).unwrap();
    for regime in Regime::ALL {
        let out = train_model(&c, None, &small(regime, 5)).unwrap();
        assert_eq!(out.log.len(), 5);
        let (first, last) = (out.log[0].mean_loss, out.log[4].mean_loss);
        assert!(last < first, "{regime}: {first} -> {last}");
    }
}

#[test]
fn hidden_sets_are_required_where_used() {
    let c = corpus(5, 3);
    for regime in [Regime::Oracle, Regime::TaggingAdjusted] {
        match train_model(&c, None, &small(regime, 1)) {
            Err(Error::Config(_)) => {}
            other => panic!("{regime}: {other:?}"),
        }
    }
    let masked = mask_entities(&c, 0.5, 1).unwrap();
    assert!(train_model(&masked, None, &small(Regime::Oracle, 1)).is_ok());
}

#[test]
fn empty_corpus_is_rejected() {
    assert!(matches!(
        train_model(&Corpus::empty(), None, &small(Regime::Sampled, 1)),
        Err(Error::Config(_))
    ));
}

#[test]
fn best_dev_epoch_is_kept() {
    let c = corpus(40, 4);
    let dev = corpus(20, 5);
    let out = train_model(&c, Some(&dev), &small(Regime::Sampled, 6)).unwrap();
    let scores: Vec<f64> = out.log.iter().map(|e| e.dev_f1.unwrap()).collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first = scores.iter().position(|&f| f == top).unwrap() + 1;
    assert_eq!(out.best_epoch, first);
    assert_eq!(out.model.evaluate(&dev).unwrap().f1, top);
}

#[test]
fn larger_batches_train() {
    let c = corpus(20, 6);
    let out = train_model(&c, None, &TrainConfig { batch_size: 4, ..small(Regime::Full, 3) }).unwrap();
    assert!(out.log.iter().all(|e| e.mean_loss.is_finite()));
}

#[test]
fn checkpoints_reload_with_identical_predictions() {
    let c = corpus(20, 7);
    for regime in [Regime::Sampled, Regime::Tagging] {
        let out = train_model(&c, None, &small(regime, 2)).unwrap();
        let back = Model::load(saved(&out.model).as_slice()).unwrap();
        for s in &c.sentences {
            assert_eq!(
                out.model.predict_scored(s.tokens()).unwrap(),
                back.predict_scored(s.tokens()).unwrap()
            );
        }
    }
}

#[test]
fn regimes_choose_their_negatives() {
    let c = mask_entities(&corpus(30, 8), 0.5, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for s in c.sentences.iter().filter(|s| !s.hidden().is_empty()) {
        let n = s.len();
        let all = n * (n + 1) / 2;
        let full = regime_negatives(Regime::Full, s, 0.35, None, &mut rng);
        let oracle = regime_negatives(Regime::Oracle, s, 0.35, None, &mut rng);
        assert_eq!(full.len(), all - s.gold().len());
        assert_eq!(oracle.len(), all - s.gold().len() - s.hidden().len());
        assert!(s.hidden().iter().all(|h| full.contains(&h.bounds())));
        assert!(s.hidden().iter().all(|h| !oracle.contains(&h.bounds())));
        let sampled = regime_negatives(Regime::Sampled, s, 0.35, None, &mut rng);
        assert_eq!(sampled.len(), (0.35 * n as f64 - 1e-9).ceil() as usize);
        assert!(sampled.iter().all(|sp| full.contains(sp)));
        let capped = regime_negatives(Regime::Full, s, 0.35, Some(2), &mut rng);
        assert!(capped.iter().all(|&(i, j)| j - i < 2));
    }
}

#[test]
fn tagger_memorises_a_small_corpus() {
    let c = corpus(10, 9);
    let cfg = TrainConfig {
        encoder: EncoderConfig {
            embed_dim: 16,
            hidden_dim: 32,
            dropout: 0.0,
        },
        ..small(Regime::Tagging, 60)
    };
    let out = train_model(&c, None, &cfg).unwrap();
    assert_eq!(out.model.evaluate(&c).unwrap().f1, 1.0);
}
