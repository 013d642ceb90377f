//! Fixtures shared by the benchmarks.

use negspan_core::corpus::{gen_synthetic, SynthConfig};
use negspan_core::encoder::EncoderConfig;
use negspan_core::spanscorer::ScorerConfig;
use negspan_core::train::{init_model, Regime, TrainConfig};
use negspan_core::{AnnotatedSentence, Corpus, Model};

/// Synthetic sentences of exactly `len` tokens.
pub fn corpus_of_len(sentences: usize, len: usize, seed: u64) -> Corpus {
    let cfg = SynthConfig {
        sentences,
        min_len: len,
        max_len: len,
        ..SynthConfig::default()
    };
    gen_synthetic(&cfg, seed).expect("valid synthetic config")
}

pub fn sentence_of_len(len: usize) -> AnnotatedSentence {
    corpus_of_len(1, len, 7).sentences.remove(0)
}

/// Training configuration at the given scorer width with default encoder
/// sizes.
pub fn config(regime: Regime, scoring_dim: usize) -> TrainConfig {
    TrainConfig {
        regime,
        encoder: EncoderConfig::default(),
        scorer: ScorerConfig {
            scoring_dim,
            ..ScorerConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// An untrained span model over `corpus`.
pub fn span_model(corpus: &Corpus, scoring_dim: usize) -> Model {
    init_model(corpus, &config(Regime::Sampled, scoring_dim)).expect("valid model config")
}
