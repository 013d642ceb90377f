//! A controllable synthetic language for desk-scale experiments.
//!
//! Each entity type owns a lexicon of phrases whose tokens appear nowhere
//! else, so entity identity is decidable from the words alone. Phrase choice
//! follows a Zipf law, which leaves a tail of rare entities: that tail is what
//! makes fewer annotations (and false negatives) cost recall.

use std::collections::{HashMap, HashSet};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedSentence, Corpus, EntitySpan, Sentence, OUTSIDE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TypeLexicon {
    pub label: String,
    pub phrases: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_entities: usize,
    pub max_entities: usize,
    pub lexicons: Vec<TypeLexicon>,
    pub context: Vec<String>,
    /// Zipf exponent over phrase ranks within a type; 0 draws uniformly.
    pub phrase_skew: f64,
}

impl Default for SynthConfig {
    /// 2000 sentences of 5 to 20 tokens with 1 to 3 entities of 3 types.
    fn default() -> Self {
        SynthConfig {
            sentences: 2000,
            min_len: 5,
            max_len: 20,
            min_entities: 1,
            max_entities: 3,
            lexicons: default_lexicons(3, 120, 200, 0x5eed),
            context: default_context(400, 0xc0de),
            phrase_skew: 1.0,
        }
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "te", "vo", "zi", "ba", "do", "fe", "gu", "ha", "ji",
    "pe", "qu", "ri", "so", "tu", "wa", "xe", "yo", "an",
];

fn pseudo_word(rng: &mut impl Rng, syllables: usize) -> String {
    (0..syllables)
        .map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())])
        .collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Lexicons of `phrases` distinct phrases (1 to 3 tokens) per type, built from
/// a private pool of `pool` capitalised pseudo-words per type.
pub fn default_lexicons(types: usize, phrases: usize, pool: usize, seed: u64) -> Vec<TypeLexicon> {
    const NAMES: [&str; 3] = ["PER", "LOC", "ORG"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    (0..types)
        .map(|t| {
            let mut words = Vec::with_capacity(pool);
            while words.len() < pool {
                let syl = 2 + rng.gen_range(0..2);
                let w = capitalize(&pseudo_word(&mut rng, syl));
                if used.insert(w.clone()) {
                    words.push(w);
                }
            }
            let mut seen = HashSet::new();
            let mut list = Vec::with_capacity(phrases);
            while list.len() < phrases {
                let len = match rng.gen_range(0..10) {
                    0..=3 => 1,
                    4..=7 => 2,
                    _ => 3,
                };
                let p: Vec<String> = (0..len)
                    .map(|_| words[rng.gen_range(0..pool)].clone())
                    .collect();
                if seen.insert(p.clone()) {
                    list.push(p);
                }
            }
            TypeLexicon {
                label: NAMES
                    .get(t)
                    .map_or_else(|| format!("TYPE{t}"), |s| s.to_string()),
                phrases: list,
            }
        })
        .collect()
}

/// `size` distinct lowercase pseudo-words.
pub fn default_context(size: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let syl = 1 + rng.gen_range(0..3);
        let w = pseudo_word(&mut rng, syl);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.min_len == 0 || self.min_len > self.max_len {
            return arg(format!("bad length range {}..={}", self.min_len, self.max_len));
        }
        if self.min_entities > self.max_entities {
            return arg("min_entities exceeds max_entities".into());
        }
        if self.context.is_empty() || self.context.iter().any(|w| w.is_empty()) {
            return arg("context lexicon must be non-empty".into());
        }
        if self.max_entities > 0 && self.lexicons.is_empty() {
            return arg("entities requested but no type lexicons given".into());
        }
        if !self.phrase_skew.is_finite() || self.phrase_skew < 0.0 {
            return arg(format!("phrase skew {} must be >= 0", self.phrase_skew));
        }
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for w in &self.context {
            owner.insert(w, OUTSIDE);
        }
        let mut labels = HashSet::new();
        for lex in &self.lexicons {
            if lex.label.is_empty() || lex.label == OUTSIDE || !labels.insert(&lex.label) {
                return arg(format!("bad or repeated type label `{}`", lex.label));
            }
            if lex.phrases.is_empty() {
                return arg(format!("type `{}` has no phrases", lex.label));
            }
            for phrase in &lex.phrases {
                if phrase.is_empty() || phrase.len() > self.max_len {
                    return arg(format!("phrase length {} unusable", phrase.len()));
                }
                for tok in phrase {
                    if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                        return arg(format!("bad token `{tok}` in lexicon"));
                    }
                    match owner.get(tok.as_str()) {
                        Some(&o) if o != lex.label => {
                            return arg(format!(
                                "lexicons not disjoint: `{tok}` in both `{o}` and `{}`",
                                lex.label
                            ))
                        }
                        _ => {
                            owner.insert(tok, &lex.label);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Generates `cfg.sentences` sentences. Entities are separated by at least
/// one context token, so every planted phrase is a maximal run of its
/// type's words and is annotated.
pub fn gen_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut labels: Vec<String> = cfg.lexicons.iter().map(|l| l.label.clone()).collect();
    labels.sort();
    if cfg.sentences == 0 {
        return Corpus::with_labels(Vec::new(), labels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pickers = cfg
        .lexicons
        .iter()
        .map(|lex| {
            let w = (0..lex.phrases.len()).map(|r| 1.0 / ((r + 1) as f64).powf(cfg.phrase_skew));
            WeightedIndex::new(w).map_err(|e| Error::Argument(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sentences = Vec::with_capacity(cfg.sentences);
    for _ in 0..cfg.sentences {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let want = rng.gen_range(cfg.min_entities..=cfg.max_entities);
        let mut chosen: Vec<(usize, usize)> = (0..want)
            .map(|_| {
                let t = rng.gen_range(0..cfg.lexicons.len());
                (t, pickers[t].sample(&mut rng))
            })
            .collect();
        let width = |c: &[(usize, usize)]| -> usize {
            c.iter().map(|&(t, p)| cfg.lexicons[t].phrases[p].len()).sum::<usize>()
                + c.len().saturating_sub(1)
        };
        while !chosen.is_empty() && width(&chosen) > len {
            chosen.pop();
        }
        let entity_tokens: usize = chosen
            .iter()
            .map(|&(t, p)| cfg.lexicons[t].phrases[p].len())
            .sum();
        let k = chosen.len();
        // k + 1 gaps; interior gaps hold at least one context token
        let mut gaps = vec![0usize; k + 1];
        for g in gaps.iter_mut().take(k).skip(1) {
            *g = 1;
        }
        let spare = len - entity_tokens - k.saturating_sub(1);
        for _ in 0..spare {
            let g = rng.gen_range(0..=k);
            gaps[g] += 1;
        }

        let mut tokens = Vec::with_capacity(len);
        let mut spans = Vec::with_capacity(k);
        let push_context = |tokens: &mut Vec<String>, count: usize, rng: &mut ChaCha8Rng| {
            for _ in 0..count {
                tokens.push(cfg.context[rng.gen_range(0..cfg.context.len())].clone());
            }
        };
        for (e, &(t, p)) in chosen.iter().enumerate() {
            push_context(&mut tokens, gaps[e], &mut rng);
            let phrase = &cfg.lexicons[t].phrases[p];
            let start = tokens.len() + 1;
            tokens.extend(phrase.iter().cloned());
            spans.push(EntitySpan::new(start, tokens.len(), cfg.lexicons[t].label.clone())?);
        }
        push_context(&mut tokens, gaps[k], &mut rng);
        debug_assert_eq!(tokens.len(), len);
        sentences.push(AnnotatedSentence::new(Sentence::new(tokens)?, spans, Vec::new())?);
    }
    Corpus::with_labels(sentences, labels)
}
