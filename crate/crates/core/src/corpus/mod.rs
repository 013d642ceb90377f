//! Sentences, entity spans and corpora, plus their file formats.
//!
//! Token positions are 1-based and span ends are inclusive throughout, so
//! `(6, 7, LOC)` covers the sixth and seventh tokens.

mod bio;
mod conll;
mod mask;
mod synth;

use std::collections::{BTreeSet, HashSet};

pub use bio::{bio_to_spans, spans_to_bio, spans_to_tags};
pub use conll::{parse_conll, write_conll};
pub use mask::{attach_hidden, mask_entities, read_sidecar, write_sidecar, SidecarRecord};
pub use synth::{default_context, default_lexicons, gen_synthetic, SynthConfig, TypeLexicon};

use crate::error::{Error, Result};

/// The label reserved for non-entity spans and tokens.
pub const OUTSIDE: &str = "O";

/// A non-empty tokenized sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::Contract("sentence has no tokens".into()));
        }
        if tokens.iter().any(String::is_empty) {
            return Err(Error::Contract("sentence contains an empty token".into()));
        }
        Ok(Sentence { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// An entity occupying tokens `start..=end` (1-based).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if start == 0 || start > end {
            return Err(Error::Contract(format!("invalid span ({start}, {end})")));
        }
        if label.is_empty() || label == OUTSIDE {
            return Err(Error::Contract(format!("invalid entity label `{label}`")));
        }
        Ok(EntitySpan { start, end, label })
    }

    pub fn bounds(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Inclusive intersection test; containment counts as overlap.
    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        spans_overlap(self.bounds(), other.bounds())
    }
}

pub fn spans_overlap(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0.max(b.0) <= a.1.min(b.1)
}

/// A sentence with its visible annotation `gold` and, for synthetic studies,
/// the entities that were masked out of it (`hidden`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedSentence {
    sentence: Sentence,
    gold: Vec<EntitySpan>,
    hidden: Vec<EntitySpan>,
}

impl AnnotatedSentence {
    /// Validates bounds and that no `(i, j)` appears twice across both sets.
    /// Both sets are stored sorted.
    pub fn new(
        sentence: Sentence,
        mut gold: Vec<EntitySpan>,
        mut hidden: Vec<EntitySpan>,
    ) -> Result<Self> {
        let n = sentence.len();
        let mut seen = HashSet::new();
        for s in gold.iter().chain(&hidden) {
            if s.start == 0 || s.start > s.end || s.end > n {
                return Err(Error::Contract(format!(
                    "span ({}, {}) outside sentence of length {n}",
                    s.start, s.end
                )));
            }
            if s.label.is_empty() || s.label == OUTSIDE {
                return Err(Error::Contract(format!("invalid entity label `{}`", s.label)));
            }
            if !seen.insert(s.bounds()) {
                return Err(Error::Contract(format!(
                    "span ({}, {}) annotated twice",
                    s.start, s.end
                )));
            }
        }
        gold.sort();
        hidden.sort();
        Ok(AnnotatedSentence {
            sentence,
            gold,
            hidden,
        })
    }

    pub fn unannotated(sentence: Sentence) -> Self {
        AnnotatedSentence {
            sentence,
            gold: Vec::new(),
            hidden: Vec::new(),
        }
    }

    pub fn sentence(&self) -> &Sentence {
        &self.sentence
    }

    pub fn tokens(&self) -> &[String] {
        self.sentence.tokens()
    }

    pub fn len(&self) -> usize {
        self.sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn gold(&self) -> &[EntitySpan] {
        &self.gold
    }

    pub fn hidden(&self) -> &[EntitySpan] {
        &self.hidden
    }

    /// Gold plus hidden: the full ground truth of a synthetic sentence.
    pub fn all_entities(&self) -> Vec<EntitySpan> {
        let mut all: Vec<EntitySpan> = self.gold.iter().chain(&self.hidden).cloned().collect();
        all.sort();
        all
    }
}

/// An ordered list of annotated sentences over a label space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<AnnotatedSentence>,
    labels: Vec<String>,
    hidden_known: bool,
}

impl Corpus {
    /// Label space is the sorted set of labels used by any span.
    pub fn new(sentences: Vec<AnnotatedSentence>) -> Self {
        let labels: BTreeSet<String> = sentences
            .iter()
            .flat_map(|s| s.gold.iter().chain(&s.hidden))
            .map(|e| e.label.clone())
            .collect();
        Corpus {
            sentences,
            labels: labels.into_iter().collect(),
            hidden_known: false,
        }
    }

    /// Uses an explicit label space, which must cover every span label.
    pub fn with_labels(sentences: Vec<AnnotatedSentence>, labels: Vec<String>) -> Result<Self> {
        let mut set = HashSet::new();
        for l in &labels {
            if l == OUTSIDE || l.is_empty() {
                return Err(Error::Contract(format!("label space contains `{l}`")));
            }
            if !set.insert(l.as_str()) {
                return Err(Error::Contract(format!("label `{l}` listed twice")));
            }
        }
        for s in &sentences {
            for e in s.gold.iter().chain(&s.hidden) {
                if !set.contains(e.label.as_str()) {
                    return Err(Error::Contract(format!(
                        "label `{}` missing from label space",
                        e.label
                    )));
                }
            }
        }
        Ok(Corpus {
            sentences,
            labels,
            hidden_known: false,
        })
    }

    pub fn empty() -> Self {
        Corpus::new(Vec::new())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Whether `hidden` sets carry real information (set by masking or by
    /// attaching a sidecar). Oracle training requires it.
    pub fn hidden_known(&self) -> bool {
        self.hidden_known
    }

    pub(crate) fn set_hidden_known(&mut self, known: bool) {
        self.hidden_known = known;
    }

    pub fn gold_count(&self) -> usize {
        self.sentences.iter().map(|s| s.gold.len()).sum()
    }

    pub fn hidden_count(&self) -> usize {
        self.sentences.iter().map(|s| s.hidden.len()).sum()
    }

    /// Gold sets of every sentence, in order.
    pub fn gold_sets(&self) -> Vec<Vec<EntitySpan>> {
        self.sentences.iter().map(|s| s.gold.to_vec()).collect()
    }

    /// Splits off the last `tail` sentences into a second corpus; both keep
    /// the full label space.
    pub fn split_tail(mut self, tail: usize) -> (Corpus, Corpus) {
        let at = self.sentences.len().saturating_sub(tail);
        let rest = self.sentences.split_off(at);
        let labels = self.labels.clone();
        let known = self.hidden_known;
        let second = Corpus {
            sentences: rest,
            labels,
            hidden_known: known,
        };
        (self, second)
    }

    /// Same sentences with hidden sets cleared and the flag reset.
    pub fn without_hidden(&self) -> Corpus {
        Corpus {
            sentences: self
                .sentences
                .iter()
                .map(|s| AnnotatedSentence {
                    sentence: s.sentence.clone(),
                    gold: s.gold.clone(),
                    hidden: Vec::new(),
                })
                .collect(),
            labels: self.labels.clone(),
            hidden_known: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(n: usize) -> Sentence {
        Sentence::new((0..n).map(|i| format!("t{i}"))).unwrap()
    }

    #[test]
    fn sentence_invariants() {
        assert!(Sentence::new(Vec::<String>::new()).is_err());
        assert!(Sentence::new(["a", ""]).is_err());
    }

    #[test]
    fn span_invariants() {
        assert!(EntitySpan::new(0, 1, "PER").is_err());
        assert!(EntitySpan::new(3, 2, "PER").is_err());
        assert!(EntitySpan::new(1, 1, "O").is_err());
        let s = EntitySpan::new(6, 7, "LOC").unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn overlap_is_inclusive() {
        let a = EntitySpan::new(1, 3, "A").unwrap();
        assert!(a.overlaps(&EntitySpan::new(3, 4, "B").unwrap()));
        assert!(a.overlaps(&EntitySpan::new(2, 2, "B").unwrap()));
        assert!(!a.overlaps(&EntitySpan::new(4, 4, "B").unwrap()));
    }

    #[test]
    fn annotated_sentence_rejects_duplicates_and_out_of_range() {
        let g = vec![EntitySpan::new(1, 1, "PER").unwrap()];
        let h = vec![EntitySpan::new(1, 1, "LOC").unwrap()];
        assert!(AnnotatedSentence::new(sent(3), g.clone(), h).is_err());
        let far = vec![EntitySpan::new(2, 4, "PER").unwrap()];
        assert!(AnnotatedSentence::new(sent(3), far, vec![]).is_err());
        assert!(AnnotatedSentence::new(sent(3), g, vec![]).is_ok());
    }

    #[test]
    fn corpus_label_space() {
        let s = AnnotatedSentence::new(
            sent(4),
            vec![
                EntitySpan::new(1, 1, "PER").unwrap(),
                EntitySpan::new(3, 4, "LOC").unwrap(),
            ],
            vec![],
        )
        .unwrap();
        let c = Corpus::new(vec![s.clone()]);
        assert_eq!(c.labels(), &["LOC".to_string(), "PER".to_string()]);
        assert!(Corpus::with_labels(vec![s.clone()], vec!["PER".into()]).is_err());
        assert!(Corpus::with_labels(vec![s], vec!["PER".into(), "LOC".into(), "O".into()]).is_err());
    }
}
