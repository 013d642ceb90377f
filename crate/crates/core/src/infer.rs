//! Decoding entities from span scores and greedy overlap resolution.

use std::cmp::Ordering;

use crate::corpus::{spans_overlap, EntitySpan};
use crate::error::Result;
use crate::model::Model;
use crate::spanscorer::SpanScoreTable;

/// A predicted entity with the probability of its winning label.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredEntity {
    pub start: usize,
    pub end: usize,
    pub label_index: usize,
    pub label: String,
    pub score: f64,
}

impl ScoredEntity {
    pub fn bounds(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn to_span(&self) -> EntitySpan {
        EntitySpan {
            start: self.start,
            end: self.end,
            label: self.label.clone(),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// One candidate per span whose argmax label is not `O`, in table order.
pub fn decode_spans(table: &SpanScoreTable, labels: &[String]) -> Vec<ScoredEntity> {
    let outside = table.outside_index();
    table
        .iter()
        .filter_map(|((i, j), p)| {
            let k = argmax(p);
            (k != outside).then(|| ScoredEntity {
                start: i,
                end: j,
                label_index: k,
                label: labels.get(k).cloned().unwrap_or_else(|| format!("#{k}")),
                score: p[k],
            })
        })
        .collect()
}

/// Greedy acceptance order: score descending, then start, length and label
/// index ascending.
pub fn greedy_order(a: &ScoredEntity, b: &ScoredEntity) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.cmp(&b.start))
        .then((a.end - a.start).cmp(&(b.end - b.start)))
        .then(a.label_index.cmp(&b.label_index))
}

/// Keeps candidates greedily in [`greedy_order`] while they overlap nothing
/// already kept. The result is sorted by position.
pub fn resolve_conflicts(cands: &[ScoredEntity]) -> Vec<ScoredEntity> {
    resolve_conflicts_counted(cands).0
}

/// [`resolve_conflicts`] plus the number of discarded candidates.
pub fn resolve_conflicts_counted(cands: &[ScoredEntity]) -> (Vec<ScoredEntity>, usize) {
    let mut order: Vec<&ScoredEntity> = cands.iter().collect();
    order.sort_by(|a, b| greedy_order(a, b));
    let mut kept: Vec<ScoredEntity> = Vec::new();
    for c in order {
        if kept.iter().all(|k| !spans_overlap(k.bounds(), c.bounds())) {
            kept.push(c.clone());
        }
    }
    let discarded = cands.len() - kept.len();
    kept.sort_by_key(|e| (e.start, e.end));
    (kept, discarded)
}

/// Resolved predictions of `model` for one sentence.
pub fn predict<S: AsRef<str>>(model: &Model, tokens: &[S]) -> Result<Vec<ScoredEntity>> {
    model.predict_scored(tokens)
}
