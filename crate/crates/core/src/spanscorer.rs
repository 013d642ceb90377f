//! Span representations and label distributions over every enumerated span.
//!
//! For a span `(i, j)` the representation is
//! `h_i ++ h_j ++ (h_i - h_j) ++ (h_i * h_j)` (width `4d`) and its label
//! distribution is `softmax(U tanh(V s))` over the entity labels plus `O`,
//! with `O` at the last index.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{softmax_in_place, ParamStore, Tape, Tensor, Var};

pub const SCORER_V: &str = "scorer.v";
pub const SCORER_U: &str = "scorer.u";
pub const SCORER_V_BIAS: &str = "scorer.v_bias";
pub const SCORER_U_BIAS: &str = "scorer.u_bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScorerConfig {
    pub scoring_dim: usize,
    /// Adds bias vectors after `V` and `U`. Off by default.
    pub bias: bool,
    /// Longest span considered; `None` enumerates every span.
    pub max_span_len: Option<usize>,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            scoring_dim: 256,
            bias: false,
            max_span_len: None,
        }
    }
}

/// All spans `1 <= i <= j <= n`, ordered by `(i, j)`, optionally capped in length.
pub fn enumerate_spans(n: usize, max_len: Option<usize>) -> Vec<(usize, usize)> {
    let cap = max_len.unwrap_or(n);
    (1..=n)
        .flat_map(|i| (i..=n.min(i + cap.max(1) - 1)).map(move |j| (i, j)))
        .collect()
}

/// The four-block representation of span `(i, j)` (1-based) from the rows of `h`.
pub fn span_repr(h: &Tensor, i: usize, j: usize) -> Result<Vec<f64>> {
    let n = h.rows();
    if i == 0 || i > j || j > n {
        return Err(Error::Contract(format!(
            "span ({i}, {j}) outside 1..={n}"
        )));
    }
    let (a, b) = (h.row(i - 1), h.row(j - 1));
    let mut s = Vec::with_capacity(4 * a.len());
    s.extend_from_slice(a);
    s.extend_from_slice(b);
    s.extend(a.iter().zip(b).map(|(x, y)| x - y));
    s.extend(a.iter().zip(b).map(|(x, y)| x * y));
    Ok(s)
}

/// Label distributions `o_{i,j}` for a set of spans of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanScoreTable {
    n: usize,
    spans: Vec<(usize, usize)>,
    probs: Tensor,
    index: HashMap<(usize, usize), usize>,
}

impl SpanScoreTable {
    /// Builds a table from explicit distributions, one row per span.
    pub fn new(n: usize, spans: Vec<(usize, usize)>, probs: Tensor) -> Result<Self> {
        if probs.rows() != spans.len() {
            return Err(Error::Contract(format!(
                "{} spans but {} distributions",
                spans.len(),
                probs.rows()
            )));
        }
        let mut index = HashMap::with_capacity(spans.len());
        for (k, &(i, j)) in spans.iter().enumerate() {
            if i == 0 || i > j || j > n {
                return Err(Error::Contract(format!("span ({i}, {j}) outside 1..={n}")));
            }
            if index.insert((i, j), k).is_some() {
                return Err(Error::Contract(format!("span ({i}, {j}) listed twice")));
            }
        }
        Ok(SpanScoreTable {
            n,
            spans,
            probs,
            index,
        })
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Width of each distribution: `|L| + 1`.
    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn outside_index(&self) -> usize {
        self.num_classes() - 1
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.index.get(&(i, j)).map(|&k| self.probs.row(k))
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &[f64])> {
        self.spans
            .iter()
            .enumerate()
            .map(|(k, &s)| (s, self.probs.row(k)))
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }
}

/// The span scoring head over `num_labels` entity labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanScorer {
    pub config: ScorerConfig,
    pub input_dim: usize,
    pub num_labels: usize,
}

impl SpanScorer {
    pub fn new(config: ScorerConfig, input_dim: usize, num_labels: usize) -> Result<Self> {
        if config.scoring_dim == 0 || input_dim == 0 {
            return Err(Error::Argument("scorer dimensions must be positive".into()));
        }
        if config.max_span_len == Some(0) {
            return Err(Error::Argument("max span length must be positive".into()));
        }
        Ok(SpanScorer {
            config,
            input_dim,
            num_labels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_labels + 1
    }

    pub fn outside_index(&self) -> usize {
        self.num_labels
    }

    /// `V: scoring_dim x 4d` and `U: (|L|+1) x scoring_dim`, uniform in `[-0.1, 0.1]`.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let k = self.config.scoring_dim;
        store.insert_uniform(SCORER_V, k, 4 * self.input_dim, 0.1, rng)?;
        store.insert_uniform(SCORER_U, self.num_classes(), k, 0.1, rng)?;
        if self.config.bias {
            store.insert(SCORER_V_BIAS, Tensor::zeros(1, k))?;
            store.insert(SCORER_U_BIAS, Tensor::zeros(1, self.num_classes()))?;
        }
        Ok(())
    }

    pub fn enumerate(&self, n: usize) -> Vec<(usize, usize)> {
        enumerate_spans(n, self.config.max_span_len)
    }

    /// Stacked span representations, one row per span.
    pub fn span_reprs(&self, tape: &mut Tape, h: Var, spans: &[(usize, usize)]) -> Result<Var> {
        let n = tape.value(h).rows();
        if let Some(&(i, j)) = spans.iter().find(|&&(i, j)| i == 0 || i > j || j > n) {
            return Err(Error::Contract(format!("span ({i}, {j}) outside 1..={n}")));
        }
        let starts: Vec<usize> = spans.iter().map(|&(i, _)| i - 1).collect();
        let ends: Vec<usize> = spans.iter().map(|&(_, j)| j - 1).collect();
        let hi = tape.embedding_lookup(h, &starts)?;
        let hj = tape.embedding_lookup(h, &ends)?;
        let diff = tape.sub(hi, hj)?;
        let prod = tape.mul(hi, hj)?;
        tape.concat_columns(&[hi, hj, diff, prod])
    }

    /// Unnormalised scores `U tanh(V s)`, one row per span.
    pub fn logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        spans: &[(usize, usize)],
    ) -> Result<Var> {
        let s = self.span_reprs(tape, h, spans)?;
        let v = tape.param(store, SCORER_V)?;
        let u = tape.param(store, SCORER_U)?;
        let mut hidden = tape.matmul_transposed(s, v)?;
        if self.config.bias {
            let b = tape.param(store, SCORER_V_BIAS)?;
            hidden = tape.add(hidden, b)?;
        }
        let act = tape.tanh(hidden)?;
        let mut out = tape.matmul_transposed(act, u)?;
        if self.config.bias {
            let b = tape.param(store, SCORER_U_BIAS)?;
            out = tape.add(out, b)?;
        }
        Ok(out)
    }

    /// Scores every enumerated span of the sentence encoded in `h`.
    pub fn score_spans(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<SpanScoreTable> {
        let n = tape.value(h).rows();
        let spans = self.enumerate(n);
        let logits = self.logits(tape, store, h, &spans)?;
        let mut probs = tape.value(logits).clone();
        let c = probs.cols();
        for row in probs.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        SpanScoreTable::new(n, spans, probs)
    }
}

/// `score_spans` on a plain representation matrix.
pub fn score_spans(scorer: &SpanScorer, store: &ParamStore, h: &Tensor) -> Result<SpanScoreTable> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    scorer.score_spans(&mut tape, store, hv)
}
