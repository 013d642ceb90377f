//! Token-level softmax tagging over the BIO tagset, with the adjusted loss
//! that cancels the loss on tokens of hidden entities.
//!
//! The tagset for labels `l0, l1, ...` is `B-l0, I-l0, B-l1, I-l1, ..., O`,
//! so `O` is always the last of the `2|L| + 1` tags.

use std::collections::HashMap;

use rand::Rng;

use crate::corpus::{spans_to_tags, EntitySpan, OUTSIDE};
use crate::error::{Error, Result};
use crate::numcore::{softmax_in_place, ParamStore, Tape, Tensor, Var};

pub const TAGGER_W: &str = "tagger.w";

pub fn tagset(labels: &[String]) -> Vec<String> {
    let mut tags: Vec<String> = labels
        .iter()
        .flat_map(|l| [format!("B-{l}"), format!("I-{l}")])
        .collect();
    tags.push(OUTSIDE.to_string());
    tags
}

/// Softmax tagger `q_i = softmax(W h_i)` with `W: (2|L|+1) x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagger {
    pub input_dim: usize,
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tagger {
    pub fn new(labels: &[String], input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Argument("tagger input width must be positive".into()));
        }
        let tags = tagset(labels);
        let index = tags.iter().enumerate().map(|(k, t)| (t.clone(), k)).collect();
        Ok(Tagger {
            input_dim,
            tags,
            index,
        })
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn outside_index(&self) -> usize {
        self.tags.len() - 1
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        store.insert_uniform(TAGGER_W, self.num_tags(), self.input_dim, 0.1, rng)
    }

    /// Tag indices `z` for a sentence of length `n` annotated with `spans`.
    pub fn encode_tags(&self, n: usize, spans: &[EntitySpan]) -> Result<Vec<usize>> {
        spans_to_tags(n, spans)?
            .iter()
            .map(|t| {
                self.index
                    .get(t)
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("tag `{t}` outside the tagset")))
            })
            .collect()
    }

    pub fn tag_names(&self, z: &[usize]) -> Vec<String> {
        z.iter().map(|&k| self.tags[k].clone()).collect()
    }

    /// `W h_i` for every row of `h`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let w = tape.param(store, TAGGER_W)?;
        tape.matmul_transposed(h, w)
    }

    /// Per-token distributions `q_1..q_n`.
    pub fn tag_distributions(&self, store: &ParamStore, h: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let logits = self.logits(&mut tape, store, hv)?;
        let mut q = tape.value(logits).clone();
        let c = q.cols();
        for row in q.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        Ok(q)
    }

    /// Tape-recorded `sum_k -log q_k[z_k]` over positions not covered by
    /// `hidden`; with `hidden` empty this is the plain tagging loss.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        z: &[usize],
        hidden: &[EntitySpan],
    ) -> Result<Var> {
        let n = tape.value(h).rows();
        let keep = kept_positions(n, z, hidden)?;
        let logits = self.logits(tape, store, h)?;
        let logq = tape.log_softmax_rows(logits)?;
        let entries: Vec<(usize, usize)> = keep.iter().map(|&k| (k, z[k])).collect();
        if entries.is_empty() {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        }
        let picked = tape.pick(logq, &entries)?;
        let total = tape.sum(picked)?;
        tape.scale(total, -1.0)
    }
}

fn kept_positions(n: usize, z: &[usize], hidden: &[EntitySpan]) -> Result<Vec<usize>> {
    if z.len() != n {
        return Err(Error::Contract(format!(
            "{} tags for a sentence of length {n}",
            z.len()
        )));
    }
    let mut covered = vec![false; n];
    for s in hidden {
        if s.start == 0 || s.start > s.end || s.end > n {
            return Err(Error::Contract(format!(
                "hidden span ({}, {}) outside 1..={n}",
                s.start, s.end
            )));
        }
        covered[s.start - 1..s.end].iter_mut().for_each(|c| *c = true);
    }
    Ok((0..n).filter(|&k| !covered[k]).collect())
}

fn check_tags(q: &Tensor, z: &[usize]) -> Result<()> {
    if q.rows() != z.len() {
        return Err(Error::Contract(format!(
            "{} distributions but {} tags",
            q.rows(),
            z.len()
        )));
    }
    if let Some(&bad) = z.iter().find(|&&t| t >= q.cols()) {
        return Err(Error::Contract(format!("tag index {bad} outside tagset of {}", q.cols())));
    }
    Ok(())
}

/// `sum_i -log q_i[z_i]`.
pub fn tagging_loss(q: &Tensor, z: &[usize]) -> Result<f64> {
    check_tags(q, z)?;
    Ok(z.iter().enumerate().map(|(i, &t)| -q.get(i, t).ln()).sum())
}

/// The tagging loss minus the terms of every position inside a hidden span.
pub fn adjusted_tagging_loss(q: &Tensor, z: &[usize], hidden: &[EntitySpan]) -> Result<f64> {
    check_tags(q, z)?;
    let keep = kept_positions(z.len(), z, hidden)?;
    Ok(keep.iter().map(|&i| -q.get(i, z[i]).ln()).sum())
}

/// Per-token argmax; ties go to the lowest tag index.
pub fn decode_tags(q: &Tensor) -> Vec<usize> {
    (0..q.rows())
        .map(|i| {
            q.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        vec!["LOC".into(), "PER".into()]
    }

    #[test]
    fn tagset_layout() {
        assert_eq!(tagset(&labels()), ["B-LOC", "I-LOC", "B-PER", "I-PER", "O"]);
        let t = Tagger::new(&labels(), 4).unwrap();
        assert_eq!(t.outside_index(), 4);
        let spans = vec![EntitySpan::new(2, 3, "PER").unwrap()];
        assert_eq!(t.encode_tags(4, &spans).unwrap(), vec![4, 2, 3, 4]);
    }

    #[test]
    fn zero_weights_give_uniform() {
        let t = Tagger::new(&labels(), 3).unwrap();
        let mut store = ParamStore::new();
        store.insert(TAGGER_W, Tensor::zeros(5, 3)).unwrap();
        let h = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.0, 9.0]]).unwrap();
        let q = t.tag_distributions(&store, &h).unwrap();
        assert_eq!(q.shape(), &[2, 5]);
        assert!(q.data().iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert_eq!(decode_tags(&q), vec![0, 0]);
    }

    #[test]
    fn loss_values() {
        let q = Tensor::from_rows(&[vec![0.5, 0.25, 0.25], vec![0.25, 0.5, 0.25]]).unwrap();
        let z = [0, 2];
        let l = tagging_loss(&q, &z).unwrap();
        assert!((l - (2f64.ln() + 4f64.ln())).abs() < 1e-12);

        let uniform = Tensor::filled(4, 3, 1.0 / 3.0);
        let l = tagging_loss(&uniform, &[0, 1, 2, 0]).unwrap();
        assert!((l - 4.0 * 3f64.ln()).abs() < 1e-12);

        let perfect = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(tagging_loss(&perfect, &[0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn adjusted_loss_cancels_hidden_positions() {
        let q = Tensor::from_rows(&[
            vec![0.5, 0.25, 0.25],
            vec![0.1, 0.1, 0.8],
            vec![0.2, 0.2, 0.6],
        ])
        .unwrap();
        let z = [0, 2, 2];
        let plain = tagging_loss(&q, &z).unwrap();
        assert_eq!(adjusted_tagging_loss(&q, &z, &[]).unwrap(), plain);
        let hid = vec![EntitySpan::new(2, 2, "PER").unwrap()];
        let adj = adjusted_tagging_loss(&q, &z, &hid).unwrap();
        assert!((adj - (-(0.5f64.ln()) - 0.6f64.ln())).abs() < 1e-12);
        assert!(adj <= plain);
        let all = vec![EntitySpan::new(1, 3, "PER").unwrap()];
        assert_eq!(adjusted_tagging_loss(&q, &z, &all).unwrap(), 0.0);
        let out = vec![EntitySpan::new(3, 4, "PER").unwrap()];
        assert!(adjusted_tagging_loss(&q, &z, &out).is_err());
    }

    #[test]
    fn tape_loss_matches_direct() {
        let t = Tagger::new(&labels(), 2).unwrap();
        let mut store = ParamStore::new();
        let w: Vec<f64> = (0..10).map(|k| (k as f64 * 0.37).sin()).collect();
        store.insert(TAGGER_W, Tensor::matrix(5, 2, w).unwrap()).unwrap();
        let h = Tensor::from_rows(&[vec![0.2, -0.4], vec![1.0, 0.1], vec![-0.3, 0.7]]).unwrap();
        let q = t.tag_distributions(&store, &h).unwrap();
        let z = [0, 1, 4];
        let hid = [EntitySpan::new(1, 2, "LOC").unwrap()];
        for hidden in [&[][..], &hid[..]] {
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let l = t.loss(&mut tape, &store, hv, &z, hidden).unwrap();
            let direct = adjusted_tagging_loss(&q, &z, hidden).unwrap();
            assert!((tape.value(l).item() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_ties_and_argmax() {
        let q = Tensor::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.4, 0.2, 0.4]]).unwrap();
        assert_eq!(decode_tags(&q), vec![1, 0]);
    }
}
