//! Contextual token representations from a bidirectional gated-recurrent encoder.
//!
//! Each direction runs a GRU over the word embeddings; the representation of
//! token `i` is the forward state after reading `1..=i` concatenated with the
//! backward state after reading `i..=n`, so it depends on the whole sentence.

use std::collections::HashMap;
use std::io::BufRead;

use rand::Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tape, Tensor, Var};

pub const UNK: &str = "<unk>";
pub const EMBEDDING: &str = "encoder.embedding";

/// Token-to-index map; index 0 is the unknown-token slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Every token seen in `c` (minimum frequency 1, case preserved), in
    /// order of first appearance after the unknown slot.
    pub fn from_corpus(c: &Corpus) -> Vocab {
        let mut v = Vocab {
            tokens: vec![UNK.to_string()],
            index: HashMap::from([(UNK.to_string(), 0)]),
        };
        for s in &c.sentences {
            for t in s.tokens() {
                if !v.index.contains_key(t) {
                    v.index.insert(t.clone(), v.tokens.len());
                    v.tokens.push(t.clone());
                }
            }
        }
        v
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.first().map(String::as_str) != Some(UNK) {
            return Err(Error::Load(format!("vocabulary must start with `{UNK}`")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Load(format!("token `{t}` appears twice in vocabulary")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
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

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    /// Output width `d`; each direction contributes `d / 2`.
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 32,
            hidden_dim: 64,
            dropout: 0.4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Argument("embedding dimension must be positive".into()));
        }
        if self.hidden_dim < 2 || !self.hidden_dim.is_multiple_of(2) {
            return Err(Error::Argument(format!(
                "hidden dimension {} must be even and at least 2",
                self.hidden_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Forward-pass mode. Dropout is active only in training, with masks drawn
/// from `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub vocab: Vocab,
}

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];
const GATES: [&str; 3] = ["z", "r", "n"];

fn pname(dir: &str, kind: &str, gate: &str) -> String {
    format!("encoder.{dir}.{kind}{gate}")
}

impl Encoder {
    pub fn new(config: EncoderConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        Ok(Encoder { config, vocab })
    }

    pub fn output_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// Adds encoder parameters drawn uniformly from `[-0.1, 0.1]`.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let e = self.config.embed_dim;
        let h = self.config.hidden_dim / 2;
        store.insert_uniform(EMBEDDING, self.vocab.len(), e, 0.1, rng)?;
        for dir in DIRECTIONS {
            for g in GATES {
                store.insert_uniform(pname(dir, "w", g), e, h, 0.1, rng)?;
                store.insert_uniform(pname(dir, "u", g), h, h, 0.1, rng)?;
                store.insert_uniform(pname(dir, "b", g), 1, h, 0.1, rng)?;
            }
        }
        Ok(())
    }

    /// Encodes `tokens` into an `n x d` matrix of token representations.
    /// Out-of-vocabulary tokens use the unknown slot.
    pub fn encode<S: AsRef<str>>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        tokens: &[S],
        mode: Mode,
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        let ids: Vec<usize> = tokens.iter().map(|t| self.vocab.id(t.as_ref())).collect();
        let table = tape.param(store, EMBEDDING)?;
        let mut x = tape.embedding_lookup(table, &ids)?;
        if let Mode::Train { seed } = mode {
            x = tape.dropout(x, self.config.dropout, seed)?;
        }
        let fwd = self.run_direction(tape, store, x, "fwd", false)?;
        let bwd = self.run_direction(tape, store, x, "bwd", true)?;
        let mut h = tape.concat_columns(&[fwd, bwd])?;
        if let Mode::Train { seed } = mode {
            h = tape.dropout(h, self.config.dropout, seed.wrapping_add(0x9e37_79b9))?;
        }
        Ok(h)
    }

    fn run_direction(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        dir: &str,
        reverse: bool,
    ) -> Result<Var> {
        let n = tape.value(x).rows();
        let hdim = self.config.hidden_dim / 2;
        // input projections for all positions at once
        let mut proj = [x; 3];
        let mut rec = [x; 3];
        for (k, g) in GATES.iter().enumerate() {
            let w = tape.param(store, &pname(dir, "w", g))?;
            let b = tape.param(store, &pname(dir, "b", g))?;
            let xw = tape.matmul(x, w)?;
            proj[k] = tape.add(xw, b)?;
            rec[k] = tape.param(store, &pname(dir, "u", g))?;
        }

        let mut state = tape.constant(Tensor::zeros(1, hdim));
        let mut states = Vec::with_capacity(n);
        let order: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        for t in order {
            let xz = tape.embedding_lookup(proj[0], &[t])?;
            let xr = tape.embedding_lookup(proj[1], &[t])?;
            let xn = tape.embedding_lookup(proj[2], &[t])?;
            let hz = tape.matmul(state, rec[0])?;
            let hr = tape.matmul(state, rec[1])?;
            let az = tape.add(xz, hz)?;
            let ar = tape.add(xr, hr)?;
            let z = tape.sigmoid(az)?;
            let r = tape.sigmoid(ar)?;
            let rh = tape.mul(r, state)?;
            let hn = tape.matmul(rh, rec[2])?;
            let an = tape.add(xn, hn)?;
            let cand = tape.tanh(an)?;
            let delta = tape.sub(cand, state)?;
            let step = tape.mul(z, delta)?;
            state = tape.add(state, step)?;
            states.push(state);
        }
        if reverse {
            states.reverse();
        }
        tape.concat_rows(&states)
    }

    /// Overwrites embedding rows from `token v1 ... vE` lines. Returns the
    /// number of rows replaced. Nothing is changed if any line is rejected.
    pub fn load_pretrained_embeddings(
        &self,
        store: &mut ParamStore,
        r: impl BufRead,
    ) -> Result<usize> {
        let e = self.config.embed_dim;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let lineno = k + 1;
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(lineno, format!("bad value `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != e {
                return Err(Error::parse(
                    lineno,
                    format!("expected {e} values, found {}", values.len()),
                ));
            }
            if let Some(id) = self.vocab.get(token) {
                rows.push((id, values));
            }
        }
        let table = store
            .get_mut(EMBEDDING)
            .ok_or_else(|| Error::Contract("embedding table not initialised".into()))?;
        for (id, values) in &rows {
            table[id * e..(id + 1) * e].copy_from_slice(values);
        }
        Ok(rows.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedSentence, Sentence};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(words: &[&str], cfg: EncoderConfig) -> (Encoder, ParamStore) {
        let c = Corpus::new(vec![AnnotatedSentence::unannotated(
            Sentence::new(words.iter().copied()).unwrap(),
        )]);
        let enc = Encoder::new(cfg, Vocab::from_corpus(&c)).unwrap();
        let mut store = ParamStore::new();
        enc.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(11))
            .unwrap();
        (enc, store)
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 4,
            hidden_dim: 6,
            dropout: 0.4,
        }
    }

    #[test]
    fn vocab_has_unknown_slot() {
        let (enc, _) = setup(&["a", "b", "a"], small());
        assert_eq!(enc.vocab.tokens(), &["<unk>", "a", "b"]);
        assert_eq!(enc.vocab.id("zzz"), 0);
        assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
    }

    #[test]
    fn config_validation() {
        for bad in [
            EncoderConfig { embed_dim: 0, ..small() },
            EncoderConfig { hidden_dim: 5, ..small() },
            EncoderConfig { dropout: 1.0, ..small() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn shape_and_eval_determinism() {
        let (enc, store) = setup(&["a", "b", "c"], small());
        for n in [1, 2, 7, 64] {
            let toks: Vec<String> = (0..n).map(|i| ["a", "b", "c", "q"][i % 4].into()).collect();
            let mut tape = Tape::new();
            let h = enc.encode(&mut tape, &store, &toks, Mode::Eval).unwrap();
            assert_eq!(tape.value(h).shape(), &[n, 6]);
            let mut tape2 = Tape::new();
            let h2 = enc.encode(&mut tape2, &store, &toks, Mode::Eval).unwrap();
            assert_eq!(tape.value(h), tape2.value(h2));
        }
        let mut tape = Tape::new();
        assert!(enc.encode::<&str>(&mut tape, &store, &[], Mode::Eval).is_err());
    }

    #[test]
    fn train_mode_applies_dropout() {
        let (enc, store) = setup(&["a", "b", "c"], small());
        let toks = ["a", "b", "c", "a"];
        let mut t1 = Tape::new();
        let h1 = enc.encode(&mut t1, &store, &toks, Mode::Eval).unwrap();
        let mut t2 = Tape::new();
        let h2 = enc
            .encode(&mut t2, &store, &toks, Mode::Train { seed: 3 })
            .unwrap();
        assert_ne!(t1.value(h1), t2.value(h2));
    }

    #[test]
    fn first_token_sees_distant_context() {
        let (enc, store) = setup(&["a", "b", "c", "d"], small());
        let first = |toks: &[&str]| {
            let mut tape = Tape::new();
            let h = enc.encode(&mut tape, &store, toks, Mode::Eval).unwrap();
            tape.value(h).row(0).to_vec()
        };
        assert_ne!(first(&["a", "b", "c", "d"]), first(&["a", "b", "c", "b"]));
    }

    #[test]
    fn gradients_reach_exactly_the_present_rows() {
        let (enc, store) = setup(&["a", "b", "c", "d"], small());
        let mut tape = Tape::new();
        let h = enc
            .encode(&mut tape, &store, &["b", "d", "b"], Mode::Eval)
            .unwrap();
        let s = tape.sum(h).unwrap();
        let g = tape.backward(s).unwrap();
        let grads = tape.param_grads(&g);
        let emb = &grads.iter().find(|(n, _)| n == EMBEDDING).unwrap().1;
        for (row, tok) in enc.vocab.tokens().iter().enumerate() {
            let touched = emb.row(row).iter().any(|&v| v != 0.0);
            assert_eq!(touched, tok == "b" || tok == "d", "{tok}");
        }
    }

    #[test]
    fn pretrained_embeddings() {
        let (enc, mut store) = setup(&["a", "b"], small());
        let before = store.get(EMBEDDING).unwrap().clone();
        assert_eq!(
            enc.load_pretrained_embeddings(&mut store, "".as_bytes()).unwrap(),
            0
        );
        assert_eq!(store.get(EMBEDDING).unwrap(), &before);

        let text = "<unk> 0 0 0 0\na 1 2 3 4\nb 5 6 7 8\nzz 9 9 9 9\n";
        assert_eq!(
            enc.load_pretrained_embeddings(&mut store, text.as_bytes()).unwrap(),
            3
        );
        assert_eq!(
            store.get(EMBEDDING).unwrap().data(),
            &[0., 0., 0., 0., 1., 2., 3., 4., 5., 6., 7., 8.]
        );

        let err = enc
            .load_pretrained_embeddings(&mut store, "a 1 2 3\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = enc
            .load_pretrained_embeddings(&mut store, "a 1 2 3 4\nb 1 x 3 4\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
