//! A trained model: encoder, prediction head, label space and parameters,
//! with checkpoint persistence.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{bio_to_spans, Corpus, EntitySpan};
use crate::encoder::{Encoder, EncoderConfig, Mode, Vocab};
use crate::error::{Error, Result};
use crate::infer::{decode_spans, resolve_conflicts, ScoredEntity};
use crate::metrics::{entity_f1, EvalReport};
use crate::numcore::{Checkpoint, ParamStore, Tape, Tensor};
use crate::spanscorer::{ScorerConfig, SpanScoreTable, SpanScorer};
use crate::tagbaseline::{decode_tags, Tagger};

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Span(SpanScorer),
    Tagger(Tagger),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: Encoder,
    pub head: Head,
    labels: Vec<String>,
    pub params: ParamStore,
}

impl Model {
    /// A span model with parameters drawn from `seed`.
    pub fn span(
        labels: Vec<String>,
        vocab: Vocab,
        enc: EncoderConfig,
        scorer: ScorerConfig,
        seed: u64,
    ) -> Result<Model> {
        let encoder = Encoder::new(enc, vocab)?;
        let scorer = SpanScorer::new(scorer, encoder.output_dim(), labels.len())?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        encoder.init_params(&mut params, &mut rng)?;
        scorer.init_params(&mut params, &mut rng)?;
        Ok(Model {
            encoder,
            head: Head::Span(scorer),
            labels,
            params,
        })
    }

    /// A softmax tagger with parameters drawn from `seed`.
    pub fn tagger(labels: Vec<String>, vocab: Vocab, enc: EncoderConfig, seed: u64) -> Result<Model> {
        let encoder = Encoder::new(enc, vocab)?;
        let tagger = Tagger::new(&labels, encoder.output_dim())?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        encoder.init_params(&mut params, &mut rng)?;
        tagger.init_params(&mut params, &mut rng)?;
        Ok(Model {
            encoder,
            head: Head::Tagger(tagger),
            labels,
            params,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kind(&self) -> &'static str {
        match self.head {
            Head::Span(_) => "span",
            Head::Tagger(_) => "tagger",
        }
    }

    fn encode_eval<S: AsRef<str>>(&self, tape: &mut Tape, tokens: &[S]) -> Result<Tensor> {
        let h = self.encoder.encode(tape, &self.params, tokens, Mode::Eval)?;
        Ok(tape.value(h).clone())
    }

    /// Label distributions over every enumerated span of `tokens`.
    pub fn span_table<S: AsRef<str>>(&self, tokens: &[S]) -> Result<SpanScoreTable> {
        let Head::Span(scorer) = &self.head else {
            return Err(Error::Contract("span table requested from a tagger".into()));
        };
        let mut tape = Tape::new();
        let h = self.encoder.encode(&mut tape, &self.params, tokens, Mode::Eval)?;
        scorer.score_spans(&mut tape, &self.params, h)
    }

    /// Candidate entities before overlap resolution. A tagger's candidates
    /// are its decoded BIO chunks, scored by the mean probability of their
    /// tags.
    pub fn candidates<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<ScoredEntity>> {
        match &self.head {
            Head::Span(_) => Ok(decode_spans(&self.span_table(tokens)?, &self.labels)),
            Head::Tagger(tagger) => {
                let mut tape = Tape::new();
                let h = self.encode_eval(&mut tape, tokens)?;
                let q = tagger.tag_distributions(&self.params, &h)?;
                let z = decode_tags(&q);
                let spans = bio_to_spans(&tagger.tag_names(&z))?;
                spans
                    .into_iter()
                    .map(|s| {
                        let score = (s.start..=s.end).map(|k| q.get(k - 1, z[k - 1])).sum::<f64>()
                            / s.len() as f64;
                        let label_index = self
                            .labels
                            .iter()
                            .position(|l| *l == s.label)
                            .ok_or_else(|| Error::Contract(format!("label `{}` unknown", s.label)))?;
                        Ok(ScoredEntity {
                            start: s.start,
                            end: s.end,
                            label_index,
                            label: s.label,
                            score,
                        })
                    })
                    .collect()
            }
        }
    }

    /// Non-overlapping predictions with their scores.
    pub fn predict_scored<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<ScoredEntity>> {
        Ok(resolve_conflicts(&self.candidates(tokens)?))
    }

    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<EntitySpan>> {
        Ok(self
            .predict_scored(tokens)?
            .iter()
            .map(ScoredEntity::to_span)
            .collect())
    }

    /// Predictions for every sentence, computed in parallel.
    pub fn predict_corpus(&self, c: &Corpus) -> Result<Vec<Vec<ScoredEntity>>> {
        c.sentences
            .par_iter()
            .map(|s| self.predict_scored(s.tokens()))
            .collect()
    }

    /// Entity scores of the predictions against the visible gold of `c`.
    pub fn evaluate(&self, c: &Corpus) -> Result<EvalReport> {
        let pred: Vec<Vec<EntitySpan>> = self
            .predict_corpus(c)?
            .iter()
            .map(|v| v.iter().map(ScoredEntity::to_span).collect())
            .collect();
        entity_f1(&pred, &c.gold_sets())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let enc = &self.encoder.config;
        let mut meta = vec![
            ("kind".to_string(), self.kind().to_string()),
            ("embed_dim".to_string(), enc.embed_dim.to_string()),
            ("hidden_dim".to_string(), enc.hidden_dim.to_string()),
            ("dropout".to_string(), enc.dropout.to_string()),
        ];
        if let Head::Span(s) = &self.head {
            meta.push(("scoring_dim".into(), s.config.scoring_dim.to_string()));
            meta.push(("bias".into(), s.config.bias.to_string()));
            let cap = s.config.max_span_len.map_or("none".to_string(), |c| c.to_string());
            meta.push(("max_span_len".into(), cap));
        }
        Checkpoint {
            meta,
            labels: self.labels.clone(),
            vocab: self.encoder.vocab.tokens().to_vec(),
            params: self.params.snapshot(),
        }
    }

    /// Rebuilds a model, checking that every parameter has the shape the
    /// recorded configuration implies.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Model> {
        let get = |k: &str| {
            ck.meta(k)
                .ok_or_else(|| Error::Load(format!("checkpoint lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Load(format!("bad `{k}` in checkpoint")))
        };
        let enc = EncoderConfig {
            embed_dim: num("embed_dim")?,
            hidden_dim: num("hidden_dim")?,
            dropout: get("dropout")?
                .parse()
                .map_err(|_| Error::Load("bad `dropout` in checkpoint".into()))?,
        };
        let vocab = Vocab::from_tokens(ck.vocab.clone())?;
        let template = match get("kind")? {
            "span" => {
                let cap = match get("max_span_len")? {
                    "none" => None,
                    _ => Some(num("max_span_len")?),
                };
                let scorer = ScorerConfig {
                    scoring_dim: num("scoring_dim")?,
                    bias: get("bias")? == "true",
                    max_span_len: cap,
                };
                Model::span(ck.labels.clone(), vocab, enc, scorer, 0)
            }
            "tagger" => Model::tagger(ck.labels.clone(), vocab, enc, 0),
            other => return Err(Error::Load(format!("unknown model kind `{other}`"))),
        }
        .map_err(|e| Error::Load(e.to_string()))?;

        if template.params.len() != ck.params.len() {
            return Err(Error::Load(format!(
                "checkpoint has {} parameters, model needs {}",
                ck.params.len(),
                template.params.len()
            )));
        }
        for (name, want) in template.params.iter() {
            let have = ck
                .params
                .get(name)
                .ok_or_else(|| Error::Load(format!("checkpoint lacks parameter `{name}`")))?;
            if have.shape() != want.shape() {
                return Err(Error::Load(format!(
                    "parameter `{name}` has shape {:?}, vocabulary and configuration imply {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Model {
            params: ck.params,
            ..template
        })
    }

    pub fn save(&self, w: impl Write) -> Result<()> {
        self.to_checkpoint().write(w)
    }

    pub fn load(r: impl BufRead) -> Result<Model> {
        Model::from_checkpoint(Checkpoint::read(r)?)
    }
}
