//! Negative candidates, uniform negative sampling, the span loss and the
//! training loop for every regime.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedSentence, Corpus, EntitySpan};
use crate::encoder::{EncoderConfig, Mode, Vocab};
use crate::error::{Error, Result};
use crate::model::{Head, Model};
use crate::numcore::{AdamConfig, ParamStore, Tape, Tensor, Var};
use crate::spanscorer::{enumerate_spans, ScorerConfig, SpanScoreTable, SpanScorer};

/// How a model is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    /// Span model; `ceil(lambda n)` negatives drawn afresh every epoch.
    Sampled,
    /// Span model; every unannotated span is a negative.
    Full,
    /// Span model; every span outside gold and hidden is a negative.
    Oracle,
    /// Softmax tagger with unannotated tokens tagged `O`.
    Tagging,
    /// Softmax tagger with the loss on hidden-entity tokens removed.
    TaggingAdjusted,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::Sampled,
        Regime::Full,
        Regime::Oracle,
        Regime::Tagging,
        Regime::TaggingAdjusted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Sampled => "sampled",
            Regime::Full => "full",
            Regime::Oracle => "oracle",
            Regime::Tagging => "tag",
            Regime::TaggingAdjusted => "tag-adjusted",
        }
    }

    pub fn is_span(self) -> bool {
        matches!(self, Regime::Sampled | Regime::Full | Regime::Oracle)
    }

    /// Whether the regime reads the hidden sets.
    pub fn needs_hidden(self) -> bool {
        matches!(self, Regime::Oracle | Regime::TaggingAdjusted)
    }

    pub fn uses_lambda(self) -> bool {
        self == Regime::Sampled
    }

    /// The hidden-aware regime a plain regime is compared against.
    pub fn adjusted(self) -> Option<Regime> {
        match self {
            Regime::Sampled | Regime::Full => Some(Regime::Oracle),
            Regime::Tagging => Some(Regime::TaggingAdjusted),
            _ => None,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Regime> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "unknown regime `{s}` (expected one of sampled, full, oracle, tag, tag-adjusted)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate and moment settings; `weight_decay` is overridden by `l2`.
    pub adam: AdamConfig,
    pub l2: f64,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub scorer: ScorerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::Sampled,
            lambda: 0.35,
            epochs: 30,
            batch_size: 1,
            adam: AdamConfig::default(),
            l2: 1e-5,
            seed: 1,
            encoder: EncoderConfig::default(),
            scorer: ScorerConfig::default(),
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda {} outside (0, 1)", self.lambda));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", a.lr));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return bad("Adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 {} must be >= 0", self.l2));
        }
        if self.scorer.scoring_dim == 0 || self.scorer.max_span_len == Some(0) {
            return bad("scoring dim and max span length must be positive".into());
        }
        self.encoder.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Every span `(i, j)` of `s` that carries no visible annotation, in
/// enumeration order. There are `n(n+1)/2 - m` of them.
pub fn negative_candidates(s: &AnnotatedSentence) -> Vec<(usize, usize)> {
    spans_excluding(s.len(), None, s.gold().iter())
}

/// Every span outside both the visible gold and the hidden set.
pub fn oracle_adjusted_negatives(s: &AnnotatedSentence) -> Vec<(usize, usize)> {
    spans_excluding(s.len(), None, s.gold().iter().chain(s.hidden()))
}

fn spans_excluding<'a>(
    n: usize,
    max_len: Option<usize>,
    exclude: impl Iterator<Item = &'a EntitySpan>,
) -> Vec<(usize, usize)> {
    let taken: HashSet<(usize, usize)> = exclude.map(EntitySpan::bounds).collect();
    enumerate_spans(n, max_len)
        .into_iter()
        .filter(|s| !taken.contains(s))
        .collect()
}

/// `min(ceil(lambda n), available)`. A tolerance of 1e-9 absorbs rounding in
/// the product, so `0.35 * 20` counts as exactly 7.
pub fn sample_size(n: usize, lambda: f64, available: usize) -> usize {
    let k = (lambda * n as f64 - 1e-9).ceil().max(0.0) as usize;
    k.min(available)
}

/// A uniform sample without replacement of `sample_size` candidates.
pub fn sample_negatives(
    candidates: &[(usize, usize)],
    n: usize,
    lambda: f64,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let k = sample_size(n, lambda, candidates.len());
    index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

fn label_index(labels: &[String], label: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::Contract(format!("label `{label}` outside the label space")))
}

/// `sum_gold -log o[l] + sum_negatives -log o[O]` read off a score table.
pub fn span_loss(
    table: &SpanScoreTable,
    gold: &[EntitySpan],
    negatives: &[(usize, usize)],
    labels: &[String],
) -> Result<f64> {
    let outside = table.outside_index();
    let prob = |i: usize, j: usize, k: usize| -> Result<f64> {
        table
            .get(i, j)
            .map(|p| p[k])
            .ok_or_else(|| Error::Contract(format!("span ({i}, {j}) missing from score table")))
    };
    let mut total = 0.0;
    for g in gold {
        total -= prob(g.start, g.end, label_index(labels, &g.label)?)?.ln();
    }
    for &(i, j) in negatives {
        total -= prob(i, j, outside)?.ln();
    }
    Ok(total)
}

/// The span loss on the tape. Only the referenced spans are scored, which
/// gives the same value and gradients as scoring the whole table.
pub fn span_loss_var(
    tape: &mut Tape,
    scorer: &SpanScorer,
    store: &ParamStore,
    h: Var,
    gold: &[EntitySpan],
    negatives: &[(usize, usize)],
    labels: &[String],
) -> Result<Var> {
    let mut spans = Vec::with_capacity(gold.len() + negatives.len());
    let mut classes = Vec::with_capacity(spans.capacity());
    for g in gold {
        spans.push(g.bounds());
        classes.push(label_index(labels, &g.label)?);
    }
    for &s in negatives {
        spans.push(s);
        classes.push(scorer.outside_index());
    }
    if let Some(cap) = scorer.config.max_span_len {
        if let Some(&(i, j)) = spans.iter().find(|&&(i, j)| j - i + 1 > cap) {
            return Err(Error::Contract(format!(
                "span ({i}, {j}) exceeds the maximum span length {cap}"
            )));
        }
    }
    if spans.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let logits = scorer.logits(tape, store, h, &spans)?;
    let logp = tape.log_softmax_rows(logits)?;
    let entries: Vec<(usize, usize)> = classes.into_iter().enumerate().collect();
    let picked = tape.pick(logp, &entries)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0)
}

/// Negatives for one sentence under a span regime.
pub fn regime_negatives(
    regime: Regime,
    s: &AnnotatedSentence,
    lambda: f64,
    max_len: Option<usize>,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    match regime {
        Regime::Sampled => {
            let cands = spans_excluding(s.len(), max_len, s.gold().iter());
            sample_negatives(&cands, s.len(), lambda, rng)
        }
        Regime::Full => spans_excluding(s.len(), max_len, s.gold().iter()),
        Regime::Oracle => spans_excluding(s.len(), max_len, s.gold().iter().chain(s.hidden())),
        Regime::Tagging | Regime::TaggingAdjusted => Vec::new(),
    }
}

/// Tape loss of one training sentence for `model` under `regime`.
pub fn sentence_loss(
    tape: &mut Tape,
    model: &Model,
    s: &AnnotatedSentence,
    regime: Regime,
    negatives: &[(usize, usize)],
    mode: Mode,
) -> Result<Var> {
    let h = model.encoder.encode(tape, &model.params, s.tokens(), mode)?;
    match (&model.head, regime.is_span()) {
        (Head::Span(scorer), true) => {
            span_loss_var(tape, scorer, &model.params, h, s.gold(), negatives, model.labels())
        }
        (Head::Tagger(tagger), false) => {
            let z = tagger.encode_tags(s.len(), s.gold())?;
            let hidden: &[EntitySpan] = if regime == Regime::TaggingAdjusted {
                s.hidden()
            } else {
                &[]
            };
            tagger.loss(tape, &model.params, h, &z, hidden)
        }
        _ => Err(Error::Config(format!(
            "regime `{regime}` does not match a {} model",
            model.kind()
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Data loss averaged over training sentences, L2 term excluded.
    pub mean_loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
}

impl TrainOutcome {
    /// `epoch<TAB>meanLoss<TAB>devF1` lines after a `#` header.
    pub fn log_table(&self) -> String {
        let mut out = String::from("# epoch\tmeanLoss\tdevF1\n");
        for e in &self.log {
            let dev = e.dev_f1.map_or_else(|| "NA".to_string(), |f| format!("{f:.4}"));
            out.push_str(&format!("{}\t{:.6}\t{dev}\n", e.epoch, e.mean_loss));
        }
        out
    }
}

/// Builds a fresh model for `corpus` under `cfg`.
pub fn init_model(corpus: &Corpus, cfg: &TrainConfig) -> Result<Model> {
    let vocab = Vocab::from_corpus(corpus);
    let labels = corpus.labels().to_vec();
    if cfg.regime.is_span() {
        Model::span(labels, vocab, cfg.encoder, cfg.scorer, cfg.seed)
    } else {
        Model::tagger(labels, vocab, cfg.encoder, cfg.seed)
    }
}

/// Trains a fresh model on `corpus` with shuffled sentence-level steps. With
/// `dev` given, the parameters of the epoch with the best dev F1 are kept
/// (earliest on ties); otherwise those of the last epoch.
pub fn train_model(corpus: &Corpus, dev: Option<&Corpus>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_from(init_model(corpus, cfg)?, corpus, dev, cfg)
}

/// [`train_model`] starting from an existing model, e.g. one with
/// pretrained embeddings loaded.
pub fn train_from(
    mut model: Model,
    corpus: &Corpus,
    dev: Option<&Corpus>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.regime.needs_hidden() && !corpus.hidden_known() {
        return Err(Error::Config(format!(
            "regime `{}` needs the hidden entity sets (masking sidecar)",
            cfg.regime
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let adam = AdamConfig {
        weight_decay: cfg.l2,
        ..cfg.adam
    };
    let max_len = cfg.scorer.max_span_len;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<(String, Tensor)> = Vec::new();
            for &idx in batch {
                let s = &corpus.sentences[idx];
                let negatives = regime_negatives(cfg.regime, s, cfg.lambda, max_len, &mut rng);
                let mode = Mode::Train { seed: rng.gen() };
                let mut tape = Tape::new();
                let loss = sentence_loss(&mut tape, &model, s, cfg.regime, &negatives, mode)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss at epoch {epoch}, sentence {idx}"
                    )));
                }
                total += value;
                let grads = tape.backward(loss)?;
                accumulate(&mut acc, tape.param_grads(&grads));
            }
            if !acc.is_empty() {
                model.params.adam_step(&acc, &adam).map_err(|e| match e {
                    Error::Training(m) => Error::Training(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
            }
        }
        let dev_f1 = match dev {
            Some(d) => Some(model.evaluate(d)?.f1),
            None => None,
        };
        log.push(EpochLog {
            epoch,
            mean_loss: total / corpus.len() as f64,
            dev_f1,
        });
        if let Some(f) = dev_f1 {
            if best.as_ref().is_none_or(|b| f > b.0) {
                best = Some((f, epoch, model.params.clone()));
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => cfg.epochs,
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}

fn accumulate(acc: &mut Vec<(String, Tensor)>, grads: Vec<(String, Tensor)>) {
    if acc.is_empty() {
        *acc = grads;
        return;
    }
    for (name, g) in grads {
        match acc.iter_mut().find(|(n, _)| *n == name) {
            Some((_, a)) => a.add_assign(&g),
            None => acc.push((name, g)),
        }
    }
}
