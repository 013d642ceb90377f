//! Span-based named entity recognition trained with negative sampling.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: dense tensors, a reverse-mode tape, parameter storage and Adam.
//! - [`corpus`]: sentences, entity spans, CoNLL I/O, BIO conversion, synthetic
//!   masking and a controllable synthetic language.
//! - [`encoder`]: a bidirectional gated-recurrent token encoder.
//! - [`spanscorer`]: span representations and the span label scorer.
//! - [`tagbaseline`]: the token-level softmax tagging baseline, with the
//!   loss adjustment that cancels the loss on hidden entities.
//! - [`train`]: negative candidates, uniform negative sampling, the span loss
//!   and the sampled / full / oracle training regimes.
//! - [`infer`]: span decoding and greedy conflict resolution.
//! - [`metrics`]: entity-level F1, degradation rates, Pearson correlation and
//!   the non-selection bound for sampled negatives.
//! - [`study`]: the masking-probability sweep tying everything together.

#![deny(unsafe_code)]

pub mod corpus;
pub mod encoder;
mod error;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod spanscorer;
pub mod study;
pub mod tagbaseline;
pub mod train;

pub use corpus::{AnnotatedSentence, Corpus, EntitySpan, Sentence};
pub use error::{Error, Result};
pub use infer::ScoredEntity;
pub use metrics::{BoundReport, DegradationReport, EvalReport};
pub use model::Model;
pub use numcore::{ParamStore, Tape, Tensor, Var};
pub use train::{Regime, TrainConfig};
