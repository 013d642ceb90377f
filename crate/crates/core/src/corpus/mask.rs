//! Synthetic masking of annotations and the sidecar that records what was hidden.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedSentence, Corpus, EntitySpan};
use crate::error::{Error, Result};

/// Moves each gold span to the hidden set independently with probability `p`.
///
/// Tokens and the label space are untouched, and the result is a pure
/// function of `(c, p, seed)`.
pub fn mask_entities(c: &Corpus, p: f64, seed: u64) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!(
            "masking probability {p} not in [0, 1]"
        )));
    }
    if c.hidden_count() > 0 {
        return Err(Error::Contract("corpus already carries hidden spans".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(c.len());
    for s in &c.sentences {
        let (mut gold, mut hidden) = (Vec::new(), Vec::new());
        for e in s.gold() {
            if rng.gen_bool(p) {
                hidden.push(e.clone());
            } else {
                gold.push(e.clone());
            }
        }
        sentences.push(AnnotatedSentence::new(s.sentence().clone(), gold, hidden)?);
    }
    let mut out = Corpus::with_labels(sentences, c.labels().to_vec())?;
    out.set_hidden_known(true);
    Ok(out)
}

/// One hidden span and the (0-based) index of its sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SidecarRecord {
    pub sentence: usize,
    pub span: EntitySpan,
}

/// Writes `sentenceIdx<TAB>i<TAB>j<TAB>label` for every hidden span.
pub fn write_sidecar(c: &Corpus, mut w: impl Write) -> Result<()> {
    writeln!(w, "# sentence\tstart\tend\tlabel")?;
    for (idx, s) in c.sentences.iter().enumerate() {
        for e in s.hidden() {
            writeln!(w, "{idx}\t{}\t{}\t{}", e.start, e.end, e.label)?;
        }
    }
    Ok(())
}

pub fn read_sidecar(r: impl BufRead) -> Result<Vec<SidecarRecord>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(lineno, "expected four tab-separated fields"));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(lineno, format!("bad integer `{s}`")))
        };
        let span = EntitySpan::new(num(f[1])?, num(f[2])?, f[3])
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        out.push(SidecarRecord {
            sentence: num(f[0])?,
            span,
        });
    }
    Ok(out)
}

/// Restores hidden sets onto a (masked) corpus read back from disk.
pub fn attach_hidden(c: &Corpus, records: &[SidecarRecord]) -> Result<Corpus> {
    let mut hidden: Vec<Vec<EntitySpan>> = vec![Vec::new(); c.len()];
    for r in records {
        let slot = hidden.get_mut(r.sentence).ok_or_else(|| {
            Error::Contract(format!(
                "sidecar names sentence {} but corpus has {}",
                r.sentence,
                c.len()
            ))
        })?;
        slot.push(r.span.clone());
    }
    let mut labels = c.labels().to_vec();
    for r in records {
        if !labels.contains(&r.span.label) {
            labels.push(r.span.label.clone());
        }
    }
    labels.sort();
    let sentences = c
        .sentences
        .iter()
        .zip(hidden)
        .map(|(s, mut h)| {
            h.extend(s.hidden().iter().cloned());
            AnnotatedSentence::new(s.sentence().clone(), s.gold().to_vec(), h)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Corpus::with_labels(sentences, labels)?;
    out.set_hidden_known(true);
    Ok(out)
}
