use std::io::{BufRead, Write};

use super::{bio_to_spans, spans_to_bio, AnnotatedSentence, Corpus, Sentence};
use crate::error::{Error, Result};

/// Reads a two-column CoNLL file: `token<space|tab>tag` per line, sentences
/// separated by blank lines. Empty input yields an empty corpus.
pub fn parse_conll(r: impl BufRead) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut first_line = 0;

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>, first: usize| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        // tag errors are reported against the file line, not the token position
        let spans = bio_to_spans(tags).map_err(|e| match e {
            Error::Parse { line, msg } => Error::parse(first + line - 1, msg),
            other => other,
        })?;
        let sentence = Sentence::new(std::mem::take(tokens))?;
        tags.clear();
        sentences.push(AnnotatedSentence::new(sentence, spans, Vec::new())?);
        Ok(())
    };

    for (k, line) in r.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, first_line)?;
            continue;
        }
        let fields: Vec<&str> = line.split(['\t', ' ']).collect();
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(
                lineno,
                format!("expected `token tag`, found {} field(s)", fields.len()),
            ));
        }
        if tokens.is_empty() {
            first_line = lineno;
        }
        tokens.push(fields[0].to_string());
        tags.push(fields[1].to_string());
    }
    flush(&mut tokens, &mut tags, first_line)?;
    Ok(Corpus::new(sentences))
}

/// Writes the visible gold annotation as `token<TAB>tag` lines.
pub fn write_conll(c: &Corpus, mut w: impl Write) -> Result<()> {
    for (k, s) in c.sentences.iter().enumerate() {
        if k > 0 {
            writeln!(w)?;
        }
        let tags = spans_to_bio(s)?;
        for (tok, tag) in s.tokens().iter().zip(tags) {
            writeln!(w, "{tok}\t{tag}")?;
        }
    }
    Ok(())
}
