//! IOB2 conversion between tag sequences and span sets.

use super::{AnnotatedSentence, EntitySpan, OUTSIDE};
use crate::error::{Error, Result};

enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str, position: usize) -> Result<Tag<'_>> {
    if tag == OUTSIDE {
        return Ok(Tag::Outside);
    }
    let bad = || Error::parse(position, format!("unknown tag `{tag}`"));
    let (prefix, label) = tag.split_once('-').ok_or_else(bad)?;
    if label.is_empty() {
        return Err(bad());
    }
    match prefix {
        "B" => Ok(Tag::Begin(label)),
        "I" => Ok(Tag::Inside(label)),
        _ => Err(bad()),
    }
}

/// Recovers entities from a tag sequence.
///
/// `B-X` always opens an entity. `I-X` continues the open entity only when it
/// has type `X`; otherwise it opens a new one, the same repair conlleval
/// applies. Errors carry the 1-based position of an unrecognised tag.
pub fn bio_to_spans<S: AsRef<str>>(tags: &[S]) -> Result<Vec<EntitySpan>> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    for (k, tag) in tags.iter().enumerate() {
        let pos = k + 1;
        let parsed = parse_tag(tag.as_ref(), pos)?;
        let continues = matches!((&parsed, open), (Tag::Inside(l), Some((_, o))) if *l == o);
        if continues {
            continue;
        }
        if let Some((start, label)) = open.take() {
            spans.push(EntitySpan::new(start, pos - 1, label)?);
        }
        open = match parsed {
            Tag::Outside => None,
            Tag::Begin(l) | Tag::Inside(l) => Some((pos, l)),
        };
    }
    if let Some((start, label)) = open {
        spans.push(EntitySpan::new(start, tags.len(), label)?);
    }
    Ok(spans)
}

/// Tags for `n` tokens carrying the given non-overlapping spans.
pub fn spans_to_tags(n: usize, spans: &[EntitySpan]) -> Result<Vec<String>> {
    let mut tags = vec![OUTSIDE.to_string(); n];
    let mut taken = vec![false; n];
    for s in spans {
        if s.start == 0 || s.end > n || s.start > s.end {
            return Err(Error::Contract(format!(
                "span ({}, {}) outside sentence of length {n}",
                s.start, s.end
            )));
        }
        for pos in s.start..=s.end {
            if taken[pos - 1] {
                return Err(Error::Contract(format!(
                    "overlapping spans at token {pos}"
                )));
            }
            taken[pos - 1] = true;
            let prefix = if pos == s.start { "B" } else { "I" };
            tags[pos - 1] = format!("{prefix}-{}", s.label);
        }
    }
    Ok(tags)
}

/// Tags for the visible gold annotation of `s`.
pub fn spans_to_bio(s: &AnnotatedSentence) -> Result<Vec<String>> {
    spans_to_tags(s.len(), s.gold())
}
