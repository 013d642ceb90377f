//! Versioned text checkpoints.
//!
//! ```text
//! negspan-ckpt v1
//! meta<TAB>key<TAB>value
//! label<TAB>name<TAB>index
//! vocab<TAB>token<TAB>index
//! name<TAB>shape(comma-separated)<TAB>values(space-separated)
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::io::{BufRead, Write};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const HEADER: &str = "negspan-ckpt v1";
const RESERVED: [&str; 3] = ["meta", "label", "vocab"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub labels: Vec<String>,
    pub vocab: Vec<String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{HEADER}")?;
        for (k, v) in &self.meta {
            writeln!(w, "meta\t{k}\t{v}")?;
        }
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(w, "label\t{l}\t{i}")?;
        }
        for (i, tok) in self.vocab.iter().enumerate() {
            writeln!(w, "vocab\t{tok}\t{i}")?;
        }
        for (name, t) in self.params.iter() {
            if RESERVED.contains(&name) {
                return Err(Error::Contract(format!("reserved parameter name `{name}`")));
            }
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let values: Vec<String> = t.data().iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{name}\t{}\t{}", shape.join(","), values.join(" "))?;
        }
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<Checkpoint> {
        let mut lines = r.lines();
        let first = lines.next().transpose()?;
        if first.as_deref().map(str::trim_end) != Some(HEADER) {
            return Err(Error::Load(format!("missing `{HEADER}` header")));
        }
        let mut ck = Checkpoint::default();
        let mut labels: Vec<(usize, String)> = Vec::new();
        let mut vocab: Vec<(usize, String)> = Vec::new();
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(lineno, "expected three tab-separated fields"));
            }
            let index = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(lineno, format!("bad index `{s}`")))
            };
            match fields[0] {
                "meta" => ck.meta.push((fields[1].into(), fields[2].into())),
                "label" => labels.push((index(fields[2])?, fields[1].into())),
                "vocab" => vocab.push((index(fields[2])?, fields[1].into())),
                name => {
                    let shape = fields[1]
                        .split(',')
                        .map(|s| {
                            s.parse::<usize>()
                                .map_err(|_| Error::parse(lineno, format!("bad extent `{s}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let values = fields[2]
                        .split(' ')
                        .map(|s| {
                            s.parse::<f64>()
                                .map_err(|_| Error::parse(lineno, format!("bad value `{s}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let t = Tensor::new(shape, values)
                        .map_err(|e| Error::parse(lineno, e.to_string()))?;
                    ck.params
                        .insert(name, t)
                        .map_err(|e| Error::parse(lineno, e.to_string()))?;
                }
            }
        }
        ck.labels = dense(labels, "label")?;
        ck.vocab = dense(vocab, "vocab")?;
        Ok(ck)
    }
}

fn dense(mut entries: Vec<(usize, String)>, what: &str) -> Result<Vec<String>> {
    entries.sort_by_key(|(i, _)| *i);
    for (pos, (i, _)) in entries.iter().enumerate() {
        if *i != pos {
            return Err(Error::Load(format!("{what} indices are not 0..n")));
        }
    }
    Ok(entries.into_iter().map(|(_, s)| s).collect())
}
