//! `key=value` configuration files merged under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use negspan_core::Error;

/// Values read from a config file plus the effective settings of a run.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    effective: Vec<(String, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl Settings {
    /// Parses `key=value` lines; `#` starts a comment. Keys outside `known`
    /// are rejected.
    pub fn from_text(text: &str, known: &[&str]) -> Result<Settings, Error> {
        let mut file = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", k + 1)))?;
            let key = normalize(key);
            if !known.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "config line {}: unknown key `{key}`",
                    k + 1
                )));
            }
            file.insert(key, value.trim().to_string());
        }
        Ok(Settings {
            file,
            effective: Vec::new(),
        })
    }

    pub fn load(path: Option<&Path>, known: &[&str]) -> anyhow::Result<Settings> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| anyhow::Error::new(Error::Io(e)).context(format!("reading {}", p.display())))?;
                Ok(Settings::from_text(&text, known)?)
            }
            None => Ok(Settings::default()),
        }
    }

    /// The flag if given, else the file value, else `default`; recorded as
    /// effective.
    pub fn pick<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Error>
    where
        T: FromStr + Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value `{raw}` for `{key}`")))?,
                None => default,
            },
        };
        self.effective.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    /// Like [`Settings::pick`] for comma-separated lists.
    pub fn pick_list<T>(&mut self, key: &str, flag: Option<&str>, default: &str) -> Result<Vec<T>, Error>
    where
        T: FromStr,
    {
        let raw = flag
            .map(str::to_string)
            .or_else(|| self.file.get(key).cloned())
            .unwrap_or_else(|| default.to_string());
        let values = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("bad list item `{s}` for `{key}`")))
            })
            .collect::<Result<Vec<T>, Error>>()?;
        self.effective.push((key.to_string(), raw));
        Ok(values)
    }

    pub fn file_has(&self, key: &str) -> bool {
        self.file.contains_key(key)
    }

    /// `# key=value` lines for the run log.
    pub fn echo(&self) -> String {
        let mut out = String::from("# effective configuration\n");
        for (k, v) in &self.effective {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out
    }
}
