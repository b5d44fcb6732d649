//! Line-oriented key-value documents.
//!
//! ```text
//! # comment
//! top = level
//! [section name]
//! key = value
//! key = repeated keys keep their order
//! ```
//!
//! Used for configuration files, fitted-model files, and run reports.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Parse {
            row: 0,
            msg: format!("section [{}] lacks key {key:?}", self.name),
        })
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| Error::Parse {
            row: 0,
            msg: format!("[{}] {key} = {raw:?} is not valid", self.name),
        })
    }

    pub fn parse_list(&self, key: &str) -> Result<Vec<f64>> {
        parse_floats(self.require(key)?)
    }
}

pub fn parse_floats(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                row: 0,
                msg: format!("invalid number {s:?}"),
            })
        })
        .collect()
}

pub fn join_floats(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    /// The first section called `name`.
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn sections_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| s.name.starts_with(prefix))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Document::new();
        let mut current = Section::new("");
        for (row, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(Error::Parse {
                        row,
                        msg: format!("unterminated section header {line:?}"),
                    });
                };
                doc.sections.push(std::mem::replace(&mut current, Section::new(name.trim())));
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected key = value, got {line:?}"),
                });
            };
            current.set(k.trim(), v.trim());
        }
        doc.sections.push(current);
        doc.sections.retain(|s| !(s.name.is_empty() && s.entries.is_empty()));
        Ok(doc)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if !s.name.is_empty() {
                if i > 0 {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{}]", s.name);
            }
            for (k, v) in &s.entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}
