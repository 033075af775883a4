use std::collections::HashMap;
use std::path::Path;

use super::ToneClass;
use crate::error::{Error, Result};

const BUILTIN: &str = include_str!("../../data/phonology.tsv");

/// Character → rhyme group and ping/ze class. Characters missing from the
/// table are "unknown" to every check; lookups never fail.
///
/// File format: UTF-8, one record per line, tab- or space-separated
/// `character  rhyme-group  tone` where tone is `ping`, `ze` or `unknown`
/// and a rhyme group of `-` means unknown. `#` starts a comment line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhonologyTable {
    rhyme: HashMap<char, String>,
    tone: HashMap<char, ToneClass>,
}

impl PhonologyTable {
    /// The shipped table: a coarse approximation from modern Mandarin
    /// readings (tones 1/2 → ping, 3/4 → ze, modern rhyme groups).
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("builtin phonology table parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = PhonologyTable::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| Error::Phonology { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [ch, group, tone] = fields[..] else {
                return Err(bad(format!("expected 3 fields, found {}", fields.len())));
            };
            let mut chars = ch.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(bad(format!("`{ch}` is not a single character")));
            };
            if group != "-" {
                table.rhyme.insert(c, group.to_string());
            }
            match tone {
                "ping" => {
                    table.tone.insert(c, ToneClass::Ping);
                }
                "ze" => {
                    table.tone.insert(c, ToneClass::Ze);
                }
                "unknown" => {}
                other => return Err(bad(format!("unknown tone class `{other}`"))),
            }
        }
        Ok(table)
    }

    pub fn insert(&mut self, c: char, group: Option<&str>, tone: Option<ToneClass>) {
        match group {
            Some(g) => self.rhyme.insert(c, g.to_string()),
            None => self.rhyme.remove(&c),
        };
        match tone {
            Some(t) => self.tone.insert(c, t),
            None => self.tone.remove(&c),
        };
    }

    pub fn rhyme_group(&self, c: char) -> Option<&str> {
        self.rhyme.get(&c).map(String::as_str)
    }

    pub fn tone(&self, c: char) -> Option<ToneClass> {
        self.tone.get(&c).copied()
    }

    pub fn len(&self) -> usize {
        self.rhyme.len().max(self.tone.len())
    }

    pub fn is_empty(&self) -> bool {
        self.rhyme.is_empty() && self.tone.is_empty()
    }
}
