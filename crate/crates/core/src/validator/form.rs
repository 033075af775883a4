use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Punct;
use crate::error::{Error, Result};

/// Broad family of a form. Decides which identifier markers a serialized
/// sample uses and which structural rules apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormClass {
    Couplet,
    Gushi,
    Jintishi,
    Ci,
}

impl fmt::Display for FormClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FormClass::Couplet => "couplet",
            FormClass::Gushi => "gushi",
            FormClass::Jintishi => "jintishi",
            FormClass::Ci => "ci",
        };
        f.write_str(s)
    }
}

/// One admissible line layout: per-line character count and terminal
/// punctuation, written compactly as e.g. `5，5。5，5。`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub slots: Vec<(usize, Punct)>,
}

impl Template {
    pub fn parse(s: &str) -> Result<Self> {
        let mut slots = Vec::new();
        let mut digits = String::new();
        for c in s.chars().filter(|c| !c.is_whitespace()) {
            if c.is_ascii_digit() {
                digits.push(c);
                continue;
            }
            let punct = match c {
                '，' => Punct::Comma,
                '。' => Punct::Period,
                '_' => Punct::None,
                other => {
                    return Err(Error::Catalog(format!(
                        "template `{s}`: unexpected character `{other}`"
                    )))
                }
            };
            let len: usize = digits
                .parse()
                .map_err(|_| Error::Catalog(format!("template `{s}`: missing length before `{c}`")))?;
            if len == 0 {
                return Err(Error::Catalog(format!("template `{s}`: zero-length line")));
            }
            slots.push((len, punct));
            digits.clear();
        }
        if !digits.is_empty() {
            return Err(Error::Catalog(format!(
                "template `{s}`: trailing length without punctuation"
            )));
        }
        if slots.is_empty() {
            return Err(Error::Catalog(format!("template `{s}` is empty")));
        }
        Ok(Template { slots })
    }

    pub fn line_count(&self) -> usize {
        self.slots.len()
    }

    pub fn total_chars(&self) -> usize {
        self.slots.iter().map(|(n, _)| n).sum()
    }

    /// Indices of lines closed by a period.
    pub fn period_lines(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, (_, p))| *p == Punct::Period)
            .map(|(i, _)| i)
            .collect()
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, p) in &self.slots {
            write!(f, "{n}{}", p.as_str().unwrap_or("_"))?;
        }
        Ok(())
    }
}

/// How line lengths are constrained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineRule {
    /// Any one of the listed templates must match exactly.
    Templates(Vec<Template>),
    /// Even number of lines, every line `length` characters.
    Uniform { length: usize },
    /// Body segments mirror the segments of the first line (the theme).
    MirrorTheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToneClass {
    Ping,
    Ze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToneSlot {
    Ping,
    Ze,
    Either,
}

impl ToneSlot {
    pub fn admits(self, tone: ToneClass) -> bool {
        match self {
            ToneSlot::Either => true,
            ToneSlot::Ping => tone == ToneClass::Ping,
            ToneSlot::Ze => tone == ToneClass::Ze,
        }
    }
}

/// Per-position ping/ze template, one row per line. Written as
/// `平仄中.../...` where `中` means either tone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TonePattern {
    pub lines: Vec<Vec<ToneSlot>>,
}

impl TonePattern {
    pub fn parse(s: &str) -> Result<Self> {
        let lines = s
            .split('/')
            .map(|row| {
                row.trim()
                    .chars()
                    .map(|c| match c {
                        '平' => Ok(ToneSlot::Ping),
                        '仄' => Ok(ToneSlot::Ze),
                        '中' => Ok(ToneSlot::Either),
                        other => Err(Error::Catalog(format!(
                            "tone pattern `{s}`: unexpected character `{other}`"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if lines.iter().any(|l| l.is_empty()) {
            return Err(Error::Catalog(format!("tone pattern `{s}` has an empty line")));
        }
        Ok(TonePattern { lines })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.lines.iter().map(Vec::len).collect()
    }
}

/// Executable structural template for one form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormSpec {
    pub form_id: String,
    pub aliases: Vec<String>,
    pub class: FormClass,
    pub lines: LineRule,
    /// Lines whose final characters must share a rhyme group. `None` means
    /// every line closed by a period.
    pub rhyme_slots: Option<Vec<usize>>,
    pub tone_patterns: Vec<TonePattern>,
    pub pairing_slots: Vec<(usize, usize)>,
    /// Distance between acrostic anchor lines: 1 puts a target character at
    /// the head of every line, 2 at the head of every couplet.
    pub acrostic_stride: usize,
}

impl FormSpec {
    /// Checks that the template, tone and slot declarations agree with each
    /// other.
    pub fn check_consistency(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Catalog(format!("form `{}`: {msg}", self.form_id)));
        if self.acrostic_stride == 0 {
            return err("acrostic_stride must be at least 1".into());
        }
        match &self.lines {
            LineRule::Templates(ts) => {
                if ts.is_empty() {
                    return err("no templates".into());
                }
                for tone in &self.tone_patterns {
                    let shape = tone.shape();
                    let fits = ts
                        .iter()
                        .any(|t| t.slots.iter().map(|(n, _)| *n).collect::<Vec<_>>() == shape);
                    if !fits {
                        return err(format!("tone pattern shape {shape:?} matches no template"));
                    }
                }
                let max_lines = ts.iter().map(Template::line_count).max().unwrap_or(0);
                let slots = self.rhyme_slots.iter().flatten().copied();
                let pairs = self.pairing_slots.iter().flat_map(|&(a, b)| [a, b]);
                if let Some(bad) = slots.chain(pairs).find(|&i| i >= max_lines) {
                    return err(format!("slot index {bad} beyond {max_lines} lines"));
                }
            }
            LineRule::Uniform { length } => {
                if *length == 0 {
                    return err("uniform line length must be positive".into());
                }
                if let Some(bad) = self
                    .tone_patterns
                    .iter()
                    .flat_map(|t| t.lines.iter())
                    .find(|l| l.len() != *length)
                {
                    return err(format!("tone line of {} slots, expected {length}", bad.len()));
                }
            }
            LineRule::MirrorTheme => {
                if !self.tone_patterns.is_empty() {
                    return err("mirror forms carry no tone template".into());
                }
            }
        }
        Ok(())
    }
}
