//! Poems, the form catalog, and the flat `form (id1) theme (id2) body`
//! sequence format used for training and prompting.

mod catalog;
mod ingest;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use catalog::FormCatalog;
pub use ingest::{ingest_corpus, ingest_str, Diagnostic, IngestOptions, IngestOutcome, RawRecord};

use crate::error::{Error, Result};
use crate::validator::FormClass;

pub const MARKER_FORMAT: &str = "(格式)";
pub const MARKER_CIPAI: &str = "(词牌名)";
pub const MARKER_TITLE: &str = "(标题)";
pub const MARKER_ACROSTIC: &str = "(藏头诗)";
pub const MARKER_COUPLET: &str = "(对联)";

/// Every identifier marker, in vocabulary order.
pub const MARKERS: [&str; 5] = [
    MARKER_FORMAT,
    MARKER_CIPAI,
    MARKER_TITLE,
    MARKER_ACROSTIC,
    MARKER_COUPLET,
];

const FIRST_MARKERS: [&str; 2] = [MARKER_FORMAT, MARKER_CIPAI];
const SECOND_MARKERS: [&str; 3] = [MARKER_TITLE, MARKER_ACROSTIC, MARKER_COUPLET];

pub const COUPLET_FORM: &str = "对联";

/// The marker pair separating form from theme and theme from body.
pub fn markers_for(class: FormClass, acrostic: bool) -> (&'static str, &'static str) {
    if acrostic {
        return (MARKER_FORMAT, MARKER_ACROSTIC);
    }
    match class {
        FormClass::Jintishi | FormClass::Gushi => (MARKER_FORMAT, MARKER_TITLE),
        FormClass::Ci => (MARKER_CIPAI, MARKER_TITLE),
        FormClass::Couplet => (MARKER_FORMAT, MARKER_COUPLET),
    }
}

fn find_marker(s: &str) -> Option<&'static str> {
    MARKERS.into_iter().find(|m| s.contains(m))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Punct {
    Comma,
    Period,
    None,
}

impl Punct {
    pub fn as_str(self) -> Option<&'static str> {
        match self {
            Punct::Comma => Some("，"),
            Punct::Period => Some("。"),
            Punct::None => None,
        }
    }

    /// Maps body punctuation onto the two kept marks; `None` for anything
    /// that is not punctuation we know how to normalize.
    pub fn normalize(c: char) -> Option<Punct> {
        match c {
            '，' | '、' | ',' => Some(Punct::Comma),
            '。' | '？' | '！' | '?' | '!' => Some(Punct::Period),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Line {
    pub chars: Vec<char>,
    pub punct: Punct,
}

impl Line {
    pub fn new(text: &str, punct: Punct) -> Result<Self> {
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return Err(Error::InvalidPoem("empty line".into()));
        }
        if let Some(c) = chars.iter().find(|c| !is_body_char(**c)) {
            return Err(Error::InvalidPoem(format!("line `{text}` contains `{c}`")));
        }
        Ok(Line { chars, punct })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }
}

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.chars {
            write!(f, "{c}")?;
        }
        if let Some(p) = self.punct.as_str() {
            f.write_str(p)?;
        }
        Ok(())
    }
}

pub(crate) fn is_body_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits a body string into lines on terminal punctuation. Whitespace is
/// dropped; `、` `？` `！` are normalized to `，` / `。`.
pub fn parse_body(body: &str) -> Result<Vec<Line>> {
    let mut lines = Vec::new();
    let mut current = Vec::new();
    for c in body.chars() {
        if c.is_whitespace() {
            continue;
        }
        if let Some(p) = Punct::normalize(c) {
            if current.is_empty() {
                return Err(Error::InvalidPoem(format!(
                    "empty line before `{c}` in `{body}`"
                )));
            }
            lines.push(Line {
                chars: std::mem::take(&mut current),
                punct: p,
            });
        } else if is_body_char(c) {
            current.push(c);
        } else {
            return Err(Error::InvalidPoem(format!(
                "unsupported character `{c}` in `{body}`"
            )));
        }
    }
    if !current.is_empty() {
        lines.push(Line {
            chars: current,
            punct: Punct::None,
        });
    }
    Ok(lines)
}

/// Normalizes free text (themes, couplet first lines) with the same
/// punctuation mapping as bodies, keeping the characters otherwise intact.
pub fn normalize_text(text: &str) -> String {
    text.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| Punct::normalize(c).and_then(Punct::as_str).map_or(c, |s| s.chars().next().unwrap()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Poem {
    pub form_id: String,
    pub theme: String,
    pub body: Vec<Line>,
    pub source_id: Option<String>,
    /// Theme holds the line-initial characters; serialized with the
    /// acrostic marker pair.
    pub acrostic: bool,
}

impl Poem {
    pub fn new(form_id: impl Into<String>, theme: impl Into<String>, body: &str) -> Result<Self> {
        let poem = Poem {
            form_id: form_id.into(),
            theme: normalize_text(&theme.into()),
            body: parse_body(body)?,
            source_id: None,
            acrostic: false,
        };
        poem.check()?;
        Ok(poem)
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.body.is_empty() {
            return Err(Error::InvalidPoem("empty body".into()));
        }
        if self.body.iter().any(Line::is_empty) {
            return Err(Error::InvalidPoem("empty line in body".into()));
        }
        for (what, s) in [("form", &self.form_id), ("theme", &self.theme)] {
            if let Some(m) = find_marker(s) {
                return Err(Error::InvalidPoem(format!("{what} `{s}` contains marker {m}")));
            }
        }
        if self.form_id.is_empty() {
            return Err(Error::InvalidPoem("empty form".into()));
        }
        Ok(())
    }

    pub fn body_text(&self) -> String {
        self.body.iter().map(ToString::to_string).collect()
    }

    pub fn char_count(&self) -> usize {
        self.body.iter().map(Line::len).sum()
    }
}

/// Which field of a serialized sample a span covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Form,
    Id1,
    Theme,
    Id2,
    Body,
}

/// Flat training text plus the character ranges of its five fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedSample {
    pub text: String,
    /// Character (not byte) offsets, in field order.
    pub field_spans: [(Field, Range<usize>); 5],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl SerializedSample {
    pub fn span(&self, field: Field) -> Range<usize> {
        self.field_spans
            .iter()
            .find(|(f, _)| *f == field)
            .map(|(_, r)| r.clone())
            .expect("all five fields present")
    }

    pub fn field_text(&self, field: Field) -> String {
        let r = self.span(field);
        self.text.chars().skip(r.start).take(r.len()).collect()
    }

    /// Number of model tokens the sample occupies, counting each marker as
    /// one token and excluding BOS/EOS.
    pub fn token_len(&self) -> usize {
        self.text.chars().count() - self.span(Field::Id1).len() - self.span(Field::Id2).len() + 2
    }
}

pub fn serialize(poem: &Poem, catalog: &FormCatalog) -> Result<SerializedSample> {
    poem.check()?;
    let spec = catalog
        .resolve(&poem.form_id)
        .ok_or_else(|| Error::UnknownForm(poem.form_id.clone()))?;
    let (id1, id2) = markers_for(spec.class, poem.acrostic);
    let body = poem.body_text();
    let parts = [
        (Field::Form, poem.form_id.as_str()),
        (Field::Id1, id1),
        (Field::Theme, poem.theme.as_str()),
        (Field::Id2, id2),
        (Field::Body, body.as_str()),
    ];
    let mut text = String::new();
    let mut at = 0;
    let spans = parts.map(|(field, s)| {
        text.push_str(s);
        let n = s.chars().count();
        let span = (field, at..at + n);
        at += n;
        span
    });
    Ok(SerializedSample {
        text,
        field_spans: spans,
        source_id: poem.source_id.clone(),
    })
}

/// Inverse of [`serialize`]: splits on the two identifier markers and
/// re-parses the body into lines.
pub fn deserialize(text: &str, catalog: &FormCatalog) -> Result<Poem> {
    let mut found: Vec<(usize, &'static str)> = MARKERS
        .iter()
        .flat_map(|m| text.match_indices(m).map(|(i, _)| (i, *m)))
        .collect();
    found.sort();
    let firsts: Vec<_> = found.iter().filter(|(_, m)| FIRST_MARKERS.contains(m)).collect();
    let seconds: Vec<_> = found.iter().filter(|(_, m)| SECOND_MARKERS.contains(m)).collect();
    let (&(i1, m1), &(i2, m2)) = match (firsts.as_slice(), seconds.as_slice()) {
        ([a], [b]) => (*a, *b),
        ([], _) => return Err(Error::Malformed("missing form/theme marker".into())),
        (_, []) => return Err(Error::Malformed("missing theme/body marker".into())),
        _ => return Err(Error::Malformed("duplicated marker".into())),
    };
    if i2 < i1 + m1.len() {
        return Err(Error::Malformed("markers out of order".into()));
    }
    let form = &text[..i1];
    let theme = &text[i1 + m1.len()..i2];
    let body = &text[i2 + m2.len()..];
    let spec = catalog
        .resolve(form)
        .ok_or_else(|| Error::UnknownForm(form.to_string()))?;
    let acrostic = m2 == MARKER_ACROSTIC;
    if markers_for(spec.class, acrostic) != (m1, m2) {
        return Err(Error::Malformed(format!(
            "markers {m1}{m2} do not belong to form `{form}`"
        )));
    }
    let lines = parse_body(body)?;
    if lines.is_empty() {
        return Err(Error::Malformed("empty body".into()));
    }
    let poem = Poem {
        form_id: form.to_string(),
        theme: theme.to_string(),
        body: lines,
        source_id: None,
        acrostic,
    };
    poem.check()?;
    Ok(poem)
}

/// A couplet becomes a poem whose theme is the first line and whose body is
/// the second.
pub fn couplet_transform(first_line: &str, second_line: &str) -> Result<Poem> {
    let first = normalize_text(first_line);
    if first.is_empty() || second_line.trim().is_empty() {
        return Err(Error::InvalidPoem("couplet line is empty".into()));
    }
    let poem = Poem {
        form_id: COUPLET_FORM.to_string(),
        theme: first,
        body: parse_body(second_line)?,
        source_id: None,
        acrostic: false,
    };
    poem.check()?;
    Ok(poem)
}

/// Characters at the head of every `stride`-th line.
pub fn acrostic_heads(body: &[Line], stride: usize) -> Result<String> {
    let stride = stride.max(1);
    body.iter()
        .step_by(stride)
        .map(|l| {
            l.chars
                .first()
                .copied()
                .ok_or_else(|| Error::InvalidPoem("empty line".into()))
        })
        .collect()
}

/// Replaces the theme with the line-initial characters and switches the
/// poem to the acrostic marker pair.
pub fn acrostic_transform(poem: &Poem, catalog: &FormCatalog) -> Result<Poem> {
    if poem.body.is_empty() {
        return Err(Error::InvalidPoem("empty body".into()));
    }
    let spec = catalog
        .resolve(&poem.form_id)
        .ok_or_else(|| Error::UnknownForm(poem.form_id.clone()))?;
    let theme = acrostic_heads(&poem.body, spec.acrostic_stride)?;
    Ok(Poem {
        theme,
        acrostic: true,
        ..poem.clone()
    })
}
