use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{couplet_transform, parse_body, serialize, FormCatalog, Poem, COUPLET_FORM};
use crate::error::{Error, Result};

/// One line of a corpus file. Poems carry `form`/`theme`/`body`; couplets
/// carry `first`/`second` (and optionally `form: "对联"`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<String>,
}

impl RawRecord {
    pub fn into_poem(self, catalog: &FormCatalog) -> Result<Poem> {
        let poem = if self.first.is_some() || self.second.is_some() {
            if let Some(form) = self.form.as_deref().filter(|f| *f != COUPLET_FORM) {
                return Err(Error::InvalidPoem(format!(
                    "couplet record with form `{form}`"
                )));
            }
            let first = self.first.ok_or_else(|| missing("first"))?;
            let second = self.second.ok_or_else(|| missing("second"))?;
            couplet_transform(&first, &second)?
        } else {
            let form = self.form.ok_or_else(|| missing("form"))?;
            let theme = self.theme.ok_or_else(|| missing("theme"))?;
            let body = self.body.ok_or_else(|| missing("body"))?;
            let lines = parse_body(&body)?;
            let poem = Poem {
                form_id: form,
                theme: super::normalize_text(&theme),
                body: lines,
                source_id: None,
                acrostic: false,
            };
            poem.check()?;
            poem
        };
        if !catalog.contains(&poem.form_id) {
            return Err(Error::UnknownForm(poem.form_id));
        }
        Ok(Poem {
            source_id: self.id,
            ..poem
        })
    }
}

fn missing(field: &str) -> Error {
    Error::InvalidPoem(format!("missing field `{field}`"))
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Skip records whose serialized sequence (with BOS and EOS) would exceed
    /// this many tokens.
    pub max_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// 1-based line number in the corpus file.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub poems: Vec<Poem>,
    pub diagnostics: Vec<Diagnostic>,
    /// Non-blank lines seen; always `poems.len() + diagnostics.len()`.
    pub records: usize,
}

pub fn ingest_corpus(
    path: impl AsRef<Path>,
    catalog: &FormCatalog,
    opts: &IngestOptions,
) -> Result<IngestOutcome> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(ingest_str(&text, catalog, opts))
}

/// Parses line-delimited JSON records. Bad records become diagnostics; they
/// never abort the ingest.
pub fn ingest_str(text: &str, catalog: &FormCatalog, opts: &IngestOptions) -> IngestOutcome {
    let mut out = IngestOutcome::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.records += 1;
        let result = serde_json::from_str::<RawRecord>(line)
            .map_err(|e| Error::InvalidPoem(format!("bad JSON: {e}")))
            .and_then(|r| r.into_poem(catalog))
            .and_then(|p| check_length(p, catalog, opts));
        match result {
            Ok(p) => out.poems.push(p),
            Err(e) => out.diagnostics.push(Diagnostic {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    out
}

fn check_length(poem: Poem, catalog: &FormCatalog, opts: &IngestOptions) -> Result<Poem> {
    if let Some(max) = opts.max_tokens {
        let len = serialize(&poem, catalog)?.token_len() + 2;
        if len > max {
            return Err(Error::InvalidPoem(format!(
                "sequence of {len} tokens exceeds context of {max}"
            )));
        }
    }
    Ok(poem)
}
