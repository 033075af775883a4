use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{markers_for, MARKERS};
use crate::error::{Error, Result};
use crate::validator::{FormClass, FormSpec, LineRule, Template, TonePattern};

const BUILTIN: &str = include_str!("../../data/catalog.toml");
const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    version: u32,
    #[serde(default)]
    form: Vec<RawForm>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawForm {
    id: String,
    #[serde(default)]
    aliases: Vec<String>,
    class: FormClass,
    #[serde(default)]
    templates: Vec<String>,
    line_length: Option<usize>,
    rhyme: Option<Vec<usize>>,
    #[serde(default)]
    pairing: Vec<[usize; 2]>,
    acrostic_stride: Option<usize>,
    #[serde(default)]
    tone: Vec<String>,
}

impl RawForm {
    fn into_spec(self) -> Result<FormSpec> {
        let err = |m: &str| Error::Catalog(format!("form `{}`: {m}", self.id));
        let lines = match self.class {
            FormClass::Couplet => {
                if !self.templates.is_empty() || self.line_length.is_some() {
                    return Err(err("couplets take no templates or line_length"));
                }
                LineRule::MirrorTheme
            }
            FormClass::Gushi => {
                if !self.templates.is_empty() {
                    return Err(err("gushi takes line_length, not templates"));
                }
                LineRule::Uniform {
                    length: self.line_length.ok_or_else(|| err("gushi needs line_length"))?,
                }
            }
            FormClass::Jintishi | FormClass::Ci => {
                if self.line_length.is_some() {
                    return Err(err("line_length only applies to gushi"));
                }
                if self.templates.is_empty() {
                    return Err(err("missing templates"));
                }
                LineRule::Templates(
                    self.templates
                        .iter()
                        .map(|t| Template::parse(t))
                        .collect::<Result<_>>()?,
                )
            }
        };
        let spec = FormSpec {
            form_id: self.id.clone(),
            aliases: self.aliases.clone(),
            class: self.class,
            lines,
            rhyme_slots: self.rhyme.clone(),
            tone_patterns: self
                .tone
                .iter()
                .map(|t| TonePattern::parse(t))
                .collect::<Result<_>>()?,
            pairing_slots: self.pairing.iter().map(|[a, b]| (*a, *b)).collect(),
            acrostic_stride: self.acrostic_stride.unwrap_or(1),
        };
        spec.check_consistency()?;
        Ok(spec)
    }
}

/// Form specs keyed by canonical id, with alias lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct FormCatalog {
    entries: BTreeMap<String, FormSpec>,
    aliases: BTreeMap<String, String>,
}

impl FormCatalog {
    /// The catalog shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN).expect("builtin catalog parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawCatalog = toml::from_str(text).map_err(|e| Error::Catalog(e.to_string()))?;
        if raw.version != SCHEMA_VERSION {
            return Err(Error::Catalog(format!(
                "unsupported catalog version {} (expected {SCHEMA_VERSION})",
                raw.version
            )));
        }
        let mut catalog = FormCatalog {
            entries: BTreeMap::new(),
            aliases: BTreeMap::new(),
        };
        for form in raw.form {
            catalog.insert(form.into_spec()?)?;
        }
        Ok(catalog)
    }

    pub fn insert(&mut self, spec: FormSpec) -> Result<()> {
        let names = std::iter::once(&spec.form_id).chain(&spec.aliases);
        for name in names {
            if name.is_empty() || MARKERS.iter().any(|m| name.contains(m)) {
                return Err(Error::Catalog(format!("invalid form name `{name}`")));
            }
            if self.resolve(name).is_some() {
                return Err(Error::Catalog(format!("duplicate form name `{name}`")));
            }
        }
        for alias in &spec.aliases {
            self.aliases.insert(alias.clone(), spec.form_id.clone());
        }
        self.entries.insert(spec.form_id.clone(), spec);
        Ok(())
    }

    /// Looks a form up by canonical id or alias.
    pub fn resolve(&self, name: &str) -> Option<&FormSpec> {
        self.entries
            .get(name)
            .or_else(|| self.aliases.get(name).and_then(|id| self.entries.get(id)))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.resolve(name).is_some()
    }

    /// Canonical ids in sorted order.
    pub fn form_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn specs(&self) -> impl Iterator<Item = &FormSpec> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Identifier marker pair for every form class, plus the acrostic pair
    /// under the `None` key.
    pub fn identifier_tokens(&self) -> BTreeMap<Option<FormClass>, (&'static str, &'static str)> {
        let classes = [
            FormClass::Couplet,
            FormClass::Gushi,
            FormClass::Jintishi,
            FormClass::Ci,
        ];
        classes
            .into_iter()
            .map(|c| (Some(c), markers_for(c, false)))
            .chain(std::iter::once((None, markers_for(FormClass::Jintishi, true))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_resolves_aliases() {
        let c = FormCatalog::builtin();
        assert_eq!(c.resolve("五言绝句").unwrap().form_id, "五绝");
        assert_eq!(c.resolve("七律").unwrap().acrostic_stride, 2);
        assert_eq!(c.resolve("对联").unwrap().lines, LineRule::MirrorTheme);
        assert!(c.resolve("无此调").is_none());
        assert!(c.len() >= 17);
    }

    #[test]
    fn builtin_jintishi_sizes() {
        let c = FormCatalog::builtin();
        for (id, chars) in [("五绝", 20), ("七绝", 28), ("五律", 40), ("七律", 56)] {
            let LineRule::Templates(ts) = &c.resolve(id).unwrap().lines else {
                panic!("{id} has templates");
            };
            assert_eq!(ts[0].total_chars(), chars, "{id}");
        }
    }

    #[test]
    fn identifier_tokens_cover_all_markers() {
        let c = FormCatalog::builtin();
        let toks = c.identifier_tokens();
        assert_eq!(toks[&Some(FormClass::Ci)], ("(词牌名)", "(标题)"));
        assert_eq!(toks[&Some(FormClass::Couplet)], ("(格式)", "(对联)"));
        assert_eq!(toks[&None], ("(格式)", "(藏头诗)"));
        for m in MARKERS {
            assert!(toks.values().any(|(a, b)| *a == m || *b == m), "{m}");
        }
    }

    #[test]
    fn rejects_bad_catalogs() {
        assert!(FormCatalog::from_toml_str("version = 2").is_err());
        let dup = r#"
version = 1
[[form]]
id = "a"
class = "couplet"
[[form]]
id = "b"
aliases = ["a"]
class = "couplet"
"#;
        assert!(FormCatalog::from_toml_str(dup).is_err());
        let tone_mismatch = r#"
version = 1
[[form]]
id = "x"
class = "jintishi"
templates = ["5，5。"]
tone = ["平平平/仄仄仄"]
"#;
        assert!(FormCatalog::from_toml_str(tone_mismatch).is_err());
        let bad_slot = r#"
version = 1
[[form]]
id = "x"
class = "ci"
templates = ["5，5。"]
pairing = [[0, 2]]
"#;
        assert!(FormCatalog::from_toml_str(bad_slot).is_err());
        let unknown_key = r#"
version = 1
[[form]]
id = "x"
class = "ci"
templates = ["5。"]
colour = "red"
"#;
        assert!(FormCatalog::from_toml_str(unknown_key).is_err());
    }
}
