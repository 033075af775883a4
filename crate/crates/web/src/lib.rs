//! Browser bindings for the static demo page in `www/`.
//!
//! Each export takes plain strings and returns JSON, so the page needs no
//! generated type definitions. The `*_json` functions hold the logic and
//! are what the native tests call.

use std::sync::OnceLock;

use guti_core::corpus::{acrostic_transform, serialize, FormCatalog, Poem};
use guti_core::sampler::{candidate_distribution, SampleConfig};
use guti_core::validator::{validate, PhonologyTable, ValidateOptions};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn catalog() -> &'static FormCatalog {
    static CATALOG: OnceLock<FormCatalog> = OnceLock::new();
    CATALOG.get_or_init(FormCatalog::builtin)
}

fn table() -> &'static PhonologyTable {
    static TABLE: OnceLock<PhonologyTable> = OnceLock::new();
    TABLE.get_or_init(PhonologyTable::builtin)
}

fn poem(form: &str, theme: &str, body: &str) -> Result<Poem, String> {
    Poem::new(form, theme, body).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct FormInfo<'a> {
    id: &'a str,
    aliases: &'a [String],
    class: String,
    layout: String,
}

pub fn forms_json() -> String {
    let forms: Vec<FormInfo> = catalog()
        .specs()
        .map(|s| FormInfo {
            id: &s.form_id,
            aliases: &s.aliases,
            class: s.class.to_string(),
            layout: format!("{:?}", s.lines),
        })
        .collect();
    serde_json::to_string(&forms).expect("forms serialize")
}

/// Validation report; with `acrostic`, the theme is taken as the target
/// line heads.
pub fn validate_json(form: &str, theme: &str, body: &str, acrostic: bool) -> Result<String, String> {
    let mut p = poem(form, theme, body)?;
    p.acrostic = acrostic;
    let report = validate(&p, catalog(), table(), ValidateOptions::default()).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

/// The training sequence for a poem and for its acrostic variant.
pub fn serialize_json(form: &str, theme: &str, body: &str) -> Result<String, String> {
    let p = poem(form, theme, body)?;
    let plain = serialize(&p, catalog()).map_err(|e| e.to_string())?;
    let acrostic = acrostic_transform(&p, catalog())
        .and_then(|a| serialize(&a, catalog()))
        .map_err(|e| e.to_string())?;
    Ok(json!({
        "text": plain.text,
        "spans": plain.field_spans,
        "acrostic_text": acrostic.text,
        "acrostic_theme": acrostic.field_text(guti_core::corpus::Field::Theme),
    })
    .to_string())
}

/// Top-k candidates of a logit vector given as comma- or space-separated
/// numbers.
pub fn topk_json(logits: &str, k: usize, temperature: f64) -> Result<String, String> {
    let values = logits
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("`{s}` is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = SampleConfig {
        k,
        temperature,
        max_new_tokens: 1,
        seed: 0,
        forbid: Default::default(),
    };
    let dist = candidate_distribution(&values, &cfg).map_err(|e| e.to_string())?;
    let rows: Vec<_> = dist.iter().map(|(id, p)| json!({ "id": id, "p": p })).collect();
    Ok(serde_json::Value::from(rows).to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn forms() -> String {
    forms_json()
}

#[wasm_bindgen]
pub fn validate_poem(form: &str, theme: &str, body: &str, acrostic: bool) -> Result<String, JsValue> {
    js(validate_json(form, theme, body, acrostic))
}

#[wasm_bindgen]
pub fn serialize_poem(form: &str, theme: &str, body: &str) -> Result<String, JsValue> {
    js(serialize_json(form, theme, body))
}

#[wasm_bindgen]
pub fn topk_distribution(logits: &str, k: usize, temperature: f64) -> Result<String, JsValue> {
    js(topk_json(logits, k, temperature))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn lists_forms() {
        let forms = parse(&forms_json());
        assert!(forms.as_array().unwrap().iter().any(|f| f["id"] == "水调歌头"));
    }

    #[test]
    fn validates() {
        let body = "床前明月光，疑是地上霜。举头望明月，低头思故乡。";
        assert_eq!(parse(&validate_json("五绝", "静夜思", body, false).unwrap())["well_formed"], true);
        assert_eq!(parse(&validate_json("五绝", "床疑举低", body, true).unwrap())["well_formed"], true);
        assert_eq!(parse(&validate_json("五绝", "明月", body, true).unwrap())["well_formed"], false);
        assert!(validate_json("八股", "t", body, false).is_err());
        assert!(validate_json("五绝", "t", "", false).is_err());
    }

    #[test]
    fn serializes() {
        let v = parse(&serialize_json("五言绝句", "静夜思", "床前明月光，疑是地上霜。举头望明月，低头思故乡。").unwrap());
        assert_eq!(v["acrostic_theme"], "床疑举低");
        assert!(v["text"].as_str().unwrap().starts_with("五言绝句(格式)静夜思(标题)"));
    }

    #[test]
    fn top_k() {
        let v = parse(&topk_json("0.3, 1.2 -0.5 0.9", 2, 1.0).unwrap());
        let rows = v.as_array().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0]["id"], 1);
        assert_eq!(rows[1]["id"], 3);
        assert!(topk_json("1, x", 1, 1.0).is_err());
        assert!(topk_json("1, 2", 3, 1.0).is_err());
    }
}
