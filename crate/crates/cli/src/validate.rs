use std::path::PathBuf;

use clap::Args;
use guti_core::corpus::RawRecord;
use guti_core::validator::{validate, ValidateOptions};
use guti_core::Error;

use crate::fail::{user, CmdResult, Context};
use crate::store;
use crate::Common;

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// JSONL file of poems, same record format as `guti ingest`.
    pub poems: PathBuf,
    /// Report and skip records with forms missing from the catalog.
    #[arg(long)]
    pub skip_unknown: bool,
    /// Treat rhyme and tone failures as ill-formed.
    #[arg(long)]
    pub strict_phonology: bool,
}

pub fn run(args: &ValidateArgs, common: &Common) -> CmdResult {
    let catalog = store::catalog(common)?;
    let table = store::phonology(common)?;
    let text = std::fs::read_to_string(&args.poems).user_ctx(|| format!("reading {}", args.poems.display()))?;
    let opts = ValidateOptions {
        strict_phonology: args.strict_phonology,
    };
    let mut total = 0;
    let mut good = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{}:{}", args.poems.display(), i + 1);
        let record: RawRecord = serde_json::from_str(line).user_ctx(|| at.clone())?;
        let id = record.id.clone();
        let poem = match record.into_poem(&catalog) {
            Ok(p) => p,
            Err(Error::UnknownForm(form)) if args.skip_unknown => {
                eprintln!("{at}: skipped unknown form `{form}`");
                continue;
            }
            Err(Error::UnknownForm(form)) => {
                let forms: Vec<_> = catalog.form_ids().collect();
                return Err(user(format!("{at}: unknown form `{form}`; known forms: {}", forms.join(" "))));
            }
            Err(e) => return Err(user(format!("{at}: {e}"))),
        };
        let report = validate(&poem, &catalog, &table, opts)?;
        total += 1;
        good += report.well_formed as usize;
        if common.json {
            let record = serde_json::json!({ "line": i + 1, "id": id, "report": report });
            store::emit(&record.to_string());
            continue;
        }
        let name = id.unwrap_or_else(|| format!("line {}", i + 1));
        let verdict = if report.well_formed { "well-formed" } else { "ILL-FORMED" };
        store::emit(&format!("{name} [{}]: {verdict}", report.form_id));
        for r in report.failures() {
            let places: Vec<String> = r
                .positions
                .iter()
                .map(|p| match p.column {
                    Some(c) => format!("line {} col {}", p.line + 1, c + 1),
                    None => format!("line {}", p.line + 1),
                })
                .collect();
            let places = if places.is_empty() { String::new() } else { format!(" at {}", places.join(", ")) };
            store::emit(&format!("  {:?} {:?}{places}: {}", r.severity, r.rule, r.message));
        }
    }
    let rate = if total == 0 { "n/a".to_string() } else { format!("{:.3}", good as f64 / total as f64) };
    let summary = format!("well-formed {good}/{total} (rate {rate})");
    if common.json {
        eprintln!("{summary}");
    } else {
        store::emit(&summary);
    }
    Ok(())
}
